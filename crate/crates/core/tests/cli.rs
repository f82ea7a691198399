use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepcompand::{load_image, save_image, Image};
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepcompand"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gradient_image(dir: &TempDir, name: &str, channels: usize) -> PathBuf {
    let (w, h) = (40, 24);
    let data = (0..w * h * channels).map(|i| ((i * 7) % 256) as u8).collect();
    let path = dir.path().join(name);
    save_image(&Image::new(w, h, channels, data).unwrap(), &path).unwrap();
    path
}

fn small_corpus(dir: &TempDir) -> PathBuf {
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    let source = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus/test");
    for name in ["chelsea_000.png", "coins_000.pgm", "flower_000.png"] {
        std::fs::copy(source.join(name), corpus.join(name)).unwrap();
    }
    corpus
}

#[test]
fn compress_then_hist_has_at_most_eight_levels() {
    let dir = TempDir::new().unwrap();
    let input = gradient_image(&dir, "in.png", 3);
    let out = dir.path().join("c.png");
    assert_eq!(code(&bin(&["compress", "--bits", "3", s(&input), s(&out)])), 0);
    let img = load_image(&out).unwrap();
    assert!(img.data().iter().all(|v| v % 32 == 0));
    let csv = dir.path().join("h.csv");
    let hist = bin(&["hist", s(&out), "--csv", s(&csv)]);
    assert_eq!(code(&hist), 0);
    let text = stdout(&hist);
    for line in text.lines().filter(|l| l.starts_with("channel")) {
        let bins: usize = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!(bins <= 8, "{line}");
    }
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 1);
}

#[test]
fn rescale_reaches_full_range() {
    let dir = TempDir::new().unwrap();
    let input = gradient_image(&dir, "in.pgm", 1);
    let (c, r) = (dir.path().join("c.pgm"), dir.path().join("r.pgm"));
    assert_eq!(code(&bin(&["compress", "--bits", "2", s(&input), s(&c)])), 0);
    assert_eq!(code(&bin(&["rescale", "--bits", "2", s(&c), s(&r)])), 0);
    let img = load_image(&r).unwrap();
    assert_eq!(img.data().iter().max(), Some(&255));
    assert_eq!(img.data().iter().min(), Some(&0));
}

#[test]
fn halftone_is_binary() {
    let dir = TempDir::new().unwrap();
    let input = gradient_image(&dir, "in.ppm", 3);
    let out = dir.path().join("h.png");
    assert_eq!(code(&bin(&["halftone", s(&input), s(&out)])), 0);
    assert!(load_image(&out).unwrap().data().iter().all(|&v| v == 0 || v == 255));
}

#[test]
fn usage_and_operational_errors() {
    assert_eq!(code(&bin(&[])), 2);
    assert_eq!(code(&bin(&["frobnicate"])), 2);
    assert_eq!(code(&bin(&["compress", "--bits", "x", "a", "b"])), 2);
    assert_eq!(code(&bin(&["--help"])), 0);

    let dir = TempDir::new().unwrap();
    let missing = bin(&["compress", "--bits", "3", "/nonexistent.png", s(&dir.path().join("o.png"))]);
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));

    let input = gradient_image(&dir, "in.png", 1);
    assert_eq!(code(&bin(&["compress", "--bits", "9", s(&input), s(&dir.path().join("o.png"))])), 1);

    let junk = dir.path().join("junk.nnwt");
    std::fs::write(&junk, b"not weights").unwrap();
    assert_eq!(code(&bin(&["expand", "--ckpt", s(&junk), s(&input), s(&dir.path().join("o.png"))])), 1);
}

#[test]
fn layer_gradient_check_passes() {
    let out = bin(&["gradcheck", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("all gradients agree"));
}

#[test]
fn train_eval_expand_round() {
    let dir = TempDir::new().unwrap();
    let corpus = small_corpus(&dir);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "preset = desk\nbatch_size = 2\n").unwrap();
    let ckpt = dir.path().join("m.nnwt");
    let trained = bin(&[
        "train", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&ckpt), "--iterations", "3",
    ]);
    assert_eq!(code(&trained), 0, "{}", String::from_utf8_lossy(&trained.stderr));
    assert!(stdout(&trained).starts_with("trained 3 iterations on 3 images"));
    assert!(ckpt.exists());
    assert!(dir.path().join("m.nnwt.txt").exists());

    let csv = dir.path().join("eval.csv");
    let eval = bin(&["eval", "--ckpt", s(&ckpt), "--corpus", s(&corpus), "--spec", "compand:3", "--csv", s(&csv)]);
    assert_eq!(code(&eval), 0);
    assert!(stdout(&eval).contains("Compressed"));
    let csv = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "filename,psnr_degraded,ssim_degraded,psnr_restored,ssim_restored");
    assert_eq!(lines.len(), 4);
    for row in &lines[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert!(fields[1..].iter().all(|f| f.parse::<f64>().unwrap().is_finite()));
    }

    let wrong_spec = bin(&["eval", "--ckpt", s(&ckpt), "--corpus", s(&corpus), "--spec", "halftone"]);
    assert_eq!(code(&wrong_spec), 1);

    let photo = corpus.join("chelsea_000.png");
    let restored = dir.path().join("x.png");
    assert_eq!(code(&bin(&["expand", "--ckpt", s(&ckpt), s(&photo), s(&restored)])), 0);
    let (a, b) = (load_image(&photo).unwrap(), load_image(&restored).unwrap());
    assert_eq!((a.width(), a.height(), a.channels()), (b.width(), b.height(), b.channels()));
    assert_eq!(code(&bin(&["inverse", "--ckpt", s(&ckpt), s(&photo), s(&restored)])), 1);

    let resumed = bin(&[
        "train", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&ckpt), "--iterations", "5", "--resume",
    ]);
    assert_eq!(code(&resumed), 0);
    assert!(stdout(&resumed).starts_with("trained 5 iterations"));

    std::fs::write(&cfg, "preset = desk\nbatch_size = 2\nlearning_rate = 0.5\n").unwrap();
    let mismatch = bin(&["train", "--config", s(&cfg), "--corpus", s(&corpus), "--out", s(&ckpt), "--resume"]);
    assert_eq!(code(&mismatch), 1);
}
