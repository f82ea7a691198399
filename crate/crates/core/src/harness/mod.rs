//! Training pairs, the training loop, checkpoints and evaluation reports.

pub mod config;
pub mod evaluate;
pub mod pairs;
pub mod train;

pub use config::{Degradation, DegradationSpec, PhiSource, TrainingConfig};
pub use evaluate::{evaluate, evaluate_dir, expand, layer_study, EvalReport, EvalRow, LayerStudy};
pub use pairs::{make_pairs, Corpus, PairSampler};
pub use train::{train, Checkpoint};
