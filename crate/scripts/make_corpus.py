#!/usr/bin/env python3
"""Build the desk-scale natural-image corpus under data/corpus/.

Sources are the sample photographs bundled with scikit-image, scikit-learn
and matplotlib. Each photo is cut into non-overlapping 96x96 tiles. Tiles
from the held-out photos go to test/, everything else to train/. Gray
photos are written as binary PGM, color photos as PNG.

Usage: python3 scripts/make_corpus.py [out_dir]
"""
import os
import sys

import numpy as np
from PIL import Image

TILE = 96
SITE = "/usr/local/lib/python3.10/dist-packages/"

TRAIN = [
    "skimage/data/astronaut.png",
    "skimage/data/coffee.png",
    "skimage/data/camera.png",
    "skimage/data/motorcycle_left.png",
    "skimage/data/motorcycle_right.png",
    "skimage/data/rocket.jpg",
    "skimage/data/ihc.png",
    "skimage/data/moon.png",
    "sklearn/datasets/images/china.jpg",
    "matplotlib/mpl-data/sample_data/grace_hopper.jpg",
]
TEST = [
    "skimage/data/chelsea.png",
    "skimage/data/coins.png",
    "sklearn/datasets/images/flower.jpg",
]


def tiles(arr):
    h, w = arr.shape[:2]
    oy = (h % TILE) // 2
    ox = (w % TILE) // 2
    for y in range(oy, h - TILE + 1, TILE):
        for x in range(ox, w - TILE + 1, TILE):
            yield arr[y : y + TILE, x : x + TILE]


def write(arr, path_stem):
    if arr.ndim == 2:
        h, w = arr.shape
        with open(path_stem + ".pgm", "wb") as f:
            f.write(b"P5\n%d %d\n255\n" % (w, h))
            f.write(arr.astype(np.uint8).tobytes())
    else:
        Image.fromarray(arr.astype(np.uint8), "RGB").save(path_stem + ".png")


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "data/corpus"
    for split, sources in (("train", TRAIN), ("test", TEST)):
        d = os.path.join(out, split)
        os.makedirs(d, exist_ok=True)
        n = 0
        for src in sources:
            im = Image.open(SITE + src)
            im = im.convert("L" if im.mode == "L" else "RGB")
            arr = np.asarray(im)
            name = os.path.splitext(os.path.basename(src))[0]
            for i, t in enumerate(tiles(arr)):
                write(t, os.path.join(d, "%s_%03d" % (name, i)))
                n += 1
        print(split, n)


if __name__ == "__main__":
    main()
