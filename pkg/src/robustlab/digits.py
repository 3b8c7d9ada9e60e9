"""Desk-scale IDX dataset built from scikit-learn's bundled 8x8 digits.

The 1797 source images are split once (70/30, stratified) so that train and
test never share a source digit.  Each output image is the source upscaled to
``size x size`` (cubic), shifted by up to ``size/8`` pixels, rotated by up to
10 degrees and lightly noised, then quantised to uint8.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_idx
from .streams import stream


def _render(src: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    from scipy import ndimage

    img = ndimage.zoom(src / 16.0, size / 8, order=3)
    img = ndimage.rotate(img, rng.uniform(-10, 10), reshape=False, order=1)
    shift = rng.uniform(-size / 8, size / 8, size=2)
    img = ndimage.shift(img, shift, order=1)
    img = img + rng.normal(0, 0.05, img.shape)
    return np.clip(np.round(np.clip(img, 0, 1) * 255), 0, 255).astype(np.uint8)


def make_digits(n_train: int, n_test: int, size: int = 16, seed: int = 0):
    from sklearn.datasets import load_digits

    digits = load_digits()
    rng = stream(seed, "digits")
    train_src, test_src = [], []
    for c in range(10):
        idx = rng.permutation(np.nonzero(digits.target == c)[0])
        cut = int(round(0.7 * len(idx)))
        train_src += list(idx[:cut])
        test_src += list(idx[cut:])
    out = {}
    for name, src, n in (("train", np.array(train_src), n_train), ("test", np.array(test_src), n_test)):
        pick = src[rng.integers(0, len(src), n)]
        imgs = np.stack([_render(digits.images[i], size, rng) for i in pick])
        out[name] = (imgs, digits.target[pick].astype(np.uint8))
    return out


def write_digits_idx(out_dir: Path, n_train: int = 5000, n_test: int = 1000, size: int = 16,
                     seed: int = 0) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, (imgs, labels) in make_digits(n_train, n_test, size, seed).items():
        ip, lp = out_dir / f"{name}-images-idx3-ubyte", out_dir / f"{name}-labels-idx1-ubyte"
        write_idx(imgs, labels, ip, lp)
        paths[f"{name}_images"], paths[f"{name}_labels"] = ip, lp
    return paths
