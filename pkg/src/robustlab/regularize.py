"""Parameter penalties, cutout, mixup and semi-supervised batch composition."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from math import ceil
from typing import Iterator, Optional, Sequence

import numpy as np

from .tensor import Tensor, abs_, add, reduce_sum, scale, square

KINDS = ("none", "l1", "l2", "cutout", "mixup", "semisup")
L1_GRID = (5e-6, 5e-5, 5e-4, 5e-3)
L2_GRID = (5e-4, 5e-3, 1e-2, 5e-2, 5e-1, 5.0)


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "none"
    lam: float = 0.0
    patch_len: int = 0
    mixup_alpha: float = 1.0
    labeled_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer {self.kind!r}; expected one of {KINDS}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.patch_len < 0:
            raise ValueError("patch_len must be >= 0")
        if not self.mixup_alpha > 0:
            raise ValueError("mixup_alpha must be > 0")
        if not 0 < self.labeled_fraction <= 1:
            raise ValueError("labeled_fraction must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)


def penalty(weights: Sequence[Tensor], kind: str, lam: float) -> Tensor:
    """``lam * sum|w|`` (l1) or ``lam * sum w**2`` (l2) over the given tensors."""
    if kind not in ("l1", "l2"):
        raise ValueError(f"penalty kind must be 'l1' or 'l2', got {kind!r}")
    elem = abs_ if kind == "l1" else square
    total = Tensor(np.zeros((), dtype=np.float32))
    for w in weights:
        total = add(total, reduce_sum(elem(w)))
    return scale(total, lam)


def sample_cutout_centers(n: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, [h, w], size=(n, 2))


def cutout(x: np.ndarray, patch_len: int, rng: np.random.Generator) -> np.ndarray:
    """Zero a ``patch_len`` square (all channels) around a random pixel per image.

    The square spans rows ``[cy - L//2, cy - L//2 + L)`` clipped to the image.
    """
    x = np.asarray(x, dtype=np.float32)
    if patch_len == 0:
        return x
    n, _, h, w = x.shape
    out = x.copy()
    half = patch_len // 2
    for i, (cy, cx) in enumerate(sample_cutout_centers(n, h, w, rng)):
        y0, x0 = max(cy - half, 0), max(cx - half, 0)
        y1, x1 = min(cy - half + patch_len, h), min(cx - half + patch_len, w)
        out[i, :, y0:y1, x0:x1] = 0.0
    return out


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.size, num_classes), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


def mixup(batch_a, batch_b, labels_a, labels_b, mixup_alpha: float,
          rng: np.random.Generator, lam: Optional[float] = None):
    """Convex combination of two batches with one Beta(alpha, alpha) weight.

    Labels are distributions (rows summing to one).  Returns
    ``(inputs, labels, lam)``.
    """
    if lam is None:
        lam = rng.beta(mixup_alpha, mixup_alpha)
    a = np.asarray(batch_a, dtype=np.float32)
    b = np.asarray(batch_b, dtype=np.float32)
    la = np.asarray(labels_a, dtype=np.float32)
    lb = np.asarray(labels_b, dtype=np.float32)
    l32, m32 = np.float32(lam), np.float32(1.0 - lam)
    # the clip only absorbs rounding so outputs stay inside the pair's hull
    x = np.clip(l32 * a + m32 * b, np.minimum(a, b), np.maximum(a, b))
    y = l32 * la + m32 * lb
    return x, y, float(lam)


@dataclass
class PseudoLabeledPool:
    inputs: np.ndarray
    labels: np.ndarray
    provenance: str = "pseudo"

    def __len__(self):
        return len(self.labels)


def pseudo_label(standard_model, inputs: np.ndarray, batch_size: int = 512) -> PseudoLabeledPool:
    from .nets import predict
    inputs = np.asarray(inputs, dtype=np.float32)
    return PseudoLabeledPool(inputs, predict(standard_model, inputs, batch_size).astype(np.int64))


def split_counts(batch_size: int, labeled_fraction: float) -> tuple[int, int]:
    n_lab = min(batch_size, ceil(labeled_fraction * batch_size))
    return n_lab, batch_size - n_lab


def compose_semisup_batch(labeled, pool: Optional[PseudoLabeledPool], batch_size: int,
                          rng: np.random.Generator, labeled_fraction: float = 0.5):
    """Draw one mixed batch: ``ceil(fraction * B)`` labeled rows, the rest pseudo-labeled.

    ``labeled`` is any object with ``inputs`` and ``labels``.  Returns
    ``(x, y, is_pseudo)`` shuffled together.
    """
    n_lab, n_pseudo = split_counts(batch_size, labeled_fraction)
    if n_pseudo and (pool is None or len(pool) == 0):
        raise ValueError("pseudo-labeled pool is empty but labeled_fraction < 1")
    li = rng.choice(len(labeled.labels), size=n_lab, replace=n_lab > len(labeled.labels))
    xs, ys = [labeled.inputs[li]], [labeled.labels[li]]
    if n_pseudo:
        pi = rng.choice(len(pool), size=n_pseudo, replace=n_pseudo > len(pool))
        xs.append(pool.inputs[pi])
        ys.append(pool.labels[pi])
    flag = np.r_[np.zeros(n_lab, dtype=bool), np.ones(n_pseudo, dtype=bool)]
    order = rng.permutation(batch_size)
    return np.concatenate(xs)[order], np.concatenate(ys)[order], flag[order]


def semisup_epoch(n_labeled: int, n_pool: int, batch_size: int, labeled_fraction: float,
                  rng: np.random.Generator) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Index pairs for one pass over the labeled set; the pool is cycled as needed."""
    n_lab, n_pseudo = split_counts(batch_size, labeled_fraction)
    if n_pseudo and n_pool == 0:
        raise ValueError("pseudo-labeled pool is empty but labeled_fraction < 1")
    lab_order = rng.permutation(n_labeled)
    pool_order = rng.permutation(n_pool) if n_pseudo else np.zeros(0, dtype=np.int64)
    cursor = 0
    for start in range(0, n_labeled, n_lab):
        li = lab_order[start:start + n_lab]
        want = n_pseudo if len(li) == n_lab else int(round(len(li) * n_pseudo / n_lab))
        pi = np.take(pool_order, np.arange(cursor, cursor + want), mode="wrap") if want else pool_order[:0]
        cursor += want
        yield li, pi
