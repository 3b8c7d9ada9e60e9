"""Datasets, checkpoints and learning-curve logs.

Checkpoint layout (``.arof``)::

    b"AROF1" | uint32 LE header length | UTF-8 JSON header | float32 LE body

The header holds ``epoch``, ``config_digest``, ``rng_state``, ``model_spec``,
a ``manifest`` of ``{name, tag, shape}`` entries and a ``checksum`` (CRC-32 of
the canonical header without the checksum, followed by the body); the body
stores each parameter in manifest order.
"""
from __future__ import annotations

import csv
import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from math import prod
from pathlib import Path
from typing import Optional

import numpy as np

from .nets import Model, ModelSpec, build
from .streams import stream

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
MAGIC = b"AROF1"


class FormatError(ValueError):
    """A file failed validation; ``offset`` points at the offending byte."""

    def __init__(self, msg: str, offset: Optional[int] = None):
        super().__init__(msg if offset is None else f"{msg} (byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: Optional[np.ndarray]
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.inputs):
                raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ValueError("inputs must lie in [0, 1]")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx, split: Optional[str] = None) -> "Dataset":
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.inputs[idx], labels, split or self.split)


# -- IDX --------------------------------------------------------------------

def _read_header(buf: bytes, magic: int, ndim: int, what: str):
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise FormatError(f"{what}: truncated header, need {need} bytes", len(buf))
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise FormatError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}", 0)
    dims = struct.unpack(f">{ndim}I", buf[4:need])
    return dims, need


def _idx_pixels(images_path):
    ib = Path(images_path).read_bytes()
    (n, h, w), off = _read_header(ib, IDX_IMAGES, 3, str(images_path))
    if n == 0:
        raise FormatError(f"{images_path}: no images", 4)
    expect = off + n * h * w
    if len(ib) < expect:
        raise FormatError(f"{images_path}: truncated payload, expected {expect} bytes", len(ib))
    pixels = np.frombuffer(ib, dtype=np.uint8, count=n * h * w, offset=off)
    return (pixels.astype(np.float32) / np.float32(255)).reshape(n, 1, h, w)


def load_idx_images(images_path, split: str = "unlabeled") -> Dataset:
    return Dataset(_idx_pixels(images_path), None, split)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair; pixels are scaled by 1/255."""
    x = _idx_pixels(images_path)
    n = len(x)
    lb = Path(labels_path).read_bytes()
    (m,), loff = _read_header(lb, IDX_LABELS, 1, str(labels_path))
    if m != n:
        raise FormatError(f"{labels_path}: {m} labels for {n} images", 4)
    if len(lb) < loff + m:
        raise FormatError(f"{labels_path}: truncated payload, expected {loff + m} bytes", len(lb))
    y = np.frombuffer(lb, dtype=np.uint8, count=m, offset=loff).astype(np.int64)
    return Dataset(x, y, split)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS, len(labels)) + labels.tobytes())


# -- synthetic --------------------------------------------------------------

def gen_synthetic(kind: str, n: int, d: int, margin: float, seed: int, split: str = "train") -> Dataset:
    """Oracle-friendly two-class data in ``[0, 1]^d``.

    ``two_gaussians``: unit-covariance blobs at ``+-margin * e1``.
    ``rings``: class 0 on radius 1, class 1 on radius ``1 + margin`` in the
    first two coordinates (radial noise sd 0.1), remaining coordinates N(0, 1).
    Raw points ``z`` are mapped by ``clip(0.5 + z / (2 * (margin + 4)), 0, 1)``,
    which keeps the sign of each coordinate about 0.5.  Class 0 gets
    ``ceil(n/2)`` examples.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = stream(seed, "synthetic", kind)
    y = np.r_[np.zeros((n + 1) // 2, dtype=np.int64), np.ones(n // 2, dtype=np.int64)]
    y = y[rng.permutation(n)]
    if kind == "two_gaussians":
        z = rng.standard_normal((n, d))
        z[:, 0] += np.where(y == 1, margin, -margin)
    elif kind == "rings":
        if d < 2:
            raise ValueError("rings needs d >= 2")
        z = rng.standard_normal((n, d))
        theta = rng.uniform(0, 2 * np.pi, n)
        r = 1.0 + margin * y + 0.1 * rng.standard_normal(n)
        z[:, 0], z[:, 1] = r * np.cos(theta), r * np.sin(theta)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    x = np.clip(0.5 + z / (2 * (margin + 4)), 0.0, 1.0)
    return Dataset(x.astype(np.float32), y, split)


def split_holdout(dataset: Dataset, count: int, seed: int):
    """Shuffle deterministically and move ``count`` examples into a validation split."""
    n = len(dataset)
    if not 0 <= count < n:
        raise ValueError(f"holdout count {count} must be in [0, {n})")
    order = stream(seed, "holdout").permutation(n)
    return dataset.subset(order[count:], "train"), dataset.subset(order[:count], "val")


# -- checkpoints ------------------------------------------------------------

def _manifest(model: Model):
    return [{"name": k, "tag": model.tags[k], "shape": list(t.shape)} for k, t in model.params.items()]


def checkpoint_bytes(model: Model, epoch: int = 0, config_digest: str = "", rng_state=None) -> bytes:
    header = {
        "epoch": int(epoch),
        "config_digest": config_digest,
        "rng_state": rng_state,
        "model_spec": model.spec.to_dict(),
        "manifest": _manifest(model),
    }
    body = b"".join(t.data.astype("<f4").tobytes() for t in model.params.values())
    header["checksum"] = _checksum(header, body)
    hb = _canonical(header)
    return MAGIC + struct.pack("<I", len(hb)) + hb + body


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _checksum(header: dict, body: bytes) -> str:
    rest = {k: v for k, v in header.items() if k != "checksum"}
    return f"{zlib.crc32(_canonical(rest) + body):08x}"


def save_checkpoint(model: Model, path, epoch: int = 0, config_digest: str = "", rng_state=None) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model, epoch, config_digest, rng_state))
    return path


def parse_checkpoint(buf: bytes, spec: Optional[ModelSpec] = None):
    """Decode checkpoint bytes into ``(model, header)``.

    When ``spec`` is given the manifest must match the parameters it implies.
    """
    if buf[:5] != MAGIC:
        raise FormatError("not an AROF1 checkpoint", 0)
    if len(buf) < 9:
        raise FormatError("truncated checkpoint header", len(buf))
    (hlen,) = struct.unpack("<I", buf[5:9])
    if len(buf) < 9 + hlen:
        raise FormatError("truncated checkpoint header", len(buf))
    raw = buf[9:9 + hlen]
    try:
        header = json.loads(raw.decode("utf-8"))
        if _canonical(header) != raw:
            raise ValueError("header is not in canonical form")
        saved_spec = ModelSpec(**header["model_spec"])
        manifest = header["manifest"]
        for e in manifest:
            if set(e) != {"name", "tag", "shape"}:
                raise ValueError(f"malformed manifest entry {e}")
            if any(not isinstance(s, int) or s < 0 for s in e["shape"]):
                raise ValueError(f"malformed shape in {e}")
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"corrupt checkpoint header: {e}", 9) from e
    target = spec or saved_spec
    model = build(target, 0)
    expected = _manifest(model)
    if manifest != expected:
        diffs = [f"{a['name']}: saved {a['shape']} vs model {b['shape']}"
                 for a, b in zip(manifest, expected) if a != b]
        if len(manifest) != len(expected):
            diffs.append(f"{len(manifest)} saved parameters vs {len(expected)} in model")
        raise FormatError("checkpoint manifest does not match model: " + "; ".join(diffs), 9)
    total = sum(prod(e["shape"]) for e in manifest)
    off = 9 + hlen
    if len(buf) != off + 4 * total:
        raise FormatError(f"checkpoint body has {len(buf) - off} bytes, expected {4 * total}", off)
    if header.get("checksum") != _checksum(header, buf[off:]):
        raise FormatError("checkpoint checksum mismatch", 9)
    for e in manifest:
        count = prod(e["shape"])
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off).astype(np.float32)
        model.params[e["name"]].data = arr.reshape(e["shape"])
        off += 4 * count
    return model, header


def load_checkpoint(path, spec: Optional[ModelSpec] = None):
    return parse_checkpoint(Path(path).read_bytes(), spec)


# -- run logs ---------------------------------------------------------------

COLUMNS = ("epoch", "lr", "train_robust_err", "train_std_err", "train_robust_loss",
           "test_robust_err", "test_std_err", "val_robust_err", "seconds")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_robust_err: float
    train_std_err: float
    train_robust_loss: float
    test_robust_err: float
    test_std_err: float
    val_robust_err: Optional[float] = None
    seconds: float = 0.0

    def __post_init__(self):
        for name in ("train_robust_err", "train_std_err", "test_robust_err", "test_std_err",
                     "val_robust_err"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not an error rate")


@dataclass
class RunLog:
    config_digest: str = ""
    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def append(self, rec: EpochRecord, checkpoint=None) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(rec)
        self.checkpoints.append(checkpoint)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def __len__(self):
        return len(self.records)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def runlog_csv_text(log: RunLog) -> str:
    buf = io.StringIO()
    buf.write(",".join(COLUMNS) + "\n")
    for r in log.records:
        buf.write(",".join(_fmt(getattr(r, c)) for c in COLUMNS) + "\n")
    return buf.getvalue()


def write_runlog_csv(log: RunLog, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        f.write(runlog_csv_text(log))
    return path


def read_runlog_csv(path) -> RunLog:
    log = RunLog()
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise FormatError(f"{path}: line 1: expected header {','.join(COLUMNS)}")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(COLUMNS):
            raise FormatError(f"{path}: line {lineno}: expected {len(COLUMNS)} fields, got {len(row)}")
        try:
            vals = {c: (None if v == "" else float(v)) for c, v in zip(COLUMNS, row)}
            vals["epoch"] = int(row[0])
            if vals["seconds"] is None:
                raise ValueError("seconds is empty")
            for c in COLUMNS[1:7]:
                if vals[c] is None:
                    raise ValueError(f"{c} is empty")
            log.append(EpochRecord(**vals))
        except (ValueError, TypeError) as e:
            raise FormatError(f"{path}: line {lineno}: {e}") from e
    return log
