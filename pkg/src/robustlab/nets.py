"""Small MLP/CNN classifiers whose hidden widths scale with a width factor.

Shape rule
----------
* ``mlp``: ``depth`` hidden layers of ``64 * width_factor`` units, ReLU, then a
  linear read-out.  ``depth = 0`` is a plain linear classifier.
* ``cnn``: ``depth`` conv stages (4x4 kernel, stride 2, padding 1, ReLU) with
  ``16 * 2**i * width_factor`` channels at stage ``i`` (16, 32, 64, ...), then a
  ``64 * width_factor`` hidden dense layer and the read-out.

Dense weights are stored ``fan_in x fan_out`` so a layer is ``x @ W + b``.
Weights are drawn from U(-sqrt(6/fan_in), +sqrt(6/fan_in)); biases start at 0.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import prod, sqrt
from typing import Optional

import numpy as np

from .tensor import Tensor, add, conv2d, conv_output_size, matmul, relu, reshape

BASE_WIDTH = 64
BASE_CHANNELS = 16
KERNEL, STRIDE, PAD = 4, 2, 1


@dataclass(frozen=True)
class ModelSpec:
    family: str = "mlp"
    width_factor: int = 1
    input_shape: tuple = (784,)
    num_classes: int = 10
    depth: int = 1

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.family not in ("mlp", "cnn"):
            raise ValueError(f"family must be 'mlp' or 'cnn', got {self.family!r}")
        if int(self.width_factor) != self.width_factor or self.width_factor < 1:
            raise ValueError(f"width_factor must be a positive integer, got {self.width_factor}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.depth < (1 if self.family == "cnn" else 0):
            raise ValueError(f"depth {self.depth} too small for family {self.family!r}")
        if any(s < 1 for s in self.input_shape) or not self.input_shape:
            raise ValueError(f"input_shape must have positive extents, got {self.input_shape}")
        if self.family == "cnn" and len(self.input_shape) != 3:
            raise ValueError("cnn input_shape must be (channels, height, width)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d


def param_shapes(spec: ModelSpec) -> list[tuple[str, str, tuple]]:
    """(name, tag, shape) for every parameter, in model order."""
    shapes = []
    hidden = BASE_WIDTH * spec.width_factor
    if spec.family == "mlp":
        fan_in = prod(spec.input_shape)
        for i in range(spec.depth):
            shapes += [(f"fc{i}.weight", "weight", (fan_in, hidden)),
                       (f"fc{i}.bias", "bias", (hidden,))]
            fan_in = hidden
    else:
        c, h, w = spec.input_shape
        for i in range(spec.depth):
            f = BASE_CHANNELS * 2 ** i * spec.width_factor
            shapes += [(f"conv{i}.weight", "weight", (f, c, KERNEL, KERNEL)),
                       (f"conv{i}.bias", "bias", (f,))]
            c = f
            h = conv_output_size(h, KERNEL, STRIDE, PAD)
            w = conv_output_size(w, KERNEL, STRIDE, PAD)
        shapes += [("fc0.weight", "weight", (c * h * w, hidden)),
                   ("fc0.bias", "bias", (hidden,))]
        fan_in = hidden
    shapes += [("out.weight", "weight", (fan_in, spec.num_classes)),
               ("out.bias", "bias", (spec.num_classes,))]
    return shapes


@dataclass
class Model:
    spec: ModelSpec
    params: dict = field(default_factory=dict)  # name -> Tensor, insertion-ordered
    tags: dict = field(default_factory=dict)    # name -> "weight" | "bias"

    def __call__(self, x) -> Tensor:
        return forward(self, x)

    def num_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state(self) -> dict:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, state: dict) -> None:
        for name, t in self.params.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: expected shape {t.shape}, got {arr.shape}")
            t.data = arr.copy()

    def copy(self) -> "Model":
        m = Model(self.spec, {}, dict(self.tags))
        for name, t in self.params.items():
            m.params[name] = Tensor(t.data.copy(), requires_grad=True, name=name)
        return m


def build(spec: ModelSpec, rng=0) -> Model:
    """Initialise a model; ``rng`` is a seed or a ``numpy.random.Generator``."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    model = Model(spec)
    for name, tag, shape in param_shapes(spec):
        if tag == "weight":
            fan_in = prod(shape[1:]) if len(shape) == 4 else shape[0]
            bound = sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        else:
            data = np.zeros(shape, dtype=np.float32)
        model.params[name] = Tensor(data, requires_grad=True, name=name)
        model.tags[name] = tag
    return model


def forward(model: Model, x) -> Tensor:
    spec = model.spec
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim < 2 or tuple(x.shape[1:]) != spec.input_shape:
        raise ValueError(f"expected input of shape (N, {', '.join(map(str, spec.input_shape))}), "
                         f"got {x.shape}")
    p = model.params
    n = x.shape[0]
    h = x
    if spec.family == "mlp":
        h = reshape(h, (n, -1)) if x.data.ndim > 2 else h
        for i in range(spec.depth):
            h = relu(add(matmul(h, p[f"fc{i}.weight"]), p[f"fc{i}.bias"]))
    else:
        for i in range(spec.depth):
            b = p[f"conv{i}.bias"]
            h = conv2d(h, p[f"conv{i}.weight"], stride=STRIDE, pad=PAD)
            h = relu(add(h, reshape(b, (b.shape[0], 1, 1))))
        h = reshape(h, (n, -1))
        h = relu(add(matmul(h, p["fc0.weight"]), p["fc0.bias"]))
    return add(matmul(h, p["out.weight"]), p["out.bias"])


def penalizable_params(model: Model) -> list[Tensor]:
    """Affine weights only; biases are never penalised."""
    return [t for name, t in model.params.items() if model.tags[name] == "weight"]


def predict(model: Model, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Argmax class for each row of ``x`` (no tape)."""
    out = []
    for i in range(0, len(x), batch_size):
        out.append(np.argmax(forward(model, x[i:i + batch_size]).data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def binary_linear(w, b: float = 0.0) -> Model:
    """Two-logit model [0, w.x + b], i.e. a logistic scorer for labels +-1.

    Class index 1 stands for label +1 and class 0 for label -1.
    """
    w = np.asarray(w, dtype=np.float32).reshape(-1)
    spec = ModelSpec(family="mlp", width_factor=1, input_shape=(w.size,), num_classes=2, depth=0)
    model = build(spec, 0)
    W = np.zeros((w.size, 2), dtype=np.float32)
    W[:, 1] = w
    model.params["out.weight"].data = W
    model.params["out.bias"].data = np.array([0.0, b], dtype=np.float32)
    return model
