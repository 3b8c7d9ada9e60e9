"""Inner-maximisation adversaries: FGSM and PGD in l_inf and l_2 balls.

Perturbations are float32.  The float32 radius used for clipping is the
largest float32 not exceeding ``eps``, so ``|delta| <= eps`` holds in exact
arithmetic, not just up to rounding.

Every PGD run keeps, per example, the highest-loss perturbation among all
iterates it evaluated (the starting point included) and across restarts.  An
example also counts as *fooled* if any evaluated iterate was misclassified;
:func:`attack` returns that flag so robust error never undercounts.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .tensor import Tape, Tensor, backward, reduce_sum, softmax_cross_entropy


@dataclass(frozen=True)
class PerturbationModel:
    norm: str = "linf"
    eps: float = 8 / 255

    def __post_init__(self):
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"norm must be 'linf' or 'l2', got {self.norm!r}")
        if not self.eps >= 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "pgd"
    steps: int = 10
    step_size: float = 2 / 255
    random_init: bool = True
    restarts: int = 1

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd"):
            raise ValueError(f"kind must be 'fgsm' or 'pgd', got {self.kind!r}")
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("steps and restarts must be positive")
        if self.kind == "fgsm" and self.steps != 1:
            raise ValueError("fgsm takes exactly one step")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")

    def to_dict(self):
        return asdict(self)


def fgsm_spec(step_size: float = 7 / 255, random_init: bool = True) -> AttackSpec:
    return AttackSpec(kind="fgsm", steps=1, step_size=step_size, random_init=random_init)


def radius32(eps: float) -> np.float32:
    """Largest float32 that does not exceed ``eps``."""
    r = np.float32(eps)
    if float(r) > eps:
        r = np.nextafter(r, np.float32(0))
    return r


def _per_example_norm(delta: np.ndarray) -> np.ndarray:
    flat = delta.reshape(delta.shape[0], -1).astype(np.float64)
    return np.sqrt(np.einsum("ij,ij->i", flat, flat))


def _batched(delta):
    return delta if delta.ndim > 1 else delta[None]


def project(delta, pm: PerturbationModel) -> np.ndarray:
    """Project onto the ``pm`` ball; batched inputs are projected per example.

    Points already inside the ball are returned unchanged.
    """
    delta = np.asarray(delta, dtype=np.float32)
    if pm.norm == "linf":
        r = radius32(pm.eps)
        return np.clip(delta, -r, r)
    d = _batched(delta).copy()
    norms = _per_example_norm(d)
    outside = np.nonzero(norms > pm.eps)[0]
    if outside.size:
        factor = (pm.eps / norms[outside]).astype(np.float32)
        while True:
            shape = (-1,) + (1,) * (d.ndim - 1)
            scaled = d[outside] * factor.reshape(shape)
            over = _per_example_norm(scaled) > pm.eps
            if not over.any():
                break
            factor[over] = np.nextafter(factor[over], np.float32(0))
        d[outside] = scaled
    return d.reshape(delta.shape)


def random_init(shape, pm: PerturbationModel, rng: np.random.Generator) -> np.ndarray:
    """Uniform in the l_inf box, or uniform-in-ball for l_2 (leading axis = batch)."""
    shape = tuple(shape)
    if pm.eps == 0:
        return np.zeros(shape, dtype=np.float32)
    if pm.norm == "linf":
        d = rng.uniform(-pm.eps, pm.eps, size=shape).astype(np.float32)
        return project(d, pm)
    bshape = shape if len(shape) > 1 else (1,) + shape
    n, dim = bshape[0], int(np.prod(bshape[1:]))
    g = rng.standard_normal((n, dim))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    r = pm.eps * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    return project((g * r).astype(np.float32).reshape(shape), pm)


def clamp_to_range(delta: np.ndarray, x: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Shrink ``delta`` so that ``x + delta`` stays inside ``[lo, hi]``."""
    lower = np.float32(lo) - x
    upper = np.float32(hi) - x
    return np.minimum(np.maximum(delta, lower), upper)


def is_feasible(delta, x, pm: PerturbationModel, clamp: bool = True) -> bool:
    delta = np.asarray(delta, dtype=np.float32)
    if pm.norm == "linf":
        ok = float(np.abs(delta).max(initial=0.0)) <= pm.eps
    else:
        ok = bool(np.all(_per_example_norm(_batched(delta)) <= pm.eps))
    if clamp:
        xa = np.asarray(x, dtype=np.float32) + delta
        ok = ok and float(xa.min(initial=0.0)) >= 0.0 and float(xa.max(initial=1.0)) <= 1.0
    return ok


def _loss_grad(model, x, delta, y, want_grad):
    xa = Tensor(x + delta, requires_grad=want_grad)
    with Tape() as tape:
        logits = model(xa)
        losses = softmax_cross_entropy(logits, y, reduction="none")
        total = reduce_sum(losses)
    grad = backward(tape, total, sources=[xa])[xa] if want_grad else None
    return losses.data, logits.data, grad


def _wrong(logits, y):
    y = np.asarray(y)
    truth = y.argmax(axis=1) if y.ndim == 2 else y
    return logits.argmax(axis=1) != truth


def _ascent_step(delta, grad, pm, alpha):
    if pm.norm == "linf":
        return delta + alpha * np.sign(grad)
    norms = _per_example_norm(grad)
    step = np.zeros_like(delta)
    live = norms > 0
    shape = (-1,) + (1,) * (delta.ndim - 1)
    # zero-gradient examples keep their delta: the direction is undefined
    step[live] = grad[live] / norms[live].astype(np.float32).reshape(shape)
    return delta + alpha * step


@dataclass
class AttackResult:
    delta: np.ndarray
    loss: np.ndarray     # per-example loss at ``delta``
    fooled: np.ndarray   # misclassified at some evaluated iterate


def attack(model, x, y, pm: PerturbationModel, spec: AttackSpec, rng: np.random.Generator,
           clamp: bool = True, on_step: Optional[Callable[[np.ndarray], None]] = None) -> AttackResult:
    """Run ``spec`` against ``model`` on the batch ``(x, y)``.

    ``y`` holds class indices or label distributions (for mixup batches).
    ``on_step`` sees every iterate, including each restart's starting point.
    """
    x = np.ascontiguousarray(x, dtype=np.float32)
    n = x.shape[0]
    alpha = np.float32(spec.step_size)
    best_delta = np.zeros_like(x)
    best_loss = np.full(n, -np.inf, dtype=np.float32)
    fooled = np.zeros(n, dtype=bool)
    shape = (-1,) + (1,) * (x.ndim - 1)
    for _ in range(spec.restarts):
        delta = random_init(x.shape, pm, rng) if spec.random_init else np.zeros_like(x)
        if clamp:
            delta = clamp_to_range(delta, x)
        for t in range(spec.steps + 1):
            if on_step is not None:
                on_step(delta)
            losses, logits, grad = _loss_grad(model, x, delta, y, want_grad=t < spec.steps)
            better = losses > best_loss
            best_loss = np.where(better, losses, best_loss)
            best_delta = np.where(better.reshape(shape), delta, best_delta)
            fooled |= _wrong(logits, y)
            if t == spec.steps:
                break
            delta = project(_ascent_step(delta, grad, pm, alpha), pm)
            if clamp:
                delta = clamp_to_range(delta, x)
    return AttackResult(best_delta, best_loss, fooled)


def pgd_attack(model, x, y, pm, spec, rng, clamp=True, on_step=None) -> np.ndarray:
    if spec.kind != "pgd":
        raise ValueError("pgd_attack needs an AttackSpec with kind='pgd'")
    return attack(model, x, y, pm, spec, rng, clamp, on_step).delta


def fgsm_attack(model, x, y, pm, spec, rng, clamp=True, on_step=None) -> np.ndarray:
    if spec.kind != "fgsm":
        raise ValueError("fgsm_attack needs an AttackSpec with kind='fgsm'")
    return attack(model, x, y, pm, spec, rng, clamp, on_step).delta


def logistic_loss(margin):
    """log(1 + exp(-margin)), stable in float64."""
    return np.logaddexp(0.0, -np.asarray(margin, dtype=np.float64))


def linear_worstcase(w, b, x, y, pm: PerturbationModel):
    """Exact worst-case perturbation and loss for a binary linear scorer.

    Label ``y`` is +1 or -1 and the loss is logistic in the margin
    ``y * (w.(x + delta) + b)``.  Returns ``(delta_star, loss_star)`` in float64.
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y not in (1, -1):
        raise ValueError("y must be +1 or -1")
    if pm.norm == "linf":
        delta = -y * pm.eps * np.sign(w)
    else:
        nw = np.linalg.norm(w)
        delta = np.zeros_like(w) if nw == 0 else -y * pm.eps * w / nw
    loss = float(logistic_loss(y * (w @ (x + delta) + b)))
    return delta, loss
