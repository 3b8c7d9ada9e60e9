"""Adversarial training loop and the measurements taken around it."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .attacks import AttackSpec, PerturbationModel, attack
from .data import Dataset, EpochRecord, RunLog, save_checkpoint, split_holdout
from .nets import Model, ModelSpec, build, penalizable_params
from .regularize import (PseudoLabeledPool, RegularizerSpec, cutout, mixup, one_hot, penalty,
                         pseudo_label, semisup_epoch)
from .schedules import ScheduleSpec, lr_at
from .streams import stream
from .tensor import Tape, backward, softmax_cross_entropy

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite training loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    model: ModelSpec
    schedule: ScheduleSpec
    pm: PerturbationModel = PerturbationModel()
    train_attack: Optional[AttackSpec] = AttackSpec()   # None means standard training
    eval_attack: Optional[AttackSpec] = AttackSpec(random_init=True)
    regularizer: RegularizerSpec = RegularizerSpec()
    weight_decay: float = 5e-4
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    val_holdout: int = 0
    eval_subsample: Optional[int] = None
    eval_batch_size: int = 256
    clamp: bool = True
    record_seconds: bool = False
    allow_stacked_l2: bool = False
    catastrophic_check: bool = False

    def validate(self) -> None:
        if self.epochs != self.schedule.total_epochs:
            raise ValueError(f"epochs ({self.epochs}) must equal schedule.total_epochs "
                             f"({self.schedule.total_epochs})")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.val_holdout < 0:
            raise ValueError("val_holdout must be >= 0")
        if self.eval_subsample is not None and self.eval_subsample < 1:
            raise ValueError("eval_subsample must be >= 1")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("need weight_decay >= 0 and 0 <= momentum < 1")
        if self.regularizer.kind == "l2" and self.weight_decay > 0 and not self.allow_stacked_l2:
            raise ValueError("l2 penalty and weight_decay would stack; set weight_decay to 0 "
                             "or allow_stacked_l2")
        if self.regularizer.kind == "cutout" and len(self.model.input_shape) != 3:
            raise ValueError("cutout needs image inputs (C, H, W)")


@dataclass
class TrainData:
    train: Dataset
    test: Dataset
    unlabeled: Optional[Dataset] = None


def sgd_step(model: Model, grads, velocity: dict, lr: float, momentum: float,
             weight_decay: float) -> None:
    """v <- mu*v + g (+ wd*w for weights); w <- w - lr*v, all in float32."""
    lr32, mu32, wd32 = np.float32(lr), np.float32(momentum), np.float32(weight_decay)
    for name, p in model.params.items():
        g = grads[p]
        if weight_decay and model.tags[name] == "weight":
            g = g + wd32 * p.data
        v = mu32 * velocity[name] + g
        velocity[name] = v
        p.data = p.data - lr32 * v


def _robust_wrong(model, x, y, pm, spec, rng, clamp):
    clean = np.argmax(model(x).data, axis=1) != y
    if spec is None or pm.eps == 0:
        return clean, clean
    res = attack(model, x, y, pm, spec, rng, clamp)
    return res.fooled | clean, clean


def evaluate(model: Model, split: Dataset, pm: PerturbationModel, eval_attack: Optional[AttackSpec],
             seed: int = 0, batch_size: int = 256, clamp: bool = True, key=()) -> tuple[float, float]:
    """(robust error, standard error) on ``split``.

    An example is a robust error when it is misclassified clean or at any
    iterate the adversary evaluated.
    """
    n = len(split)
    if n == 0:
        raise ValueError("cannot evaluate on an empty split")
    rob = std = 0
    for b, i in enumerate(range(0, n, batch_size)):
        x, y = split.inputs[i:i + batch_size], split.labels[i:i + batch_size]
        rw, cw = _robust_wrong(model, x, y, pm, eval_attack, stream(seed, "eval", *key, b), clamp)
        rob += int(rw.sum())
        std += int(cw.sum())
    return rob / n, std / n


def _eval_view(ds: Optional[Dataset], k: Optional[int], seed: int, name: str):
    if ds is None or k is None or k >= len(ds):
        return ds
    idx = np.sort(stream(seed, "eval-subsample", name).permutation(len(ds))[:k])
    return ds.subset(idx)


def _epoch_batches(config, train_set, pool, epoch):
    order_rng = stream(config.seed, "shuffle", epoch)
    if config.regularizer.kind == "semisup":
        if pool is None:
            raise ValueError("semisup training needs a pseudo-labeled pool")
        for li, pi in semisup_epoch(len(train_set), len(pool), config.batch_size,
                                    config.regularizer.labeled_fraction, order_rng):
            x = np.concatenate([train_set.inputs[li], pool.inputs[pi]])
            y = np.concatenate([train_set.labels[li], pool.labels[pi]])
            perm = order_rng.permutation(len(y))
            yield x[perm], y[perm]
        return
    order = order_rng.permutation(len(train_set))
    for i in range(0, len(order), config.batch_size):
        idx = order[i:i + config.batch_size]
        yield train_set.inputs[idx], train_set.labels[idx]


def train(config: TrainConfig, data: TrainData, checkpoint_dir, pool: Optional[PseudoLabeledPool] = None,
          on_epoch_end: Optional[Callable[[int, Model], None]] = None, config_digest: str = "") -> RunLog:
    """Minibatch SGD on the adversarial loss; one record and one checkpoint per epoch."""
    config.validate()
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    reg = config.regularizer
    model = build(config.model, stream(config.seed, "init"))
    train_set, val_set = data.train, None
    if config.val_holdout:
        train_set, val_set = split_holdout(data.train, config.val_holdout, config.seed)
    k = config.eval_subsample
    eval_sets = {"train": _eval_view(train_set, k, config.seed, "train"),
                 "test": _eval_view(data.test, k, config.seed, "test"),
                 "val": _eval_view(val_set, k, config.seed, "val")}
    params = model.parameters()
    weights = penalizable_params(model)
    velocity = {name: np.zeros_like(t.data) for name, t in model.params.items()}
    k_classes = config.model.num_classes
    runlog = RunLog(config_digest)

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = lr_at(config.schedule, epoch)
        loss_sum, seen = 0.0, 0
        for b, (xb, yb) in enumerate(_epoch_batches(config, train_set, pool, epoch)):
            aug = stream(config.seed, "augment", epoch, b)
            if reg.kind == "cutout":
                xb = cutout(xb, reg.patch_len, aug)
            elif reg.kind == "mixup":
                perm = aug.permutation(len(xb))
                oh = one_hot(yb, k_classes)
                xb, yb, _ = mixup(xb, xb[perm], oh, oh[perm], reg.mixup_alpha, aug)
            if config.train_attack is not None:
                res = attack(model, xb, yb, config.pm, config.train_attack,
                             stream(config.seed, "attack", epoch, b), config.clamp)
                xb = xb + res.delta
            with Tape() as tape:
                loss = softmax_cross_entropy(model(xb), yb)
                total = loss
                if reg.kind in ("l1", "l2"):
                    total = total + penalty(weights, reg.kind, reg.lam)
            value = float(total.data)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, b, value)
            grads = backward(tape, total, sources=params)
            sgd_step(model, grads, velocity, lr, config.momentum, config.weight_decay)
            loss_sum += float(loss.data) * len(xb)
            seen += len(xb)

        if config.catastrophic_check and config.train_attack is not None:
            xb, yb = next(_epoch_batches(config, train_set, pool, epoch))
            pgd_err, fgsm_err = catastrophic_errors(model, xb, yb, config.pm, config.train_attack,
                                                    config.eval_attack or AttackSpec(), config.seed)
            if pgd_err - fgsm_err > 0.4:
                log.warning("epoch %d: catastrophic overfitting suspected (pgd %.3f vs train attack %.3f)",
                            epoch, pgd_err, fgsm_err)

        ev = {}
        for name, ds in eval_sets.items():
            if ds is not None:
                ev[name] = evaluate(model, ds, config.pm, config.eval_attack, config.seed,
                                    config.eval_batch_size, config.clamp, key=(name, epoch))
        ckpt = save_checkpoint(model, checkpoint_dir / f"epoch_{epoch:03d}.arof", epoch,
                               config_digest, {"seed": config.seed, "epoch": epoch})
        rec = EpochRecord(
            epoch=epoch, lr=lr,
            train_robust_err=ev["train"][0], train_std_err=ev["train"][1],
            train_robust_loss=loss_sum / max(seen, 1),
            test_robust_err=ev["test"][0], test_std_err=ev["test"][1],
            val_robust_err=ev["val"][0] if "val" in ev else None,
            seconds=time.perf_counter() - t0 if config.record_seconds else 0.0,
        )
        runlog.append(rec, ckpt)
        log.info("epoch %d lr %.4g loss %.4f train rob %.4f test rob %.4f (%.1fs)", epoch, lr,
                 rec.train_robust_loss, rec.train_robust_err, rec.test_robust_err,
                 time.perf_counter() - t0)
        if on_epoch_end is not None:
            on_epoch_end(epoch, model)
    return runlog


def select_early_stop(runlog: RunLog):
    """Epoch with the lowest validation robust error (earliest on ties) and its checkpoint."""
    vals = runlog.column("val_robust_err")
    if not vals or any(v is None for v in vals):
        raise ValueError("run log has no validation robust error column")
    best = min(range(len(vals)), key=lambda i: (vals[i], i))
    return runlog.records[best].epoch, runlog.checkpoints[best]


@dataclass
class GapReport:
    metric: str
    final_mean: float
    final_std: float
    best: float
    best_epoch: int
    diff: float
    window: int = 5

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def gap_report(runlog: RunLog, metric: str = "test_robust_err", window: int = 5) -> GapReport:
    """Final error (mean/std over the last ``window`` epochs) against the best epoch."""
    if window < 1:
        raise ValueError("gap report window must be >= 1")
    if len(runlog) < window:
        raise ValueError(f"gap report needs at least {window} epochs, log has {len(runlog)}")
    vals = runlog.column(metric)
    if any(v is None for v in vals):
        raise ValueError(f"metric {metric!r} is missing from some records")
    tail = np.asarray(vals[-window:], dtype=np.float64)
    i = min(range(len(vals)), key=lambda j: (vals[j], j))
    final = float(tail.mean())
    return GapReport(metric, final, float(tail.std()), float(vals[i]),
                     runlog.records[i].epoch, final - float(vals[i]), window)


def catastrophic_errors(model, x, y, pm, fgsm_spec, pgd_spec, seed: int = 0, clamp: bool = True):
    """Training-batch robust error under the PGD and FGSM specs (same random stream)."""
    pgd, _ = _robust_wrong(model, x, y, pm, pgd_spec, stream(seed, "catastrophic"), clamp)
    fgsm, _ = _robust_wrong(model, x, y, pm, fgsm_spec, stream(seed, "catastrophic"), clamp)
    return float(pgd.mean()), float(fgsm.mean())


def detect_catastrophic(model, x, y, pm, fgsm_spec, pgd_spec, threshold: float = 0.4,
                        seed: int = 0, clamp: bool = True) -> bool:
    pgd, fgsm = catastrophic_errors(model, x, y, pm, fgsm_spec, pgd_spec, seed, clamp)
    return pgd - fgsm > threshold


def fit_pseudo_pool(config: TrainConfig, data: TrainData, workdir) -> PseudoLabeledPool:
    """Train a standard (non-robust) teacher and argmax-label ``data.unlabeled``."""
    if data.unlabeled is None:
        raise ValueError("semisup needs unlabeled inputs")
    teacher_cfg = replace(config, train_attack=None, regularizer=RegularizerSpec(), val_holdout=0)
    teacher = {}
    train(teacher_cfg, data, Path(workdir), on_epoch_end=lambda e, m: teacher.update(model=m))
    return pseudo_label(teacher["model"], data.unlabeled.inputs)


@dataclass
class SweepRow:
    value: float
    best: float
    final: float
    diff: float
    report: GapReport = field(repr=False, default=None)


def sweep_width(config: TrainConfig, widths: Sequence[int], data: TrainData, out_dir,
                metric: str = "test_robust_err") -> list[SweepRow]:
    """One run per width factor with shared seed and data."""
    if not widths:
        raise ValueError("need at least one width")
    rows = []
    for w in widths:
        cfg = replace(config, model=replace(config.model, width_factor=int(w)))
        runlog = train(cfg, data, Path(out_dir) / f"width_{w}")
        rep = gap_report(runlog, metric, min(5, len(runlog)))
        rows.append(SweepRow(w, rep.best, rep.final_mean, rep.diff, rep))
    return rows
