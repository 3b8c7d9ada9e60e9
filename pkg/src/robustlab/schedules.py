"""Epoch-indexed learning-rate schedules.

A new rate takes effect *at* its decay epoch: the default piecewise schedule
gives 0.1 on [0, 100), 0.01 on [100, 150) and 0.001 on [150, 200).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

FAMILIES = ("piecewise", "multiple_decay", "linear_decay", "cyclic", "cosine")


def _clean(x: float) -> float:
    # strip binary noise from decimal-specified rates, e.g. 0.1 - 0.045
    return float(f"{x:.12g}")


@dataclass(frozen=True)
class ScheduleSpec:
    family: str = "piecewise"
    total_epochs: int = 200
    start_lr: float = 0.1
    # piecewise
    milestones: tuple = (100, 150)
    decay_factor: float = 10.0
    rates: Optional[tuple] = None  # explicit per-stage rates, overrides decay_factor
    # multiple_decay
    decrement: float = 0.01
    period: int = 50
    # linear_decay
    plateau_end: int = 100
    ramp_end: int = 150
    end_lr: float = 0.01
    # cyclic
    max_lr: float = 0.2
    peak_fraction: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.rates is not None:
            object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}; expected one of {FAMILIES}")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if self.family == "piecewise":
            if list(self.milestones) != sorted(self.milestones):
                raise ValueError("milestones must be increasing")
            if self.rates is not None and len(self.rates) != len(self.milestones) + 1:
                raise ValueError("piecewise rates need one entry per stage (len(milestones) + 1)")
            if self.rates is None and not self.decay_factor > 0:
                raise ValueError("decay_factor must be positive")
            if any(r <= 0 for r in self.stage_rates()):
                raise ValueError("piecewise rates must be positive")
        elif self.family == "multiple_decay":
            if self.period < 1:
                raise ValueError("period must be >= 1")
            last = self.start_lr - self.decrement * ((self.total_epochs - 1) // self.period)
            if _clean(last) <= 0:
                raise ValueError("multiple_decay reaches a non-positive rate")
        elif self.family == "linear_decay":
            if not 0 <= self.plateau_end < self.ramp_end <= self.total_epochs:
                raise ValueError("need 0 <= plateau_end < ramp_end <= total_epochs")
        elif self.family == "cyclic":
            if not 0 < self.peak_fraction < 1:
                raise ValueError("peak_fraction must lie in (0, 1)")

    def stage_rates(self) -> tuple:
        if self.rates is not None:
            return self.rates
        return tuple(_clean(self.start_lr / self.decay_factor ** k)
                     for k in range(len(self.milestones) + 1))

    def peak_epoch(self) -> int:
        return round(self.peak_fraction * self.total_epochs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["rates"] = None if self.rates is None else list(self.rates)
        return d


def piecewise(start_lr=0.1, milestones=(100, 150), decay_factor=10.0, total_epochs=200) -> ScheduleSpec:
    return ScheduleSpec("piecewise", total_epochs, start_lr, tuple(milestones), decay_factor)


def tuned_piecewise(start_lr=0.1, end_lr=0.01, decay_epoch=100, total_epochs=150) -> ScheduleSpec:
    """Single-decay piecewise schedule with free start rate, end rate and decay epoch."""
    return ScheduleSpec("piecewise", total_epochs, start_lr, (decay_epoch,),
                        rates=(start_lr, end_lr))


def lr_at(spec: ScheduleSpec, epoch: int) -> float:
    if not 0 <= epoch < spec.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {spec.total_epochs})")
    f = spec.family
    if f == "piecewise":
        stage = sum(1 for m in spec.milestones if epoch >= m)
        return spec.stage_rates()[stage]
    if f == "multiple_decay":
        return _clean(spec.start_lr - spec.decrement * (epoch // spec.period))
    if f == "linear_decay":
        if epoch < spec.plateau_end:
            return spec.start_lr
        if epoch >= spec.ramp_end:
            return spec.end_lr
        frac = (epoch - spec.plateau_end) / (spec.ramp_end - spec.plateau_end)
        return _clean(spec.start_lr + (spec.end_lr - spec.start_lr) * frac)
    if f == "cyclic":
        peak = spec.peak_epoch()
        if epoch <= peak:
            return spec.max_lr * epoch / peak
        return spec.max_lr * (spec.total_epochs - epoch) / (spec.total_epochs - peak)
    return 0.5 * spec.start_lr * (1.0 + math.cos(math.pi * epoch / spec.total_epochs))


def schedule_table(spec: ScheduleSpec) -> list[tuple[int, float]]:
    return [(e, lr_at(spec, e)) for e in range(spec.total_epochs)]
