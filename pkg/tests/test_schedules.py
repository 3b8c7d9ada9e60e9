import math

import numpy as np
import pytest

from robustlab.schedules import ScheduleSpec, lr_at, piecewise, schedule_table, tuned_piecewise


def test_piecewise_default_rates():
    s = piecewise()
    assert (lr_at(s, 0), lr_at(s, 100), lr_at(s, 150)) == (0.1, 0.01, 0.001)


def test_piecewise_boundaries_right_continuous():
    s = piecewise()
    assert lr_at(s, 99) == 0.1 and lr_at(s, 149) == 0.01 and lr_at(s, 199) == 0.001


def test_piecewise_table_has_three_rates():
    assert sorted({r for _, r in schedule_table(piecewise())}) == [0.001, 0.01, 0.1]


def test_cyclic_peak_and_ends():
    s = ScheduleSpec("cyclic", 200, max_lr=0.2)
    assert lr_at(s, 80) == 0.2
    assert lr_at(s, 0) == 0.0
    assert lr_at(s, 199) == pytest.approx(0.2 / 120)


def test_cyclic_unimodal_with_one_breakpoint():
    for total in (10, 37, 60, 200):
        s = ScheduleSpec("cyclic", total)
        rates = [r for _, r in schedule_table(s)]
        peak = int(np.argmax(rates))
        assert peak == round(0.4 * total)
        assert all(a < b for a, b in zip(rates[:peak], rates[1:peak + 1]))
        assert all(a > b for a, b in zip(rates[peak:], rates[peak + 1:]))
        slopes = np.round(np.diff(rates), 12)
        assert len(set(slopes)) == 2


def test_cosine_midpoint_and_shape():
    s = ScheduleSpec("cosine", 200, start_lr=0.1)
    assert lr_at(s, 100) == pytest.approx(0.05, abs=1e-15)
    rates = [r for _, r in schedule_table(s)]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    for e, r in enumerate(rates):
        ref = np.float32(0.5 * 0.1 * (1 + math.cos(math.pi * e / 200)))
        assert abs(np.float32(r) - ref) <= np.spacing(ref)


def test_multiple_decay():
    s = ScheduleSpec("multiple_decay", 500, start_lr=0.1, decrement=0.01, period=50)
    assert lr_at(s, 250) == 0.05
    assert lr_at(s, 49) == 0.1 and lr_at(s, 50) == 0.09
    assert lr_at(s, 499) == 0.01


def test_linear_decay():
    s = ScheduleSpec("linear_decay", 200, start_lr=0.1, plateau_end=100, ramp_end=150, end_lr=0.01)
    assert lr_at(s, 125) == 0.055
    assert lr_at(s, 99) == 0.1 and lr_at(s, 150) == 0.01 and lr_at(s, 199) == 0.01


def test_tuned_piecewise_end_rate():
    s = tuned_piecewise(start_lr=0.1, end_lr=0.006, decay_epoch=100, total_epochs=200)
    assert lr_at(s, 99) == 0.1 and lr_at(s, 120) == 0.006


@pytest.mark.parametrize("family", ["piecewise", "multiple_decay", "linear_decay", "cyclic", "cosine"])
def test_no_negative_rates_and_full_coverage(family):
    total = 500 if family == "multiple_decay" else 200
    table = schedule_table(ScheduleSpec(family, total))
    assert [e for e, _ in table] == list(range(total))
    assert all(r >= 0 for _, r in table)


def test_out_of_range_epoch():
    s = piecewise()
    for e in (-1, 200):
        with pytest.raises(ValueError):
            lr_at(s, e)


def test_spec_validation():
    with pytest.raises(ValueError):
        ScheduleSpec("step")
    with pytest.raises(ValueError):
        ScheduleSpec("piecewise", milestones=(150, 100))
    with pytest.raises(ValueError):
        ScheduleSpec("multiple_decay", 600)
    with pytest.raises(ValueError):
        ScheduleSpec("cyclic", peak_fraction=1.0)
