import math

import pytest

from s2rbench.calibration import calibrate, degradation, single_parameter_config, sweep_range
from s2rbench.errors import ConfigError
from s2rbench.evaluation import EvalProtocol, IkController

P = EvalProtocol(n_targets=4)


def test_degradation_metric():
    assert degradation(-150.0, -100.0, -400.0) == pytest.approx(-50.0 / 300.0)
    assert degradation(-100.0, -100.0, -400.0) == 0.0
    with pytest.raises(ConfigError):
        degradation(-1.0, -2.0, -2.0)


def test_sweep_ranges():
    assert sweep_range("L", 0) is None
    assert sweep_range("L", 3) == pytest.approx((0.0, 0.15))
    assert sweep_range("N", 2) == pytest.approx((0.0, 0.02))
    assert sweep_range("T", 1) == (95.0, 100.0)
    assert sweep_range("T", 25) == (1.0, 100.0)
    with pytest.raises(ConfigError):
        sweep_range("X", 1)
    cfg = single_parameter_config("T", (90.0, 100.0))
    assert cfg.active == {"T"} and cfg.damping_range == (90.0, 100.0)


@pytest.mark.parametrize("param", ["L", "N"])
def test_widest_range_is_maximal(param):
    res = calibrate(IkController(), param, P, tolerance=0.02, max_steps=30)
    assert res.points[0].range is None and res.points[0].passed
    passed = [p for p in res.points if p.passed]
    assert all(p.passed for p in res.points[:-1])
    if not res.exhausted:
        assert not res.points[-1].passed
        assert res.widest == res.points[-2].range
    for p in res.points[1:]:
        assert p.degradation == pytest.approx(degradation(p.mean_return, res.r_ideal, res.r_random))
    assert len(passed) >= 1


def test_torque_sweep_stops_at_floor():
    res = calibrate(IkController(), "T", P, tolerance=10.0, max_steps=100)
    assert res.exhausted and res.widest == (1.0, 100.0)
    assert len(res.points) == 1 + 20


def test_unknown_parameter():
    with pytest.raises(ConfigError):
        calibrate(IkController(), "Q", P)
