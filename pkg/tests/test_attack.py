import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rangeattack.attack import (
    PRESETS,
    AttackConfig,
    AttackError,
    TargetRange,
    attack,
    center_radius,
    in_range,
    in_range_reformulated,
    nearest_bound_distance,
    objective,
    project_delta,
    round_delta,
)
from rangeattack.tensor import Affine, Conv2d, ReLU, ShapeError
from rangeattack.victim import PreprocessSpec, VictimNetwork, forward, input_gradient

HEALTHY = PRESETS["make-healthy"]


def linear_victim(rng, shape=(3, 4, 4), scale=0.02, swap=True, f_target=None, X=None):
    """Single affine victim; if ``f_target`` is given the bias is set so f(X) = f_target."""
    n = int(np.prod(shape))
    w = rng.normal(size=(1, n)) * scale
    gm = float(rng.uniform(80, 170))
    net = VictimNetwork(shape, PreprocessSpec(gm, swap), (Affine(w, np.zeros(1)),))
    if f_target is not None:
        b = f_target - forward(net, X)
        net = VictimNetwork(shape, PreprocessSpec(gm, swap), (Affine(w, np.array([b])),))
    return net


def constant_victim(value, shape=(3, 4, 4)):
    n = int(np.prod(shape))
    return VictimNetwork(shape, PreprocessSpec(0.0, False), (Affine(np.zeros((1, n)), np.array([value])),))


# ---------------------------------------------------------------- ranges


def test_center_radius_presets():
    c, r = center_radius(HEALTHY)
    assert c == pytest.approx(21.8, abs=1e-12) and r == pytest.approx(3.1, abs=1e-12)
    assert center_radius(PRESETS["make-obese"]) == (35.0, 5.0)
    assert center_radius(TargetRange(-2.5, 2.5)) == (0.0, 2.5)


def test_exact_center_radius_reproduces_bounds():
    for target in list(PRESETS.values()) + [TargetRange(0.1, 0.7), TargetRange(-3.3, 1e-9)]:
        c, r = target.exact_center_radius()
        assert c - r == Fraction(target.lower)
        assert c + r == Fraction(target.upper)


@pytest.mark.parametrize("lo,hi", [(5.0, 5.0), (6.0, 5.0), (float("nan"), 1.0), (0.0, float("inf"))])
def test_degenerate_range_rejected(lo, hi):
    with pytest.raises(ValueError):
        TargetRange(lo, hi)


def test_parse_range():
    assert TargetRange.parse("18.7:24.9") == HEALTHY
    for bad in ("18.7", "a:b", "5:5", "1:2:3"):
        with pytest.raises(ValueError):
            TargetRange.parse(bad)


def test_in_range_closed_interval():
    assert in_range(HEALTHY.lower, HEALTHY)
    assert in_range(HEALTHY.upper, HEALTHY)
    assert in_range(HEALTHY.center, HEALTHY)
    assert not in_range(math.nextafter(HEALTHY.lower, 0), HEALTHY)
    assert not in_range(math.nextafter(HEALTHY.upper, 100), HEALTHY)


def test_reformulation_at_bounds():
    for target in PRESETS.values():
        for v in (target.lower, target.upper, math.nextafter(target.lower, -1e9), math.nextafter(target.upper, 1e9)):
            assert in_range(v, target) == in_range_reformulated(v, target)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_reformulation_equivalence(v, a, b):
    if a == b:
        return
    target = TargetRange(min(a, b), max(a, b))
    assert in_range(v, target) == in_range_reformulated(v, target)


def test_nearest_bound_distance():
    assert nearest_bound_distance(HEALTHY.center, HEALTHY) == 0
    assert nearest_bound_distance(HEALTHY.lower - 2, HEALTHY) == pytest.approx(2)
    assert nearest_bound_distance(HEALTHY.upper + 7.5, HEALTHY) == pytest.approx(7.5)


# ------------------------------------------------------------- objective


def test_objective_values():
    assert objective(21.8, 21.8) == (0.0, 0.0)
    assert objective(24.0, 21.0) == (9.0, 6.0)


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_objective_derivative_finite_difference(f, c):
    h = 1e-3
    # loss is quadratic, so the central difference is exact up to rounding
    fd = (objective(f + h, c)[0] - objective(f - h, c)[0]) / (2 * h)
    _, d = objective(f, c)
    assert abs(fd - d) <= 1e-8 * max(abs(d), 1.0)


# ------------------------------------------------------------ projection


def test_project_examples():
    X = np.array([0.0, 250.0, 100.0])
    assert project_delta(X, np.array([-5.0, 12.0, 3.0])).tolist() == [0.0, 5.0, 3.0]
    feasible = np.array([2.0, -250.0, 155.0])
    assert project_delta(X, feasible).tolist() == feasible.tolist()


@given(st.integers(0, 2**32 - 1))
def test_project_idempotent_and_in_box(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 256, size=(3, 4, 4)).astype(float)
    delta = rng.normal(scale=200, size=X.shape)
    p = project_delta(X, delta)
    assert np.array_equal(project_delta(X, p), p)
    assert np.all((X + p >= 0) & (X + p <= 255))


def test_project_shape_mismatch():
    with pytest.raises(ShapeError):
        project_delta(np.zeros(3), np.zeros(4))


# -------------------------------------------------------------- rounding


def test_round_examples():
    X = np.full(5, 100.0)
    assert round_delta(X, np.zeros(5)).tolist() == [0] * 5
    assert round_delta(X, np.array([1.4, 1.5, -1.4, -1.6, 0.49])).tolist() == [1, 2, -1, -2, 0]
    assert round_delta(np.array([255.0, 0.0]), np.array([0.9, -0.9])).tolist() == [0, 0]


def test_round_ties_away_from_zero_on_image():
    # 100 - 1.5 = 98.5 rounds away from zero to 99
    assert round_delta(np.array([100.0]), np.array([-1.5])).tolist() == [-1]


@given(st.integers(0, 2**32 - 1))
def test_round_lands_on_lattice(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 256, size=(3, 5, 5))
    delta = rng.normal(scale=100, size=X.shape)
    d = round_delta(X, delta)
    assert np.issubdtype(d.dtype, np.integer)
    img = X + d
    assert img.min() >= 0 and img.max() <= 255
    # nearest lattice point inside the box
    assert np.all(np.abs(img - np.clip(X + delta, 0, 255)) <= 0.5)


# ---------------------------------------------------------------- config


@pytest.mark.parametrize(
    "kwargs",
    [{"max_iterations": 0}, {"step_size": 0.0}, {"schedule": "cosine"}, {"rounded_check_period": 0}],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        AttackConfig(**kwargs)


def test_config_defaults_and_schedule():
    cfg = AttackConfig()
    assert (cfg.max_iterations, cfg.step_size, cfg.schedule, cfg.rounded_check_period) == (500, 1.0, "constant", 1)
    assert cfg.step(10) == 1.0
    assert AttackConfig(step_size=2.0, schedule="decay").step(3) == 1.0


# ---------------------------------------------------------------- attack


def test_in_range_image_is_fixed_point():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 256, size=(3, 4, 4), dtype=np.uint8)
    net = linear_victim(rng, f_target=22.0, X=X)
    res = attack(net, X, HEALTHY)
    assert res.success and res.iterations_used == 0
    assert not res.delta.any()
    assert res.norms == (0, 0.0, 0)
    assert res.f_before == res.f_after == forward(net, X)


def test_constant_network_exhausts_budget():
    X = np.full((3, 4, 4), 90, dtype=np.uint8)
    res = attack(constant_victim(40.0), X, HEALTHY, AttackConfig(max_iterations=25))
    assert not res.success
    assert res.iterations_used == 25
    assert not res.delta.any()
    assert res.f_after == 40.0


def _linear_case(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(60, 190, size=(3, 4, 4), dtype=np.uint8)
    side = rng.choice([-1, 1])
    d = rng.uniform(1.0, 10.0)
    f0 = HEALTHY.lower - d if side < 0 else HEALTHY.upper + d
    net = linear_victim(rng, f_target=f0, X=X)
    g = input_gradient(net, X.astype(float))
    eta = 0.05 / (2 * float(g.ravel() @ g.ravel()))
    return net, X, g, eta


@pytest.mark.parametrize("seed", range(8))
def test_linear_victim_oracle(seed):
    net, X, g, eta = _linear_case(seed)
    gf = g.ravel()
    trace = []
    res = attack(net, X, HEALTHY, AttackConfig(step_size=eta), callback=lambda k, d, f: trace.append((d.copy(), f)))
    assert res.success

    # every continuous iterate lies on the ray X + t*g
    for d, _ in trace:
        df = d.ravel()
        off_ray = df - (df @ gf) / (gf @ gf) * gf
        assert np.linalg.norm(off_ray) <= 1e-6

    # squared distance to the center never increases
    losses = [objective(f, HEALTHY.center)[0] for _, f in trace]
    assert all(b <= a for a, b in zip(losses, losses[1:]))

    f0 = res.f_before
    bound = HEALTHY.lower if f0 < HEALTHY.lower else HEALTHY.upper
    minimal = abs(bound - f0) / np.linalg.norm(gf)
    assert res.norms[1] <= minimal + math.sqrt(gf.size)


def test_result_lattice_and_soundness_on_small_net():
    rng = np.random.default_rng(3)
    conv = Conv2d(rng.normal(size=(2, 3, 3, 3)) * 0.05, np.zeros(2), 1, 1)
    net = VictimNetwork(
        (3, 4, 4),
        PreprocessSpec(120.0, True),
        (conv, ReLU(), Affine(rng.normal(size=(1, 32)) * 0.05, np.array([22.0]))),
    )
    for i in range(10):
        X = rng.integers(0, 256, size=(3, 4, 4), dtype=np.uint8)
        res = attack(net, X, PRESETS["make-obese"], AttackConfig(max_iterations=50, step_size=5.0))
        img = X.astype(np.int64) + res.delta
        assert img.min() >= 0 and img.max() <= 255
        f_after = forward(net, img.astype(np.uint8))
        assert f_after == res.f_after
        assert res.success == in_range(f_after, PRESETS["make-obese"])


def test_check_period_and_decay_still_valid():
    net, X, _, eta = _linear_case(1)
    for cfg in (
        AttackConfig(step_size=eta, rounded_check_period=7),
        AttackConfig(step_size=eta * 4, schedule="decay"),
    ):
        res = attack(net, X, HEALTHY, cfg)
        assert res.success == in_range(res.f_after, HEALTHY)
        assert res.success
        if cfg.rounded_check_period == 7:
            assert res.iterations_used % 7 == 0


def test_attack_deterministic():
    net, X, _, eta = _linear_case(2)
    a = attack(net, X, HEALTHY, AttackConfig(step_size=eta))
    b = attack(net, X, HEALTHY, AttackConfig(step_size=eta))
    assert a.delta.tobytes() == b.delta.tobytes()
    assert (a.success, a.iterations_used, a.f_before, a.f_after, a.norms) == (
        b.success,
        b.iterations_used,
        b.f_before,
        b.f_after,
        b.norms,
    )


def test_attack_shape_mismatch():
    with pytest.raises(ShapeError):
        attack(constant_victim(20.0), np.zeros((3, 4, 5), dtype=np.uint8), HEALTHY)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_attack_nonfinite_prediction_names_iteration():
    net = VictimNetwork((1, 1, 2), PreprocessSpec(0.0, False), (Affine(np.array([[1e308, 1e308]]), np.zeros(1)),))
    with pytest.raises(AttackError, match="iteration 0"):
        attack(net, np.full((1, 1, 2), 200, dtype=np.uint8), HEALTHY)


def test_attack_does_not_modify_image():
    net, X, _, eta = _linear_case(4)
    X0 = X.copy()
    attack(net, X, HEALTHY, AttackConfig(step_size=eta))
    assert np.array_equal(X, X0)
