"""Targeted range attack on a regression network.

Given a victim ``f``, an image ``X`` and a target interval ``[L, U]``, find an
integer perturbation ``delta`` with ``X + delta`` a valid 8-bit image and
``L <= f(X + delta) <= U``.

The integer program is not solved directly. Instead ``delta`` is relaxed to
real values and ``(f(X + delta) - (U + L)/2)**2`` is minimised by projected
gradient descent over the box ``0 <= X + delta <= 255``, starting from zero.
Before each step the iterate is rounded onto the pixel lattice and the loop
stops as soon as the rounded image already lands in range, which keeps the
perturbation small. Running out of iterations is a reported failure, not an
exception.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .data import as_image
from .metrics import lp_norms
from .tensor import ShapeError
from .victim import VictimNetwork, forward, value_and_gradient


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class TargetRange:
    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError(f"range bounds must be finite, got [{lo}, {hi}]")
        if not lo < hi:
            raise ValueError(f"range needs lower < upper, got [{lo}, {hi}]")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def center(self) -> float:
        return (self.upper + self.lower) / 2.0

    @property
    def radius(self) -> float:
        return (self.upper - self.lower) / 2.0

    def exact_center_radius(self) -> tuple[Fraction, Fraction]:
        # float midpoints can miss the bounds by an ulp; rationals cannot
        lo, hi = Fraction(self.lower), Fraction(self.upper)
        return (hi + lo) / 2, (hi - lo) / 2

    @classmethod
    def parse(cls, text: str) -> "TargetRange":
        """``"18.7:24.9"`` -> TargetRange(18.7, 24.9)."""
        try:
            lo, hi = text.split(":")
            return cls(float(lo), float(hi))
        except ValueError as e:
            raise ValueError(f"range must look like L:U with L < U, got {text!r} ({e})") from None


PRESETS = {
    "make-healthy": TargetRange(18.7, 24.9),
    "make-obese": TargetRange(30.0, 40.0),
}


def center_radius(target: TargetRange) -> tuple[float, float]:
    return target.center, target.radius


def in_range(value: float, target: TargetRange) -> bool:
    return target.lower <= value <= target.upper


def in_range_reformulated(value: float, target: TargetRange) -> bool:
    """Same test as :func:`in_range`, written as (v - center)**2 <= radius**2 in exact arithmetic."""
    c, r = target.exact_center_radius()
    return (Fraction(value) - c) ** 2 <= r**2


def nearest_bound_distance(f_value: float, target: TargetRange) -> float:
    if in_range(f_value, target):
        return 0.0
    return min(abs(f_value - target.lower), abs(f_value - target.upper))


def objective(f_value: float, center: float) -> tuple[float, float]:
    """Squared distance to the range center and its derivative in ``f_value``."""
    d = f_value - center
    return d * d, 2.0 * d


def project_delta(X, delta) -> np.ndarray:
    """Clamp ``delta`` so that ``X + delta`` stays in the box [0, 255]."""
    x = np.asarray(X, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if x.shape != delta.shape:
        raise ShapeError(f"delta shape {delta.shape} does not match image shape {x.shape}")
    return np.clip(delta, -x, 255.0 - x)


def _round_half_away(a: np.ndarray) -> np.ndarray:
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def round_delta(X, delta) -> np.ndarray:
    """Integer perturbation moving ``X + delta`` to the nearest lattice image.

    Ties round away from zero; the result is clamped so ``X + result`` stays
    in 0..255. Returned as int16.
    """
    x = np.asarray(X, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if x.shape != delta.shape:
        raise ShapeError(f"delta shape {delta.shape} does not match image shape {x.shape}")
    target = np.clip(_round_half_away(x + delta), 0.0, 255.0)
    return (target - x).astype(np.int16)


@dataclass(frozen=True)
class AttackConfig:
    max_iterations: int = 500
    step_size: float = 1.0
    schedule: str = "constant"  # or "decay": step_size / sqrt(k + 1)
    rounded_check_period: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.schedule not in ("constant", "decay"):
            raise ValueError(f"schedule must be 'constant' or 'decay', got {self.schedule!r}")
        if self.rounded_check_period < 1:
            raise ValueError(f"rounded_check_period must be >= 1, got {self.rounded_check_period}")

    def step(self, k: int) -> float:
        if self.schedule == "decay":
            return self.step_size / math.sqrt(k + 1)
        return self.step_size


@dataclass(frozen=True, eq=False)
class AttackResult:
    delta: np.ndarray  # int16, same shape as the image
    success: bool
    iterations_used: int
    f_before: float
    f_after: float
    norms: tuple[int, float, int]  # (l0, l2, l_inf)


def attack(
    net: VictimNetwork,
    X,
    target: TargetRange,
    cfg: AttackConfig = AttackConfig(),
    callback: Optional[Callable[[int, np.ndarray, float], None]] = None,
) -> AttackResult:
    """Push ``f(X + delta)`` into ``target`` with the smallest-effort integer ``delta`` found.

    ``callback(k, delta, f)``, if given, sees every continuous iterate
    ``delta`` (after ``k`` steps) together with ``f(X + delta)`` before the
    step taken from it.
    """
    X = as_image(X)
    if X.shape != net.input_shape:
        raise ShapeError(f"image shape {X.shape} does not match network input shape {net.input_shape}")
    x = X.astype(np.float64)
    center = target.center
    f_before = forward(net, x)

    delta = np.zeros_like(x)
    k = 0
    success = False
    d_int = np.zeros(X.shape, dtype=np.int16)
    f_after = f_before
    while True:
        if k % cfg.rounded_check_period == 0 or k == cfg.max_iterations:
            d_int = round_delta(x, delta)
            f_after = forward(net, x + d_int) if k else f_before
            if in_range(f_after, target):
                success = True
                break
        if k >= cfg.max_iterations:
            break
        f, g = value_and_gradient(net, x + delta)
        if not math.isfinite(f):
            raise AttackError(f"non-finite prediction {f} at iteration {k}")
        if callback is not None:
            callback(k, delta, f)
        _, dloss = objective(f, center)
        delta = project_delta(x, delta - cfg.step(k) * dloss * g)
        k += 1

    if not math.isfinite(f_after):
        raise AttackError(f"non-finite prediction {f_after} at iteration {k}")
    return AttackResult(d_int, success, k, f_before, f_after, lp_norms(d_int))
