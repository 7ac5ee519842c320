"""Per-image attack records, campaign summaries and plot-ready transforms."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

REPORT_COLUMNS = (
    "image_id",
    "f_before",
    "f_after",
    "success",
    "iterations",
    "l0",
    "l2",
    "l_inf",
    "distance_to_range",
)


def lp_norms(delta) -> tuple[int, float, int]:
    """(l0, l2, l_inf) of an integer perturbation; l0 counts nonzero entries."""
    d = np.asarray(delta)
    if d.size and np.any(d != np.round(d)):
        raise ValueError("lp_norms expects an integer-valued perturbation")
    d = d.astype(np.int64).ravel()
    if d.size == 0:
        return 0, 0.0, 0
    # integer sum of squares is exact before the single sqrt
    return int(np.count_nonzero(d)), math.sqrt(int(d @ d)), int(np.abs(d).max())


@dataclass(frozen=True)
class AttackRecord:
    image_id: str
    f_before: float
    f_after: float
    success: bool
    iterations: int
    l0: int
    l2: float
    l_inf: int
    distance_to_range: float


def record_from_result(image_id: str, result, target) -> AttackRecord:
    from .attack import nearest_bound_distance

    l0, l2, l_inf = result.norms
    return AttackRecord(
        image_id,
        result.f_before,
        result.f_after,
        result.success,
        result.iterations_used,
        l0,
        l2,
        l_inf,
        nearest_bound_distance(result.f_before, target),
    )


def nearest_rank(sorted_values, q: float):
    """Nearest-rank quantile: the ceil(q*n)-th smallest value (1-based), q in (0, 1]."""
    n = len(sorted_values)
    # round away float noise such as 0.9 * 30 = 27.000000000000004
    rank = max(1, math.ceil(round(q * n, 9)))
    return sorted_values[min(rank, n) - 1]


def _quantiles(values) -> dict:
    s = sorted(values)
    return {"min": s[0], "median": nearest_rank(s, 0.5), "p90": nearest_rank(s, 0.9), "max": s[-1]}


def summarize(records) -> dict:
    records = list(records)
    if not records:
        raise ValueError("cannot summarize an empty list of records")
    n = len(records)
    return {
        "n": n,
        "success_rate": sum(r.success for r in records) / n,
        "mean_iterations": sum(r.iterations for r in records) / n,
        "l0": _quantiles([r.l0 for r in records]),
        "l2": _quantiles([r.l2 for r in records]),
        "l_inf": _quantiles([r.l_inf for r in records]),
    }


def boundary_projection(records, target, tolerance: float = 0.5) -> dict:
    """How closely successful attacks on out-of-range images land on the nearer bound.

    Records landing further than ``tolerance`` from both bounds are returned
    as ``rounding_outliers``: rounding the final perturbation moved the
    prediction deeper into (or across) the range.
    """
    moved = [r for r in records if r.success and r.distance_to_range > 0]
    outliers = []
    for r in moved:
        gap = min(abs(r.f_after - target.lower), abs(r.f_after - target.upper))
        if gap > tolerance:
            outliers.append(r.image_id)
    return {
        "tolerance": tolerance,
        "attacked": len(moved),
        "within_tolerance_fraction": (1.0 - len(outliers) / len(moved)) if moved else 1.0,
        "rounding_outliers": sorted(outliers),
    }


def dither(values, variance: float, seed: int = 0) -> np.ndarray:
    """Add iid N(0, variance) noise for plotting; the input is never modified."""
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    values = np.array(values, dtype=np.float64)
    if variance == 0:
        return values
    rng = np.random.default_rng(seed)
    return values + rng.normal(0.0, math.sqrt(variance), size=values.shape)


def trend_statistic(records) -> float:
    """Spearman correlation between distance-to-range and l2.

    Only successful attacks on initially out-of-range images count; a failed
    attack's perturbation says nothing about the effort needed to succeed.
    """
    qualifying = [r for r in records if r.distance_to_range > 0 and r.success]
    if len(qualifying) < 3:
        raise ValueError(f"need at least 3 successful out-of-range records, got {len(qualifying)}")
    x = [r.distance_to_range for r in qualifying]
    y = [r.l2 for r in qualifying]
    if len(set(x)) == 1 or len(set(y)) == 1:
        raise ValueError("rank correlation undefined: one of the series is constant")
    rho = stats.spearmanr(x, y).statistic
    if not math.isfinite(rho):
        raise ValueError("rank correlation undefined: one of the series is constant")
    return float(rho)


# ------------------------------------------------------------------ CSV I/O


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(records, path) -> None:
    """One row per record, sorted by image_id, floats at full precision."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in sorted(records, key=lambda r: r.image_id):
            writer.writerow([_fmt(v) for v in asdict(r).values()])
    os.replace(tmp, path)


_PARSERS = {
    "image_id": str,
    "f_before": float,
    "f_after": float,
    "iterations": int,
    "l0": int,
    "l2": float,
    "l_inf": int,
    "distance_to_range": float,
}


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def read_report(path) -> list[AttackRecord]:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != REPORT_COLUMNS:
            raise ValueError(f"{path}: row 1: header must be {','.join(REPORT_COLUMNS)}")
        records = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(REPORT_COLUMNS):
                raise ValueError(f"{path}: row {row_no}: expected {len(REPORT_COLUMNS)} fields, got {len(row)}")
            values = {}
            for name, text in zip(REPORT_COLUMNS, row):
                try:
                    values[name] = _parse_bool(text) if name == "success" else _PARSERS[name](text)
                except ValueError:
                    raise ValueError(f"{path}: row {row_no}: bad {name} value {text!r}") from None
            records.append(AttackRecord(**values))
    return records


def plot_tables(records, dither_variance: float = 0.005, seed: int = 0):
    """Rows for the before/after scatter and the norm-vs-initial-prediction plot.

    Only the norm columns of the second table are dithered.
    """
    records = sorted(records, key=lambda r: r.image_id)
    scatter = [(r.image_id, r.f_before, r.f_after, r.success) for r in records]
    rng_l2, rng_linf = np.random.SeedSequence(seed).spawn(2)
    l2 = dither([r.l2 for r in records], dither_variance, rng_l2)
    l_inf = dither([r.l_inf for r in records], dither_variance, rng_linf)
    norms = [(r.image_id, r.f_before, float(a), float(b)) for r, a, b in zip(records, l2, l_inf)]
    return scatter, norms


def write_plot_tables(records, out_path, dither_variance: float = 0.005, seed: int = 0):
    """Write ``<stem>_scatter.csv`` and ``<stem>_norms.csv`` next to ``out_path``."""
    out_path = Path(out_path)
    scatter, norms = plot_tables(records, dither_variance, seed)
    stem = out_path.with_suffix("")
    paths = (stem.with_name(stem.name + "_scatter.csv"), stem.with_name(stem.name + "_norms.csv"))
    tables = (
        (("image_id", "f_before", "f_after", "success"), scatter),
        (("image_id", "f_before", "l2", "l_inf"), norms),
    )
    for path, (header, rows) in zip(paths, tables):
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([[_fmt(v) for v in row] for row in rows])
        os.replace(tmp, path)
    return paths
