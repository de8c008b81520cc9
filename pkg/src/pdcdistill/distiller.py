"""Analyzer-angle search that maximizes measured fringe visibility.

Filtering a partially entangled pair state through analyzers at the right
common angle rebalances the superposition and restores full interference
contrast, at the cost of post-selection yield.  This module implements the
search three ways:

* :func:`scan_analyzers` — the bench procedure: one simulated scan and fit
  per candidate angle, argmax of the fitted visibility.
* :func:`refine_angle` — golden-section maximization of the analytic
  visibility curve (noise-free objective, used as the precision reference).
* :func:`distill_unknown` — receiver-side search that never consults the
  preparation angle: coarse grid over measured visibilities plus local
  parabolic refinement.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Callable, Iterable, Sequence

import numpy as np

from .apparatus import ApparatusModel, Geometry, effective_visibility
from .biphoton import (
    Angle,
    AnalyzerPair,
    balance_residual,
    distillation_angle,
    prepare_state,
    project_analyzers,
    renormalize,
)
from .errors import BracketWarning, ConfigError, FitError
from .experiment import (
    ScanConfig,
    VisibilityEstimate,
    derive_seed,
    fit_fringes,
    run_scan,
)

__all__ = [
    "GridPoint",
    "DistillReport",
    "scan_analyzers",
    "refine_angle",
    "distill_unknown",
    "simulation_source",
    "write_distill_csv",
    "read_distill_csv",
    "distill_csv_text",
]

_GRID_KEY = 0x67726964
_UNKNOWN_KEY = 0x756E6B6E
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# Angle precision below which the closed form is not meaningfully beatable.
_MIN_TOL_DEG = 1e-6
_MAX_REFINE_STEPS = 12


@dataclass(frozen=True)
class GridPoint:
    """One evaluated analyzer angle: fitted visibility, its error, and yield.

    ``yield_probability`` is NaN when the search had no access to the
    preparation angle; ``valid`` is False when the underlying fit failed.
    """

    theta_a: Angle
    v_hat: float
    std_err: float
    yield_probability: float
    valid: bool = True


@dataclass(frozen=True)
class DistillReport:
    """Outcome of an analyzer-angle search.

    The best entry attains the maximum fitted visibility among the evaluated
    points, ties broken toward the smaller angle (higher yield below 45 deg).
    ``analytic_theta_a`` and ``balance_residual_at_best`` are None when the
    preparation angle is unknown to the search.
    """

    grid: tuple[GridPoint, ...]
    best_theta_a: Angle
    best_v: float
    analytic_theta_a: Angle | None
    balance_residual_at_best: float | None
    flat_objective: bool = False


def _argmax_point(points: Sequence[GridPoint]) -> GridPoint:
    best = None
    for point in points:  # ascending angle order: strict '>' keeps the smaller tie
        if not point.valid:
            continue
        if best is None or point.v_hat > best.v_hat:
            best = point
    if best is None:
        raise FitError("every analyzer angle failed to produce a visibility estimate")
    return best


def scan_analyzers(
    theta_p: Angle,
    apparatus: ApparatusModel,
    geometry: Geometry,
    scan: ScanConfig,
    theta_a_grid: Sequence[Angle],
) -> DistillReport:
    """Simulate one scan per candidate analyzer angle and pick the best fit.

    Both arms share each candidate angle.  Every grid angle gets its own
    seed derived from ``scan.seed`` and the angle's rank, so the report is
    reproducible and grid points could run concurrently.  A fit failure
    marks that angle invalid; the search fails only if all angles do.
    """
    angles = sorted(theta_a_grid)
    if not angles:
        raise ValueError("theta_a_grid must not be empty")
    for angle in angles:
        if not 0.0 < angle.radians < 0.5 * math.pi:
            raise ValueError(f"grid angles must lie in (0, 90) deg, got {angle.degrees:g} deg")

    state = prepare_state(theta_p)
    points = []
    for rank, angle in enumerate(angles):
        pair = AnalyzerPair.both(angle)
        yield_p = project_analyzers(state, pair).yield_probability
        sub_scan = replace(scan, seed=derive_seed(scan.seed, _GRID_KEY, rank))
        try:
            dataset = run_scan(theta_p, pair, apparatus, geometry, sub_scan)
            estimate = fit_fringes(dataset, geometry.fringe_period_mm)
        except FitError:
            points.append(GridPoint(angle, math.nan, math.nan, yield_p, valid=False))
            continue
        points.append(GridPoint(angle, estimate.v_hat, estimate.std_err, yield_p))

    best = _argmax_point(points)
    try:
        analytic = distillation_angle(theta_p)
    except ValueError:
        analytic = None
    return DistillReport(
        grid=tuple(points),
        best_theta_a=best.theta_a,
        best_v=best.v_hat,
        analytic_theta_a=analytic,
        balance_residual_at_best=balance_residual(theta_p, best.theta_a),
    )


def refine_angle(
    theta_p: Angle,
    apparatus: ApparatusModel,
    geometry: Geometry,
    lo: Angle,
    hi: Angle,
    tol_deg: float = 1e-4,
) -> Angle:
    """Golden-section maximization of the analytic visibility over [lo, hi].

    The noise-free objective is the effective visibility of the filtered
    state, which is unimodal in the common analyzer angle for this state
    family.  If the bracket excludes the optimum the search converges onto a
    bracket edge; that edge is returned and a :class:`BracketWarning` is
    emitted.

    ``tol_deg`` is the bracket width at which the search stops (floored at
    1e-6 deg, below which the result is not meaningfully refined).
    """
    if not 0.0 < lo.radians < hi.radians < 0.5 * math.pi:
        raise ValueError("bracket must satisfy 0 deg < lo < hi < 90 deg")
    tol = math.radians(max(tol_deg, _MIN_TOL_DEG))
    state = prepare_state(theta_p)

    def objective(theta_rad: float) -> float:
        filtered = project_analyzers(state, AnalyzerPair.both(Angle(theta_rad)))
        return effective_visibility(renormalize(filtered.state), apparatus, geometry)

    a, b = lo.radians, hi.radians
    c = b - (b - a) * _GOLDEN
    d = a + (b - a) * _GOLDEN
    fc, fd = objective(c), objective(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - (b - a) * _GOLDEN
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + (b - a) * _GOLDEN
            fd = objective(d)
    result = 0.5 * (a + b)

    if result - lo.radians <= tol:
        warnings.warn(
            "optimum lies at or below the lower bracket edge", BracketWarning, stacklevel=2
        )
        return lo
    if hi.radians - result <= tol:
        warnings.warn(
            "optimum lies at or above the upper bracket edge", BracketWarning, stacklevel=2
        )
        return hi
    return Angle(result)


def _parabolic_vertex(
    left: GridPoint, center: GridPoint, right: GridPoint
) -> float | None:
    """Vertex (in degrees) of the parabola through three visibility points."""
    x0, x1, x2 = left.theta_a.degrees, center.theta_a.degrees, right.theta_a.degrees
    f0, f1, f2 = left.v_hat, center.v_hat, right.v_hat
    denom = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0)
    if denom <= 0.0:  # not concave around the maximum
        return None
    vertex = x1 - 0.5 * ((x1 - x0) ** 2 * (f1 - f2) - (x1 - x2) ** 2 * (f1 - f0)) / denom
    return min(max(vertex, x0), x2)


def distill_unknown(
    dataset_source: Callable[[Angle], VisibilityEstimate],
    grid: Sequence[Angle],
    refine_tol_deg: float = 0.05,
) -> DistillReport:
    """Receiver-side search over measured visibilities only.

    ``dataset_source`` produces a visibility estimate for any requested
    common analyzer angle (e.g. by running a scan at the receiver).  The
    search takes the argmax over the coarse grid, then repeatedly fits a
    parabola through the best point and its neighbors, querying the source
    at each predicted vertex until the step falls below ``refine_tol_deg``.
    The preparation angle is never consulted.

    A constant objective sets ``flat_objective`` and skips refinement.
    """
    angles = sorted(grid)
    if not angles:
        raise ValueError("grid must not be empty")

    points: list[GridPoint] = []
    for angle in angles:
        try:
            estimate = dataset_source(angle)
        except (FitError, ValueError):
            points.append(GridPoint(angle, math.nan, math.nan, math.nan, valid=False))
            continue
        points.append(GridPoint(angle, estimate.v_hat, estimate.std_err, math.nan))

    best = _argmax_point(points)
    valid_v = [p.v_hat for p in points if p.valid]
    flat = max(valid_v) - min(valid_v) < 1e-9
    if not flat:
        for _ in range(_MAX_REFINE_STEPS):
            points.sort(key=lambda p: p.theta_a)
            valid = [p for p in points if p.valid]
            idx = valid.index(_argmax_point(valid))
            if idx == 0 or idx == len(valid) - 1:
                break
            vertex_deg = _parabolic_vertex(valid[idx - 1], valid[idx], valid[idx + 1])
            if vertex_deg is None:
                break
            if min(abs(vertex_deg - p.theta_a.degrees) for p in points) < refine_tol_deg:
                break
            vertex = Angle.from_degrees(vertex_deg)
            try:
                estimate = dataset_source(vertex)
            except (FitError, ValueError):
                break
            points.append(GridPoint(vertex, estimate.v_hat, estimate.std_err, math.nan))
        points.sort(key=lambda p: p.theta_a)
        best = _argmax_point(points)

    return DistillReport(
        grid=tuple(points),
        best_theta_a=best.theta_a,
        best_v=best.v_hat,
        analytic_theta_a=None,
        balance_residual_at_best=None,
        flat_objective=flat,
    )


def simulation_source(
    theta_p: Angle,
    apparatus: ApparatusModel,
    geometry: Geometry,
    scan: ScanConfig,
) -> Callable[[Angle], VisibilityEstimate]:
    """Visibility source backed by the simulator, for feeding :func:`distill_unknown`.

    Each call runs one scan with a seed derived from ``scan.seed`` and the
    call index, so a search using this source is reproducible end to end.
    """
    calls = 0

    def source(theta_a: Angle) -> VisibilityEstimate:
        nonlocal calls
        sub_scan = replace(scan, seed=derive_seed(scan.seed, _UNKNOWN_KEY, calls))
        calls += 1
        dataset = run_scan(theta_p, AnalyzerPair.both(theta_a), apparatus, geometry, sub_scan)
        return fit_fringes(dataset, geometry.fringe_period_mm)

    return source


# ---------------------------------------------------------------------------
# CSV serialization


def distill_csv_text(report: DistillReport) -> str:
    """Render a report as CSV text: metadata comments + per-angle table."""
    lines = [
        f"# best_theta_a_deg={report.best_theta_a.degrees!r}",
        f"# best_v={report.best_v!r}",
    ]
    if report.analytic_theta_a is not None:
        lines.append(f"# analytic_theta_a_deg={report.analytic_theta_a.degrees!r}")
    if report.balance_residual_at_best is not None:
        lines.append(f"# balance_residual={report.balance_residual_at_best!r}")
    lines.append(f"# flat_objective={str(report.flat_objective).lower()}")
    lines.append("theta_a_deg,v_hat,std_err,yield")
    for point in report.grid:
        lines.append(
            f"{point.theta_a.degrees!r},{point.v_hat!r},{point.std_err!r},"
            f"{point.yield_probability!r}"
        )
    return "\n".join(lines) + "\n"


def write_distill_csv(report: DistillReport, file: str | Path | IO[str]) -> None:
    text = distill_csv_text(report)
    if isinstance(file, (str, Path)):
        Path(file).write_text(text)
    else:
        file.write(text)


def read_distill_csv(file: str | Path | IO[str]) -> DistillReport:
    """Parse a report written by :func:`write_distill_csv`."""
    if isinstance(file, (str, Path)):
        lines = Path(file).read_text().splitlines()
    else:
        lines = file.read().splitlines()

    meta: dict[str, str] = {}
    rows: list[str] = []
    in_header = True
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" not in body:
                raise ConfigError(f"malformed metadata line: {line!r}")
            key, value = body.split("=", 1)
            meta[key.strip()] = value.strip()
            continue
        if in_header:
            if line != "theta_a_deg,v_hat,std_err,yield":
                raise ConfigError(f"unexpected header: {line!r}")
            in_header = False
            continue
        rows.append(line)
    if in_header:
        raise ConfigError("missing 'theta_a_deg,v_hat,std_err,yield' header")
    for key in ("best_theta_a_deg", "best_v"):
        if key not in meta:
            raise ConfigError(f"missing metadata key: {key!r}")

    points = []
    for row in rows:
        parts = row.split(",")
        if len(parts) != 4:
            raise ConfigError(f"malformed data row: {row!r}")
        v_hat = float(parts[1])
        points.append(
            GridPoint(
                theta_a=Angle.from_degrees(float(parts[0])),
                v_hat=v_hat,
                std_err=float(parts[2]),
                yield_probability=float(parts[3]),
                valid=not math.isnan(v_hat),
            )
        )
    analytic = meta.get("analytic_theta_a_deg")
    residual = meta.get("balance_residual")
    return DistillReport(
        grid=tuple(points),
        best_theta_a=Angle.from_degrees(float(meta["best_theta_a_deg"])),
        best_v=float(meta["best_v"]),
        analytic_theta_a=None if analytic is None else Angle.from_degrees(float(analytic)),
        balance_residual_at_best=None if residual is None else float(residual),
        flat_objective=meta.get("flat_objective", "false") == "true",
    )
