"""Seeded Monte Carlo fringe scans and visibility recovery.

Simulates the measurement loop of the bench: the movable detector steps
through evenly spaced positions, counts at each point are drawn from a
Poisson distribution with the model's mean rate, and the fringe visibility
is recovered by linear least squares against

    counts ~ A + B cos(k x) + C sin(k x),        k = 2 pi / period,

so that v = sqrt(B^2 + C^2) / A.  The fit is convex and needs no
initialization; period refinement is available separately.

Randomness is reproducible: each scan point uses its own generator derived
from the scan seed and the point index, so points may be evaluated in any
order (or concurrently) without changing the result.

Datasets serialize to CSV with ``#``-prefixed ``key=value`` metadata lines
followed by an ``x_mm,counts`` table.  The metadata is sufficient to
regenerate the counts bit-for-bit from the seed; see :func:`regenerate`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .apparatus import ApparatusModel, Geometry, expected_coincidence_rate
from .biphoton import Angle, AnalyzerPair, prepare_state
from .errors import (
    ConfigError,
    DegenerateDataError,
    FitError,
    IllConditionedError,
    NoPeriodError,
    PoorConditioningWarning,
)

__all__ = [
    "ScanConfig",
    "FringeDataset",
    "VisibilityEstimate",
    "derive_seed",
    "run_scan",
    "regenerate",
    "fit_fringes",
    "fit_fringe_arrays",
    "estimate_period",
    "bootstrap_error",
    "write_fringe_csv",
    "read_fringe_csv",
    "fringe_csv_text",
]

_SEED_MAX = 2**64
# numpy's Poisson sampler rejects lam above ~2**63; fail early with a clear error.
_MEAN_MAX = float(2**63)
# Raw visibility estimates above this are reported clamped with a flag.
_V_HAT_CAP = 1.5
# Stream-domain tag separating bootstrap draws from scan-point draws.
_BOOTSTRAP_KEY = 0x626F6F74


def derive_seed(base_seed: int, *key: int) -> int:
    """Derive a child seed from ``base_seed`` and an integer key path.

    Deterministic splitting rule used everywhere a run needs independent
    sub-streams (one per scan point, per grid angle, per bootstrap pass),
    so concurrent evaluation cannot change results.
    """
    ss = np.random.SeedSequence(base_seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ScanConfig:
    """Transverse scan plan: evenly spaced detector positions plus RNG seed."""

    x_start_mm: float
    x_end_mm: float
    n_points: int = 40
    seed: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x_start_mm) and math.isfinite(self.x_end_mm)):
            raise ValueError("scan bounds must be finite")
        if not self.x_end_mm > self.x_start_mm:
            raise ValueError(
                f"x_end_mm ({self.x_end_mm!r}) must exceed x_start_mm ({self.x_start_mm!r})"
            )
        if int(self.n_points) != self.n_points or self.n_points < 5:
            raise ValueError(f"n_points must be an integer >= 5, got {self.n_points!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < _SEED_MAX:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")

    def positions(self) -> np.ndarray:
        return np.linspace(self.x_start_mm, self.x_end_mm, int(self.n_points))


@dataclass(eq=False)
class FringeDataset:
    """One simulated scan: positions, integer counts, and the full run recipe."""

    x_mm: np.ndarray
    counts: np.ndarray
    theta_p: Angle
    analyzers: AnalyzerPair
    apparatus: ApparatusModel
    geometry: Geometry
    seed: int

    def __post_init__(self) -> None:
        self.x_mm = np.asarray(self.x_mm, dtype=float)
        counts = np.asarray(self.counts)
        if counts.size and not np.issubdtype(counts.dtype, np.integer):
            rounded = np.rint(counts)
            if not np.array_equal(rounded, counts):
                raise ValueError("counts must be integers")
            counts = rounded
        self.counts = counts.astype(np.int64)
        if self.x_mm.ndim != 1 or self.x_mm.shape != self.counts.shape:
            raise ValueError("x_mm and counts must be 1-d arrays of equal length")
        if self.x_mm.size < 1:
            raise ValueError("dataset must contain at least one point")
        if np.any(np.diff(self.x_mm) <= 0.0):
            raise ValueError("x_mm must be strictly increasing")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def points(self) -> list[tuple[float, int]]:
        return [(float(x), int(c)) for x, c in zip(self.x_mm, self.counts)]


@dataclass(frozen=True)
class VisibilityEstimate:
    """Least-squares fringe fit result.

    ``v_hat`` is clamped to [0, 1.5]; ``over_unity`` flags raw estimates above
    1, which noise can produce near full contrast.
    """

    v_hat: float
    std_err: float
    mean_level: float
    phase_offset_rad: float
    residual_sum_squares: float
    over_unity: bool = False


def run_scan(
    theta_p: Angle,
    analyzers: AnalyzerPair,
    apparatus: ApparatusModel,
    geometry: Geometry,
    scan: ScanConfig,
) -> FringeDataset:
    """Simulate one transverse scan of the movable detector.

    Counts at each position are Poisson draws around the model's mean rate.
    Each point uses a generator seeded from ``(scan.seed, point index)``, so
    the dataset is a pure function of its configuration.
    """
    x = scan.positions()
    if x[-1] - x[0] < geometry.fringe_period_mm:
        warnings.warn(
            "scan span is below one fringe period: visibility is poorly conditioned",
            PoorConditioningWarning,
            stacklevel=2,
        )
    state = prepare_state(theta_p)
    means = expected_coincidence_rate(state, analyzers, apparatus, geometry, x)
    if np.any(means > _MEAN_MAX):
        raise OverflowError(
            f"mean count per dwell exceeds {_MEAN_MAX:.3g}; reduce rates or dwell"
        )
    counts = np.empty(x.size, dtype=np.int64)
    for i in range(x.size):
        rng = np.random.default_rng(np.random.SeedSequence(scan.seed, spawn_key=(i,)))
        counts[i] = rng.poisson(means[i])
    return FringeDataset(
        x_mm=x,
        counts=counts,
        theta_p=theta_p,
        analyzers=analyzers,
        apparatus=apparatus,
        geometry=geometry,
        seed=int(scan.seed),
    )


def regenerate(dataset: FringeDataset) -> FringeDataset:
    """Re-run the scan described by a dataset's metadata (bit-for-bit equal)."""
    scan = ScanConfig(
        x_start_mm=float(dataset.x_mm[0]),
        x_end_mm=float(dataset.x_mm[-1]),
        n_points=int(dataset.x_mm.size),
        seed=dataset.seed,
    )
    return run_scan(dataset.theta_p, dataset.analyzers, dataset.apparatus, dataset.geometry, scan)


# ---------------------------------------------------------------------------
# Fringe fitting


def _design_matrix(x: np.ndarray, period_mm: float) -> np.ndarray:
    k = 2.0 * math.pi / period_mm
    return np.column_stack([np.ones_like(x), np.cos(k * x), np.sin(k * x)])


def _linear_fit(x: np.ndarray, y: np.ndarray, period_mm: float):
    """Solve the 3-parameter normal equations; returns (coef, rss, cov)."""
    design = _design_matrix(x, period_mm)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < 3:
        raise IllConditionedError(
            "scan positions sample equivalent fringe phases; cannot separate "
            "mean, cosine and sine components"
        )
    residuals = y - design @ coef
    rss = float(residuals @ residuals)
    dof = x.size - 3
    sigma_sq = rss / dof if dof > 0 else 0.0
    cov = sigma_sq * np.linalg.inv(design.T @ design)
    return coef, rss, cov


def fit_fringe_arrays(x_mm, counts, period_mm: float) -> VisibilityEstimate:
    """Fit ``counts ~ A + B cos(kx) + C sin(kx)`` with the period known.

    Parameters
    ----------
    x_mm : array_like
        Detector positions, at least 5 of them.
    counts : array_like
        Measured (or synthetic) counts per position; floats are accepted so
        noiseless model curves can be fit exactly.
    period_mm : float
        Fringe period fixing k = 2 pi / period.

    Returns
    -------
    VisibilityEstimate
        v_hat = sqrt(B^2 + C^2)/A with a delta-method standard error from the
        least-squares covariance, the mean level A, the fitted fringe phase
        atan2(-C, B), and the residual sum of squares.

    Raises
    ------
    IllConditionedError
        If the positions sample equivalent phases (singular design).
    DegenerateDataError
        If the fitted mean level is not positive (e.g. all-zero counts).
    """
    x = np.asarray(x_mm, dtype=float)
    y = np.asarray(counts, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("x_mm and counts must be 1-d arrays of equal length")
    if x.size < 5:
        raise ValueError(f"need at least 5 points to fit, got {x.size}")
    if not (math.isfinite(period_mm) and period_mm > 0.0):
        raise ValueError(f"period_mm must be > 0, got {period_mm!r}")

    coef, rss, cov = _linear_fit(x, y, period_mm)
    a, b, c = (float(v) for v in coef)
    if a <= 0.0:
        raise DegenerateDataError(f"fitted mean level must be positive, got {a:.6g}")

    amplitude = math.hypot(b, c)
    v_raw = amplitude / a
    if amplitude > 0.0:
        grad = np.array([-v_raw / a, b / (a * amplitude), c / (a * amplitude)])
    else:
        grad = np.array([0.0, 1.0 / a, 0.0])
    variance = float(grad @ cov @ grad)
    return VisibilityEstimate(
        v_hat=min(v_raw, _V_HAT_CAP),
        std_err=math.sqrt(max(variance, 0.0)),
        mean_level=a,
        phase_offset_rad=math.atan2(-c, b),
        residual_sum_squares=rss,
        over_unity=v_raw > 1.0,
    )


def fit_fringes(dataset: FringeDataset, period_mm: float) -> VisibilityEstimate:
    """Fit a dataset's counts against a known fringe period."""
    return fit_fringe_arrays(dataset.x_mm, dataset.counts, period_mm)


def estimate_period(dataset: FringeDataset) -> float:
    """Recover the fringe period from the data alone.

    Scans candidate frequencies from half a cycle per span up to Nyquist,
    scoring each by the explained variance of the linear fit, then refines
    the best candidate with a parabola through its neighbors.  Reliable when
    the scan covers at least two periods.

    Raises :class:`NoPeriodError` on flat data or when no candidate explains
    a meaningful share of the variance.
    """
    x = np.asarray(dataset.x_mm, dtype=float)
    y = np.asarray(dataset.counts, dtype=float)
    tss = float(np.sum((y - y.mean()) ** 2))
    if tss <= 0.0:
        raise NoPeriodError("counts are constant: no fringe to measure")

    span = float(x[-1] - x[0])
    dx = float(np.median(np.diff(x)))
    f_step = 1.0 / (8.0 * span)
    freqs = np.arange(0.5 / span, 0.5 / dx, f_step)
    scores = np.full(freqs.size, -np.inf)
    for i, f in enumerate(freqs):
        try:
            _, rss, _ = _linear_fit(x, y, 1.0 / f)
        except FitError:
            continue
        scores[i] = 1.0 - rss / tss

    best = int(np.argmax(scores))
    if not np.isfinite(scores[best]) or scores[best] < 0.2:
        raise NoPeriodError("no candidate period explains the scan variance")
    f_hat = freqs[best]
    if 0 < best < freqs.size - 1 and np.all(np.isfinite(scores[best - 1 : best + 2])):
        curvature = scores[best - 1] - 2.0 * scores[best] + scores[best + 1]
        if curvature < 0.0:
            f_hat += 0.5 * f_step * (scores[best - 1] - scores[best + 1]) / curvature
    return float(1.0 / f_hat)


def bootstrap_error(
    dataset: FringeDataset,
    period_mm: float,
    n_resamples: int = 200,
    seed: int | None = None,
) -> float:
    """Parametric bootstrap standard error of the fitted visibility.

    Resamples counts from Poisson distributions around the fitted means,
    refits each resample, and reports the standard deviation of the
    visibility across resamples.  Deterministic for a given seed (defaults
    to a stream derived from the dataset's own seed).
    """
    if n_resamples < 1:
        raise ValueError(f"n_resamples must be >= 1, got {n_resamples}")
    x = np.asarray(dataset.x_mm, dtype=float)
    y = np.asarray(dataset.counts, dtype=float)
    fit_fringe_arrays(x, y, period_mm)  # surface base-fit failures first
    coef, _, _ = _linear_fit(x, y, period_mm)
    means = np.clip(_design_matrix(x, period_mm) @ coef, 0.0, None)

    base = dataset.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(base, spawn_key=(_BOOTSTRAP_KEY,)))
    values = []
    for _ in range(n_resamples):
        resampled = rng.poisson(means)
        try:
            values.append(fit_fringe_arrays(x, resampled, period_mm).v_hat)
        except FitError:
            continue
    if n_resamples == 1 or len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


# ---------------------------------------------------------------------------
# CSV serialization

_REQUIRED_KEYS = (
    "theta_p_deg",
    "theta_a_deg",
    "gamma",
    "period_mm",
    "slit_mm",
    "pair_rate_hz",
    "accidental_rate_hz",
    "dwell_s",
    "seed",
)
_OPTIONAL_KEYS = (
    "theta_a_idler_deg",
    "phase_offset_rad",
    "x_origin_mm",
    "detector_distance_mm",
    "crystal_separation_mm",
    "wavelength_nm",
)


def _csv_degrees(angle: Angle | None) -> str:
    """Degree string whose parse reproduces the stored radians exactly.

    deg->rad->deg round-trips are not exact for every float; search the
    neighboring representable degree values for one that maps back to the
    same radians, falling back to the nearest if none exists.
    """
    if angle is None:
        return "none"
    rad = angle.radians
    deg = math.degrees(rad)
    candidates = (
        deg,
        math.nextafter(deg, math.inf),
        math.nextafter(deg, -math.inf),
        math.nextafter(math.nextafter(deg, math.inf), math.inf),
        math.nextafter(math.nextafter(deg, -math.inf), -math.inf),
    )
    for candidate in candidates:
        if math.radians(candidate) == rad:
            return repr(candidate)
    return repr(deg)


def _parse_angle(text: str) -> Angle | None:
    if text == "none":
        return None
    return Angle.from_degrees(float(text))


def fringe_csv_text(dataset: FringeDataset) -> str:
    """Render a dataset as CSV text (metadata comments + x_mm,counts table)."""
    apparatus, geometry = dataset.apparatus, dataset.geometry
    meta = [
        ("theta_p_deg", _csv_degrees(dataset.theta_p)),
        ("theta_a_deg", _csv_degrees(dataset.analyzers.theta_signal)),
        ("gamma", repr(apparatus.gamma_mode_overlap)),
        ("period_mm", repr(geometry.fringe_period_mm)),
        ("slit_mm", repr(geometry.slit_width_mm)),
        ("pair_rate_hz", repr(apparatus.pair_rate_hz)),
        ("accidental_rate_hz", repr(apparatus.accidental_rate_hz)),
        ("dwell_s", repr(apparatus.integration_time_s)),
        ("seed", str(dataset.seed)),
        ("theta_a_idler_deg", _csv_degrees(dataset.analyzers.theta_idler)),
        ("phase_offset_rad", repr(geometry.phase_offset_rad)),
        ("x_origin_mm", repr(geometry.x_origin_mm)),
        ("detector_distance_mm", repr(geometry.detector_distance_mm)),
        ("crystal_separation_mm", repr(geometry.crystal_separation_mm)),
        ("wavelength_nm", repr(geometry.wavelength_nm)),
    ]
    lines = [f"# {key}={value}" for key, value in meta]
    lines.append("x_mm,counts")
    lines.extend(f"{x!r},{c}" for x, c in dataset.points)
    return "\n".join(lines) + "\n"


def write_fringe_csv(dataset: FringeDataset, file: str | Path | IO[str]) -> None:
    """Write a dataset to a path or text file object."""
    text = fringe_csv_text(dataset)
    if isinstance(file, (str, Path)):
        Path(file).write_text(text)
    else:
        file.write(text)


def _parse_metadata(lines: Iterable[str]) -> tuple[dict[str, str], list[str]]:
    meta: dict[str, str] = {}
    rows: list[str] = []
    known = set(_REQUIRED_KEYS) | set(_OPTIONAL_KEYS)
    in_header = True
    for raw in lines:
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" not in body:
                raise ConfigError(f"malformed metadata line: {line!r}")
            key, value = body.split("=", 1)
            key = key.strip()
            if key not in known:
                raise ConfigError(f"unknown metadata key: {key!r}")
            meta[key] = value.strip()
            continue
        if in_header:
            if line.strip() != "x_mm,counts":
                raise ConfigError(f"expected header 'x_mm,counts', got {line!r}")
            in_header = False
            continue
        rows.append(line)
    if in_header:
        raise ConfigError("missing 'x_mm,counts' header")
    missing = [key for key in _REQUIRED_KEYS if key not in meta]
    if missing:
        raise ConfigError(f"missing metadata keys: {', '.join(missing)}")
    return meta, rows


def read_fringe_csv(file: str | Path | IO[str]) -> FringeDataset:
    """Parse a dataset written by :func:`write_fringe_csv`."""
    if isinstance(file, (str, Path)):
        lines = Path(file).read_text().splitlines()
    else:
        lines = file.read().splitlines()
    meta, rows = _parse_metadata(lines)

    theta_signal = _parse_angle(meta["theta_a_deg"])
    theta_idler = (
        _parse_angle(meta["theta_a_idler_deg"])
        if "theta_a_idler_deg" in meta
        else theta_signal
    )
    theta_p = _parse_angle(meta["theta_p_deg"])
    if theta_p is None:
        raise ConfigError("theta_p_deg must be a number")
    apparatus = ApparatusModel(
        gamma_mode_overlap=float(meta["gamma"]),
        pair_rate_hz=float(meta["pair_rate_hz"]),
        accidental_rate_hz=float(meta["accidental_rate_hz"]),
        integration_time_s=float(meta["dwell_s"]),
    )
    geometry = Geometry(
        fringe_period_mm=float(meta["period_mm"]),
        phase_offset_rad=float(meta.get("phase_offset_rad", "0.0")),
        x_origin_mm=float(meta.get("x_origin_mm", "0.0")),
        slit_width_mm=float(meta["slit_mm"]),
        detector_distance_mm=float(meta.get("detector_distance_mm", "800.0")),
        crystal_separation_mm=float(meta.get("crystal_separation_mm", "5.0")),
        wavelength_nm=float(meta.get("wavelength_nm", "884.0")),
    )

    xs, counts = [], []
    for row in rows:
        parts = row.split(",")
        if len(parts) != 2:
            raise ConfigError(f"malformed data row: {row!r}")
        xs.append(float(parts[0]))
        counts.append(int(parts[1]))
    return FringeDataset(
        x_mm=np.asarray(xs, dtype=float),
        counts=np.asarray(counts, dtype=np.int64),
        theta_p=theta_p,
        analyzers=AnalyzerPair(theta_signal=theta_signal, theta_idler=theta_idler),
        apparatus=apparatus,
        geometry=geometry,
        seed=int(meta["seed"]),
    )
