"""Phenomenological model of the optical bench.

Maps detector position to fringe phase, folds in the two visibility-reducing
imperfections (finite detection slit, imperfect spatial mode overlap between
the two crystals' emission), and predicts mean coincidence counts per dwell.

The true position-to-phase mapping depends on the multimode transverse-field
propagation, which this model does not attempt; the fringe period is a free
parameter and the phase is taken linear in the detector coordinate,

    phi(x) = 2 pi (x - x_origin) / period + phase_offset.

Any phase carried by the prepared state is absorbed into ``phase_offset``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .biphoton import AnalyzerPair, Angle, BiphotonState, ideal_visibility, project_analyzers
from .errors import PoorConditioningWarning

__all__ = [
    "Geometry",
    "ApparatusModel",
    "phase_at",
    "slit_visibility_factor",
    "effective_visibility",
    "expected_coincidence_rate",
]


@dataclass(frozen=True)
class Geometry:
    """Bench geometry at the scan plane of the moving detector.

    ``fringe_period_mm`` is the period of the coincidence fringe seen while
    scanning; it stands in for the geometry-dependent phase map.  The crystal
    separation, detector distance and wavelength document the bench layout
    (defaults follow the reference setup: 5 mm crystal spacing, 80 cm to the
    detectors, 884 nm degenerate wavelength, 0.5 mm slit) but do not feed the
    phase model.
    """

    fringe_period_mm: float = 2.0
    phase_offset_rad: float = 0.0
    x_origin_mm: float = 0.0
    slit_width_mm: float = 0.5
    detector_distance_mm: float = 800.0
    crystal_separation_mm: float = 5.0
    wavelength_nm: float = 884.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.fringe_period_mm) and self.fringe_period_mm > 0.0):
            raise ValueError(f"fringe_period_mm must be > 0, got {self.fringe_period_mm!r}")
        if not (math.isfinite(self.slit_width_mm) and self.slit_width_mm >= 0.0):
            raise ValueError(f"slit_width_mm must be >= 0, got {self.slit_width_mm!r}")
        for name in ("detector_distance_mm", "crystal_separation_mm", "wavelength_nm"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be > 0, got {value!r}")
        if not math.isfinite(self.phase_offset_rad):
            raise ValueError(f"phase_offset_rad must be finite, got {self.phase_offset_rad!r}")
        if not math.isfinite(self.x_origin_mm):
            raise ValueError(f"x_origin_mm must be finite, got {self.x_origin_mm!r}")
        if self.slit_width_mm >= self.fringe_period_mm:
            warnings.warn(
                "slit width >= fringe period: fringes average away at the detector",
                PoorConditioningWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class ApparatusModel:
    """Detection-side parameters: overlap quality, rates and dwell time.

    ``gamma_mode_overlap`` is the visibility ceiling from imperfect spatial
    mode matching between the two crystals' emission; it bundles every
    technical imperfection other than the slit.  Rates are per second at
    unit transmission; ``integration_time_s`` is the dwell per scan point.
    """

    gamma_mode_overlap: float = 0.80
    pair_rate_hz: float = 1.0e5
    accidental_rate_hz: float = 0.0
    integration_time_s: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.gamma_mode_overlap) and 0.0 <= self.gamma_mode_overlap <= 1.0):
            raise ValueError(f"gamma_mode_overlap must be in [0, 1], got {self.gamma_mode_overlap!r}")
        for name in ("pair_rate_hz", "accidental_rate_hz"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be >= 0, got {value!r}")
        if not (math.isfinite(self.integration_time_s) and self.integration_time_s > 0.0):
            raise ValueError(f"integration_time_s must be > 0, got {self.integration_time_s!r}")


def _phase_values(geometry: Geometry, x_mm):
    x = np.asarray(x_mm, dtype=float)
    return (
        2.0 * math.pi * (x - geometry.x_origin_mm) / geometry.fringe_period_mm
        + geometry.phase_offset_rad
    )


def phase_at(geometry: Geometry, x_mm: float) -> Angle:
    """Fringe phase at detector position ``x_mm`` (strictly linear in x)."""
    return Angle(float(_phase_values(geometry, x_mm)))


def slit_visibility_factor(geometry: Geometry) -> float:
    """Contrast reduction from averaging the fringe over the detection slit.

    A top-hat slit of width w averages cos(phi) over w/period of a fringe,
    scaling the contrast by |sinc(pi w / period)|.  Equal to 1 for a point
    detector and first reaches 0 when the slit spans a full period.
    """
    return float(abs(np.sinc(geometry.slit_width_mm / geometry.fringe_period_mm)))


def effective_visibility(
    state: BiphotonState, apparatus: ApparatusModel, geometry: Geometry
) -> float:
    """Fringe contrast the bench would record for ``state`` with zero background.

    Decomposes as mode-overlap ceiling x slit factor x intrinsic state
    visibility.  Background counts reduce the observed contrast further; that
    happens in the rate model, not here.
    """
    return (
        apparatus.gamma_mode_overlap
        * slit_visibility_factor(geometry)
        * ideal_visibility(state)
    )


def expected_coincidence_rate(
    state: BiphotonState,
    analyzers: AnalyzerPair,
    apparatus: ApparatusModel,
    geometry: Geometry,
    x_mm,
):
    """Mean coincidence counts per dwell at detector position ``x_mm``.

    mean = pair_rate * yield * dwell * (1 + V_eff cos(phi(x))) + accidentals * dwell

    where the yield is the analyzer post-selection probability and V_eff the
    effective visibility of the (renormalized) post-analyzer state.  Accepts
    a scalar or an array of positions and returns a matching shape.
    """
    filtered = project_analyzers(state, analyzers)
    v_eff = effective_visibility(filtered.state, apparatus, geometry)
    signal = (
        apparatus.pair_rate_hz * filtered.yield_probability * apparatus.integration_time_s
    )
    background = apparatus.accidental_rate_hz * apparatus.integration_time_s
    mean = signal * (1.0 + v_eff * np.cos(_phase_values(geometry, x_mm))) + background
    if np.isscalar(x_mm):
        return float(mean)
    return mean
