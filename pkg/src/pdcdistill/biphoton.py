"""Two-level amplitude algebra for photon pairs born in one of two crystals.

A pump beam drives two thin down-conversion crystals with perpendicular
optical axes.  A photon pair is created either in the first crystal (both
photons H-polarized) or in the second (both V-polarized), so the two-photon
field lives in the span of ``|2_H,0_V>`` and ``|0_H,2_V>``:

    |psi> = cos(theta_p) |2_H,0_V> + sin(theta_p) e^{i phi} |0_H,2_V>

where ``theta_p`` is the pump polarization angle and ``phi`` the relative
phase between the two birth positions.  Polarization analyzers at angles
``(theta_s, theta_i)`` in the signal and idler arms rescale the amplitudes by
``cos(theta_s) cos(theta_i)`` and ``sin(theta_s) sin(theta_i)``; the filtered
state is kept sub-normalized so that the post-selection success probability
(the yield) stays observable.

All functions are pure; values are immutable and safe to share across
threads.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

__all__ = [
    "Angle",
    "BiphotonState",
    "AnalyzerPair",
    "FilteredState",
    "prepare_state",
    "project_analyzers",
    "concurrence",
    "ideal_visibility",
    "distillation_angle",
    "balance_residual",
    "renormalize",
]

# Constructor tolerance: floating-point round-off may push a unit state's
# squared norm a few ulp above 1.
_NORM_SQ_TOL = 1e-9


@dataclass(frozen=True, order=True)
class Angle:
    """A plane angle stored in radians.  Interfaces accept degrees and convert."""

    radians: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.radians):
            raise ValueError(f"angle must be finite, got {self.radians!r}")

    @classmethod
    def from_degrees(cls, degrees: float) -> "Angle":
        return cls(math.radians(degrees))

    @property
    def degrees(self) -> float:
        return math.degrees(self.radians)

    def __repr__(self) -> str:
        return f"Angle({self.degrees:.6g} deg)"


@dataclass(frozen=True)
class BiphotonState:
    """Amplitude pair over the basis {|2_H,0_V>, |0_H,2_V>}.

    The squared norm must lie in (0, 1]: sub-normalized states represent
    post-selected filtering output, the zero state is rejected because no
    surviving ensemble exists for it.
    """

    amp_h: complex
    amp_v: complex

    def __post_init__(self) -> None:
        for name, amp in (("amp_h", self.amp_h), ("amp_v", self.amp_v)):
            if not (math.isfinite(amp.real) and math.isfinite(amp.imag)):
                raise ValueError(f"{name} must be finite, got {amp!r}")
        n2 = self.norm_sq
        if n2 == 0.0:
            raise ValueError("zero-norm state: the pair is fully blocked")
        if n2 > 1.0 + _NORM_SQ_TOL:
            raise ValueError(f"squared norm {n2} exceeds 1: state is not physical")

    @property
    def norm_sq(self) -> float:
        return abs(self.amp_h) ** 2 + abs(self.amp_v) ** 2

    @property
    def relative_phase(self) -> float:
        """Phase of the V-pair amplitude relative to the H-pair amplitude."""
        return cmath.phase(self.amp_v) - cmath.phase(self.amp_h)


@dataclass(frozen=True)
class AnalyzerPair:
    """Analyzer orientations for the signal and idler arms.

    ``None`` means the analyzer is removed from that arm (unit transmission
    for both polarizations).  The balanced configuration used on the bench
    sets both arms to the same angle; build it with :meth:`both`.
    """

    theta_signal: Angle | None
    theta_idler: Angle | None

    @classmethod
    def both(cls, theta: Angle) -> "AnalyzerPair":
        return cls(theta_signal=theta, theta_idler=theta)


@dataclass(frozen=True)
class FilteredState:
    """Post-analyzer state (unnormalized) plus its post-selection probability."""

    state: BiphotonState
    yield_probability: float


def prepare_state(theta_p: Angle, phi: Angle = Angle(0.0)) -> BiphotonState:
    """Pump-controlled superposition cos(theta_p)|2,0> + sin(theta_p) e^{i phi}|0,2>.

    ``theta_p = 45 deg`` gives the maximally entangled state; 0 or 90 deg give
    product states where only one crystal is pumped.
    """
    return BiphotonState(
        amp_h=complex(math.cos(theta_p.radians), 0.0),
        amp_v=math.sin(theta_p.radians) * cmath.exp(1j * phi.radians),
    )


def _arm_factors(theta: Angle | None) -> tuple[float, float]:
    # (transmission amplitude for an H photon, for a V photon)
    if theta is None:
        return 1.0, 1.0
    return math.cos(theta.radians), math.sin(theta.radians)


def project_analyzers(state: BiphotonState, analyzers: AnalyzerPair) -> FilteredState:
    """Project both photons onto the analyzer axes.

    Each H-pair photon passes its analyzer with amplitude cos(theta), each
    V-pair photon with sin(theta), so

        amp_h -> amp_h * cos(theta_s) * cos(theta_i)
        amp_v -> amp_v * sin(theta_s) * sin(theta_i)

    and with equal angles the familiar cos^2/sin^2 coefficients appear.  The
    output keeps the filtered (sub-normalized) amplitudes; its yield is the
    probability that a pair survives both analyzers.  Raises ``ValueError``
    if the analyzers block the state completely (zero surviving amplitude).
    """
    ch_s, sv_s = _arm_factors(analyzers.theta_signal)
    ch_i, sv_i = _arm_factors(analyzers.theta_idler)
    amp_h = state.amp_h * ch_s * ch_i
    amp_v = state.amp_v * sv_s * sv_i
    out_norm_sq = abs(amp_h) ** 2 + abs(amp_v) ** 2
    if out_norm_sq == 0.0:
        raise ValueError("analyzers block the state completely: no pairs survive")
    return FilteredState(
        state=BiphotonState(amp_h, amp_v),
        yield_probability=out_norm_sq / state.norm_sq,
    )


def concurrence(state: BiphotonState) -> float:
    """Entanglement of the two-level superposition: 2|a||b| / (|a|^2 + |b|^2).

    Equals 1 iff the amplitude moduli balance, 0 for a product state, and is
    independent of normalization and of the relative phase.
    """
    ah, av = abs(state.amp_h), abs(state.amp_v)
    return 2.0 * ah * av / (ah * ah + av * av)


def ideal_visibility(state: BiphotonState) -> float:
    """Contrast of the coincidence fringe a lossless bench would measure.

    Scanning the relative phase modulates the coincidence rate as
    ``|a|^2 + |b|^2 + 2|a||b| cos(phi)``, whose contrast coincides with
    :func:`concurrence` for this state family.  Kept as its own operation
    because the experiment accesses entanglement only through this number.
    """
    return concurrence(state)


def distillation_angle(theta_p: Angle) -> Angle:
    """Analyzer angle that rebalances the superposition, restoring visibility 1.

    Solves cos(theta_p) cos^2(theta_a) = sin(theta_p) sin^2(theta_a) for the
    unique root in (0, 90) deg:  theta_a = arctan(sqrt(cot(theta_p))).
    Product states (theta_p = 0 or 90 deg) have a vanishing coefficient that
    no finite analyzer angle can balance, so the domain is open.
    """
    tp = theta_p.radians
    if not 0.0 < tp < 0.5 * math.pi:
        raise ValueError(
            f"theta_p must lie strictly inside (0, 90) deg, got {theta_p.degrees:g} deg"
        )
    return Angle(math.atan(math.sqrt(1.0 / math.tan(tp))))


def balance_residual(theta_p: Angle, theta_a: Angle) -> float:
    """Signed imbalance cos(theta_p) cos^2(theta_a) - sin(theta_p) sin^2(theta_a).

    Zero exactly when the analyzers equalize the two superposition
    coefficients, i.e. at the angle returned by :func:`distillation_angle`.
    """
    tp, ta = theta_p.radians, theta_a.radians
    return math.cos(tp) * math.cos(ta) ** 2 - math.sin(tp) * math.sin(ta) ** 2


def renormalize(state: BiphotonState) -> BiphotonState:
    """Scale to unit norm, preserving the amplitude ratio and relative phase."""
    n = math.sqrt(state.norm_sq)
    return BiphotonState(state.amp_h / n, state.amp_v / n)
