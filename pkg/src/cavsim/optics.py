"""Classical optics of one composite (microcavity + waveguide) resonator.

The composite cavity is a three-mirror Fabry-Perot: light enters through the
waveguide mirror ``W``, circulates in the waveguide resonator of optical
length ``L_W``, and couples through the shared mirror ``CW`` into the open
microcavity of length ``L_C`` closed by the concave mirror ``C``.

All frequencies are angular (rad/s); lengths are in metres.  Round-trip
phases follow ``phi = omega * L / c`` so waveguide dispersion is folded into
the optical length ``L_W``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.constants import c as C_LIGHT

from cavsim.errors import InvalidParameterError

__all__ = [
    "MirrorSpec",
    "CompositeCavityGeometry",
    "EffectiveMirror",
    "FieldResponse",
    "ResonanceMode",
    "ZeroReflection",
    "OptimizationResult",
    "bare_rates",
    "waist_for_coupling",
    "effective_mirror",
    "fields_at_phases",
    "composite_reflection",
    "zero_reflection_condition",
    "mode_analysis",
    "mode_at",
    "measure_dip_width",
    "optimize_cooperativity",
]

_SUM_TOL = 1e-12


def _check_finite(name, value, positive=False):
    if not np.isfinite(value):
        raise InvalidParameterError(f"{name} must be finite, got {value!r}")
    if positive and value <= 0:
        raise InvalidParameterError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class MirrorSpec:
    """Power reflectivity, transmission and absorption of one mirror."""

    R: float
    T: float
    A: float = 0.0

    def __post_init__(self):
        for name in ("R", "T", "A"):
            value = getattr(self, name)
            _check_finite(name, value)
            if not 0.0 <= value <= 1.0:
                raise InvalidParameterError(f"mirror {name}={value} outside [0, 1]")
        if abs(self.R + self.T + self.A - 1.0) > _SUM_TOL:
            raise InvalidParameterError(
                f"R + T + A = {self.R + self.T + self.A!r}, expected 1"
            )

    @classmethod
    def lossless(cls, R: float) -> MirrorSpec:
        return cls(R=R, T=1.0 - R, A=0.0)

    @classmethod
    def from_losses(cls, T: float, A: float = 0.0) -> MirrorSpec:
        return cls(R=1.0 - T - A, T=T, A=A)

    @property
    def r(self) -> float:
        """Amplitude reflection coefficient."""
        return math.sqrt(self.R)

    @property
    def t(self) -> float:
        """Amplitude transmission coefficient."""
        return math.sqrt(self.T)


@dataclass(frozen=True)
class CompositeCavityGeometry:
    """Mirrors, lengths and atom of one microcavity/waveguide pair.

    Attributes
    ----------
    L_C, L_W : float
        Microcavity length and waveguide optical length (m).
    wavelength : float
        Atomic transition wavelength (m); sets the reference frequency.
    mirror_W, mirror_CW, mirror_C : MirrorSpec
        Input waveguide mirror, shared coupling mirror, concave mirror.
    K_W : float
        Fractional power loss per waveguide round trip.
    w0 : float
        Microcavity mode waist (1/e^2 intensity radius, m).
    gamma : float
        Atomic amplitude decay rate (rad/s).
    """

    L_C: float
    L_W: float
    wavelength: float
    mirror_W: MirrorSpec
    mirror_CW: MirrorSpec
    mirror_C: MirrorSpec
    K_W: float = 0.0
    w0: float = 4.0e-6
    gamma: float = 2 * math.pi * 3.0e6

    def __post_init__(self):
        for name in ("L_C", "L_W", "wavelength", "w0", "gamma"):
            _check_finite(name, getattr(self, name), positive=True)
        _check_finite("K_W", self.K_W)
        if not self.L_W > self.L_C:
            raise InvalidParameterError(
                f"waveguide must be longer than microcavity (L_W={self.L_W}, L_C={self.L_C})"
            )
        if not 0.0 <= self.K_W < 1.0:
            raise InvalidParameterError(f"K_W={self.K_W} outside [0, 1)")

    @property
    def omega_atom(self) -> float:
        return 2 * math.pi * C_LIGHT / self.wavelength

    @property
    def fsr_W(self) -> float:
        """Waveguide free spectral range pi*c/L_W (rad/s)."""
        return math.pi * C_LIGHT / self.L_W

    @property
    def fsr_C(self) -> float:
        return math.pi * C_LIGHT / self.L_C

    def with_lengths(self, L_C: float | None = None, L_W: float | None = None):
        return replace(
            self,
            L_C=self.L_C if L_C is None else L_C,
            L_W=self.L_W if L_W is None else L_W,
        )


@dataclass(frozen=True)
class EffectiveMirror:
    """Microcavity seen from the waveguide as a single mirror ``r_tilde*exp(i*theta)``."""

    r_tilde: np.ndarray | float
    theta: np.ndarray | float


@dataclass(frozen=True)
class FieldResponse:
    """Reflected and circulating field ratios, all normalised to the input field."""

    reflected: np.ndarray | complex
    circulating_W: np.ndarray | complex
    circulating_C: np.ndarray | complex

    @property
    def reflected_intensity(self):
        return np.abs(self.reflected) ** 2


@dataclass(frozen=True)
class ResonanceMode:
    omega: float
    kappa_tilde: float
    g: float
    C1: float
    reflected_intensity: float = field(default=float("nan"))


@dataclass(frozen=True)
class ZeroReflection:
    feasible: bool
    two_phi_C_opt: float
    phi_W_res: float
    lower_bound: float
    upper_bound: float
    target: float


@dataclass(frozen=True)
class OptimizationResult:
    geometry: CompositeCavityGeometry
    mode: ResonanceMode
    scan_L_C: np.ndarray
    scan_C1: np.ndarray


def bare_rates(geom: CompositeCavityGeometry) -> tuple[float, float, float]:
    """Maximum atom-cavity coupling and bare amplitude decay rates.

    Returns ``(g_AC, kappa_C, kappa_W)`` in rad/s.  The decay rates use the
    small-loss expressions, so they are only meaningful for T, A << 1.
    """
    c = C_LIGHT
    g_AC = math.sqrt(
        3 * c * geom.wavelength**2 * geom.gamma / (math.pi**2 * geom.w0**2 * geom.L_C)
    )
    mC, mCW, mW = geom.mirror_C, geom.mirror_CW, geom.mirror_W
    xi_C = (mC.T + mC.A + mCW.T + mCW.A) / 2
    xi_W = (mW.T + mW.A + mCW.T + mCW.A + geom.K_W) / 2
    kappa_C = c * xi_C / (2 * geom.L_C)
    kappa_W = c * xi_W / (2 * geom.L_W)
    return g_AC, kappa_C, kappa_W


def waist_for_coupling(g_AC: float, L_C: float, wavelength: float, gamma: float) -> float:
    """Mode waist that gives a requested maximum coupling ``g_AC`` (inverse of :func:`bare_rates`)."""
    _check_finite("g_AC", g_AC, positive=True)
    return math.sqrt(3 * C_LIGHT * wavelength**2 * gamma / (math.pi**2 * L_C)) / g_AC


def _microcavity_ratio(geom, phi_C):
    rC, rCW = geom.mirror_C.r, geom.mirror_CW.r
    z = np.exp(2j * np.asarray(phi_C, dtype=float))
    return (rCW - rC * z) / (1 - rCW * rC * z)


def effective_mirror(geom: CompositeCavityGeometry, phi_C) -> EffectiveMirror:
    """Reflection magnitude and phase of the microcavity at one-way phase ``phi_C``.

    ``theta`` comes from ``np.angle`` of the complex ratio; for array input it
    is unwrapped along the last axis so it stays continuous across a resonance.
    """
    ratio = _microcavity_ratio(geom, phi_C)
    theta = np.angle(ratio)
    if np.ndim(theta) >= 1 and np.size(theta) > 1:
        theta = np.unwrap(theta)
    if np.ndim(ratio) == 0:
        return EffectiveMirror(float(np.abs(ratio)), float(theta))
    return EffectiveMirror(np.abs(ratio), theta)


def fields_at_phases(geom: CompositeCavityGeometry, phi_C, phi_W) -> FieldResponse:
    """Composite-cavity response at given one-way propagation phases.

    The waveguide round trip carries an amplitude factor ``sqrt(1 - K_W)``;
    the single pass to the coupling mirror carries its square root.
    """
    mW, mCW, mC = geom.mirror_W, geom.mirror_CW, geom.mirror_C
    rW, rCW, rC = mW.r, mCW.r, mC.r
    phi_C = np.asarray(phi_C, dtype=float)
    phi_W = np.asarray(phi_W, dtype=float)
    loss = math.sqrt(1.0 - geom.K_W)
    zC = np.exp(2j * phi_C)
    zW = loss * np.exp(2j * phi_W)
    ratio = (rCW - rC * zC) / (1 - rCW * rC * zC)
    denom_W = 1 - rW * ratio * zW
    reflected = (rW - ratio * zW) / denom_W
    E_W = mW.t / denom_W
    denom_C = 1 - rC * rCW * zC + rC * rW * zC * zW - rCW * rW * zW
    E_C = mCW.t * mW.t * math.sqrt(loss) * np.exp(1j * phi_W) / denom_C
    return FieldResponse(reflected, E_W, E_C)


def composite_reflection(geom: CompositeCavityGeometry, omega) -> FieldResponse:
    """Reflected and circulating fields for input light at angular frequency ``omega``."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise InvalidParameterError("omega must be positive")
    return fields_at_phases(geom, omega * geom.L_C / C_LIGHT, omega * geom.L_W / C_LIGHT)


def zero_reflection_condition(geom: CompositeCavityGeometry) -> ZeroReflection:
    """Microcavity round-trip phase and waveguide phase giving zero reflection.

    Zero reflection needs ``r_tilde**2 == R_W / (1 - K_W)``.  The achievable
    range of ``r_tilde**2`` runs from its value at ``2*phi_C = 0`` to its value
    at ``2*phi_C = pi``; both ends are returned for diagnostics.
    """
    rC, rCW = geom.mirror_C.r, geom.mirror_CW.r
    target = geom.mirror_W.R / (1.0 - geom.K_W)
    lower = (rC - rCW) ** 2 / (1 - rC * rCW) ** 2
    upper = (rC + rCW) ** 2 / (1 + rC * rCW) ** 2
    b = 2 * rCW * rC
    if b == 0.0 or target == 1.0:
        # r_C = 0 (or r_CW = 0): r_tilde is independent of phi_C
        feasible = bool(np.isclose(target, lower, rtol=0, atol=1e-15))
        two_phi = 0.0
    else:
        arg = (target * (1 + (rC * rCW) ** 2) - (rC**2 + rCW**2)) / (b * (target - 1))
        feasible = bool(-1.0 - 1e-15 <= arg <= 1.0 + 1e-15)
        two_phi = float(np.arccos(np.clip(arg, -1.0, 1.0)))
    theta = effective_mirror(geom, two_phi / 2).theta
    phi_W = float(np.mod(-theta / 2, np.pi))
    return ZeroReflection(feasible, two_phi, phi_W, lower, upper, target)


def _golden_minimize(f, a, b, xtol, maxiter=200):
    inv = (math.sqrt(5) - 1) / 2
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if abs(b - a) <= xtol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (a + b) / 2


def _min_kappa(geom):
    rW, rC, rCW = geom.mirror_W.r, geom.mirror_C.r, geom.mirror_CW.r
    r_max = (rC + rCW) / (1 + rC * rCW)
    kappa = C_LIGHT / (2 * geom.L_W) * (1 - rW * r_max * math.sqrt(1 - geom.K_W))
    return max(kappa, 1e-6 * geom.fsr_W)


def mode_at(geom: CompositeCavityGeometry, omega: float, g_AC: float) -> ResonanceMode:
    """Linewidth, rescaled coupling and cooperativity evaluated at ``omega``.

    ``kappa_tilde = c/(2 L_W) * (1 - r_W r_tilde sqrt(1-K_W))`` treats the
    microcavity as a frequency-independent mirror across one resonance line.
    """
    r_tilde = effective_mirror(geom, omega * geom.L_C / C_LIGHT).r_tilde
    kappa = C_LIGHT / (2 * geom.L_W) * (
        1 - geom.mirror_W.r * r_tilde * math.sqrt(1 - geom.K_W)
    )
    resp = composite_reflection(geom, omega)
    ec2 = float(np.abs(resp.circulating_C) ** 2)
    ew2 = float(np.abs(resp.circulating_W) ** 2)
    total = ec2 + geom.L_W / geom.L_C * ew2
    g = g_AC * math.sqrt(ec2 / total) if total > 0 else 0.0
    C1 = g**2 / (2 * kappa * geom.gamma) if kappa > 0 else float("inf")
    return ResonanceMode(float(omega), float(kappa), float(g), float(C1),
                         float(resp.reflected_intensity))


def mode_analysis(
    geom: CompositeCavityGeometry,
    omega_window: tuple[float, float],
    g_AC: float,
    points_per_linewidth: int = 20,
    max_points: int = 5_000_000,
) -> list[ResonanceMode]:
    """Locate reflection minima inside ``omega_window`` and characterise each mode.

    The window is sampled uniformly with at least ``points_per_linewidth``
    samples across the narrowest possible dip, and every local minimum is
    refined by golden-section search.
    """
    lo, hi = map(float, omega_window)
    if not hi > lo:
        return []
    step = 2 * _min_kappa(geom) / points_per_linewidth
    n = int(math.ceil((hi - lo) / step)) + 1
    if n > max_points:
        raise InvalidParameterError(
            f"window needs {n} samples (> {max_points}); narrow it"
        )
    n = max(n, 3)
    omega = np.linspace(lo, hi, n)
    R = composite_reflection(geom, omega).reflected_intensity
    interior = np.flatnonzero((R[1:-1] < R[:-2]) & (R[1:-1] <= R[2:])) + 1
    h = omega[1] - omega[0]
    modes = []
    for i in interior:
        center = omega[i]

        def f(x, center=center):
            return float(composite_reflection(geom, center + x).reflected_intensity)

        x = _golden_minimize(f, -h, h, xtol=1e-9 * h)
        modes.append(mode_at(geom, center + x, g_AC))
    return modes


def measure_dip_width(geom: CompositeCavityGeometry, omega0: float) -> float:
    """Numerical FWHM (rad/s) of the reflection dip centred at ``omega0``.

    The baseline is the reflectance half a waveguide FSR away on either side;
    the width is measured at half depth between baseline and dip minimum.
    """
    half = geom.fsr_W / 2

    def R(w):
        return float(composite_reflection(geom, w).reflected_intensity)

    base = 0.5 * (R(omega0 - half) + R(omega0 + half))
    level = 0.5 * (base + R(omega0))

    def g(w):
        return R(w) - level

    left = optimize.brentq(g, omega0 - half, omega0, xtol=1e-6)
    right = optimize.brentq(g, omega0, omega0 + half, xtol=1e-6)
    return right - left


def _c1_at_resonance(geom, L_C, L_W_range, omega_A, g_AC):
    """C1 of the composite mode pinned at ``omega_A`` by retuning ``L_W``; None if impossible."""
    phi_C = omega_A * L_C / C_LIGHT
    theta = float(np.angle(_microcavity_ratio(geom, phi_C)))
    lo, hi = L_W_range
    unit = C_LIGHT * math.pi / omega_A  # L_W period of the resonance condition
    base = C_LIGHT * (-theta / 2) / omega_A
    mid = 0.5 * (lo + hi)
    n = round((mid - base) / unit)
    candidates = [base + m * unit for m in (n - 1, n, n + 1)]
    inside = [L for L in candidates if lo - 1e-15 <= L <= hi + 1e-15]
    if not inside:
        return None, None
    L_W = min(inside, key=lambda L: abs(L - mid))
    trial = geom.with_lengths(L_C=L_C, L_W=L_W)
    return mode_at(trial, omega_A, g_AC).C1, L_W


def optimize_cooperativity(
    geom: CompositeCavityGeometry,
    L_C_range: tuple[float, float],
    L_W_range: tuple[float, float],
    g_AC: float | None = None,
    atomic_omega: float | None = None,
) -> OptimizationResult:
    """Maximise the single-atom cooperativity of the mode resonant with the atom.

    For each microcavity length the waveguide length is retuned inside
    ``L_W_range`` so that a composite resonance sits exactly at
    ``atomic_omega``; ``L_C`` is then scanned and refined with Brent's method.
    Mirror specifications are held fixed.  ``g_AC`` defaults to the value
    implied by the geometry's waist.
    """
    for name, (lo, hi) in (("L_C_range", L_C_range), ("L_W_range", L_W_range)):
        _check_finite(name, lo, positive=True)
        _check_finite(name, hi, positive=True)
        if lo > hi:
            raise InvalidParameterError(f"{name} is inverted: ({lo}, {hi})")
    if geom.mirror_CW.T == 0.0 or geom.mirror_W.T == 0.0:
        raise InvalidParameterError(
            "degenerate geometry: zero transmission through the input or coupling mirror"
        )
    omega_A = geom.omega_atom if atomic_omega is None else float(atomic_omega)
    if g_AC is None:
        g_AC = bare_rates(geom)[0]
    lo, hi = L_C_range
    # resolve 1e-3 rad of microcavity round-trip phase
    dL = 1e-3 * C_LIGHT / (2 * omega_A)
    n = min(int(math.ceil((hi - lo) / dL)) + 1, 20001) if hi > lo else 1
    grid = np.linspace(lo, hi, n)
    c1 = np.full(n, -np.inf)
    for i, L_C in enumerate(grid):
        value, _ = _c1_at_resonance(geom, L_C, L_W_range, omega_A, g_AC)
        if value is not None:
            c1[i] = value
    if not np.any(np.isfinite(c1)):
        raise InvalidParameterError(
            "no waveguide length in L_W_range puts a resonance at the atomic frequency; "
            "the range must span at least half a wavelength"
        )
    best = int(np.argmax(c1))
    L_best = grid[best]
    if n > 2:
        a = grid[max(best - 1, 0)]
        b = grid[min(best + 1, n - 1)]

        def neg(L):
            value, _ = _c1_at_resonance(geom, L, L_W_range, omega_A, g_AC)
            return np.inf if value is None else -value

        res = optimize.minimize_scalar(neg, bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-15})
        if res.success and -res.fun >= c1[best]:
            L_best = float(res.x)
    _, L_W = _c1_at_resonance(geom, L_best, L_W_range, omega_A, g_AC)
    tuned = geom.with_lengths(L_C=float(L_best), L_W=float(L_W))
    window = (omega_A - tuned.fsr_W / 4, omega_A + tuned.fsr_W / 4)
    modes = mode_analysis(tuned, window, g_AC)
    mode = min(modes, key=lambda m: abs(m.omega - omega_A)) if modes else mode_at(
        tuned, omega_A, g_AC
    )
    return OptimizationResult(tuned, mode, grid, c1)
