"""Driven-dissipative Jaynes-Cummings lattice.

Each site holds one two-level atom coupled to one composite-cavity mode;
neighbouring modes exchange photons at rate ``J`` along an open chain and
mode 1 is driven coherently.  Everything is written in the frame rotating at
the laser frequency, so the generator is time independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.constants import hbar
from scipy.signal import find_peaks

from cavsim.errors import CavsimError, InvalidParameterError
from cavsim.operators import (
    DEFAULT_EXPLICIT_CAP,
    DensityState,
    LindbladChannel,
    ProductSpace,
    QOperator,
    Subsystem,
    check_density,
    destroy,
    g2_correlations,
    log_negativity,
    ShiftedSteadySolver,
    real_generator_from_operators,
    transition,
)
from cavsim.optics import CompositeCavityGeometry, composite_reflection, mode_at

__all__ = [
    "JCArrayParams",
    "SteadyScanResult",
    "jc_space",
    "build_jc_array",
    "single_excitation_spectrum",
    "steady_scan",
    "resonance_peaks",
    "drive_power",
    "jc_detuning_grid",
]


@dataclass(frozen=True)
class JCArrayParams:
    """Parameters of the driven lattice; all frequencies and rates in rad/s."""

    N: int
    omega_A: float
    omega_C: float
    g: float
    J: float
    eta: float
    omega_L: float
    kappa_tilde: float
    gamma: float
    n_max: int = 3

    def __post_init__(self):
        if int(self.N) < 1:
            raise InvalidParameterError(f"N must be >= 1, got {self.N}")
        if int(self.n_max) < 1:
            raise InvalidParameterError(f"n_max must be >= 1, got {self.n_max}")
        for name in ("omega_A", "omega_C", "g", "J", "eta", "omega_L", "kappa_tilde", "gamma"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise InvalidParameterError(f"{name} must be finite")
        for name in ("g", "J", "eta", "kappa_tilde", "gamma"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")


@dataclass
class SteadyScanResult:
    """Steady-state observables over a laser-detuning grid.

    ``g2`` maps a mode pair ``(i, j)`` (0-based, ``i <= j``) to its values;
    failed or undefined points hold NaN.
    """

    delta_omega: np.ndarray
    n: np.ndarray
    g2: dict
    log_negativity: np.ndarray
    failed: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def jc_space(N: int, n_max: int) -> ProductSpace:
    """Legs ordered as modes ``0..N-1`` followed by atoms ``N..2N-1``."""
    modes = tuple(Subsystem.boson(n_max, name=f"a{j + 1}") for j in range(N))
    atoms = tuple(
        Subsystem.levels(("g", "e"), excited=("e",), name=f"atom{j + 1}") for j in range(N)
    )
    return ProductSpace(modes + atoms)


def _operators(p: JCArrayParams):
    space = jc_space(p.N, p.n_max)
    a = [destroy(space, j) for j in range(p.N)]
    sm = [transition(space, p.N + j, "e", "g") for j in range(p.N)]
    return space, a, sm


def _hamiltonian(p, a, sm, omega_L):
    space = a[0].space
    H = QOperator(space, np.zeros((space.dimension,) * 2))
    for j in range(p.N):
        H = H + (p.omega_A - omega_L) * (sm[j].dag() @ sm[j])
        H = H + (p.omega_C - omega_L) * (a[j].dag() @ a[j])
        H = H + p.g * (sm[j].dag() @ a[j] + a[j].dag() @ sm[j])
    for j in range(p.N - 1):
        H = H - p.J * (a[j].dag() @ a[j + 1] + a[j + 1].dag() @ a[j])
    H = H + (p.eta / 2) * (a[0] + a[0].dag())
    return H


def build_jc_array(params: JCArrayParams) -> tuple[QOperator, list[LindbladChannel]]:
    """Hamiltonian in the laser frame and the photon/atom loss channels."""
    _, a, sm = _operators(params)
    H = _hamiltonian(params, a, sm, params.omega_L)
    channels = [LindbladChannel(a[j], params.kappa_tilde) for j in range(params.N)]
    channels += [LindbladChannel(sm[j], params.gamma) for j in range(params.N)]
    return H, channels


def single_excitation_spectrum(params: JCArrayParams) -> np.ndarray:
    """Eigenfrequencies of the one-excitation block relative to ``omega_A`` (drive ignored).

    For two resonant sites these are ``(+-J +- sqrt(J**2 + 4 g**2)) / 2``.
    """
    N = params.N
    block = np.zeros((2 * N, 2 * N))
    # basis: atoms 0..N-1, then photons N..2N-1
    for j in range(N):
        block[N + j, N + j] = params.omega_C - params.omega_A
        block[j, N + j] = block[N + j, j] = params.g
    for j in range(N - 1):
        block[N + j, N + j + 1] = block[N + j + 1, N + j] = -params.J
    return np.linalg.eigvalsh(block)


def steady_scan(params: JCArrayParams, delta_omega_grid, cap: int = DEFAULT_EXPLICIT_CAP,
                progress=None) -> SteadyScanResult:
    """Steady-state photon numbers, g2 and mode entanglement versus ``omega_L - omega_A``.

    The real generator is affine in the laser detuning, ``M = A + delta * B``,
    so both pieces are assembled and reduced once (see
    :class:`~cavsim.operators.ShiftedSteadySolver`).
    ``params.omega_L`` is ignored.
    """
    grid = np.asarray(delta_omega_grid, dtype=float)
    space, a, sm = _operators(params)
    d = space.dimension
    if d > cap:
        raise InvalidParameterError(
            f"explicit Liouvillian needs dimension <= {cap}, got {d}; lower N or n_max"
        )
    H0 = _hamiltonian(params, a, sm, params.omega_A).matrix
    jumps = [(params.kappa_tilde, aj.matrix) for aj in a] + [(params.gamma, s.matrix) for s in sm]
    A = real_generator_from_operators(H0, jumps)
    n_tot = sum((aj.dag() @ aj).matrix for aj in a) + sum((s.dag() @ s).matrix for s in sm)
    B = real_generator_from_operators(-n_tot)

    N = params.N
    pairs = [(i, j) for i in range(N) for j in range(i, N)]
    n_out = np.full((grid.size, N), np.nan)
    g2 = {pair: np.full(grid.size, np.nan) for pair in pairs}
    en = np.full(grid.size, np.nan)
    failed = np.zeros(grid.size, dtype=bool)
    worst = {"max_trace_error": 0.0, "max_hermiticity": 0.0, "min_eigenvalue": np.inf}
    num_ops = [(aj.dag() @ aj).matrix for aj in a]
    errors = {}
    solver = ShiftedSteadySolver(A, B, d)
    del A, B
    for p, delta in enumerate(grid):
        try:
            rho_m = solver.solve(delta)
        except CavsimError as exc:
            failed[p] = True
            errors[int(p)] = str(exc)
            continue
        diag = check_density(rho_m)
        worst["max_trace_error"] = max(worst["max_trace_error"], diag["trace_error"])
        worst["max_hermiticity"] = max(worst["max_hermiticity"], diag["hermiticity"])
        worst["min_eigenvalue"] = min(worst["min_eigenvalue"], diag["min_eigenvalue"])
        rho = DensityState(space, rho_m, validate=False)
        n_out[p] = [np.real(np.trace(op @ rho_m)) for op in num_ops]
        for pair in pairs:
            try:
                g2[pair][p] = g2_correlations(rho, *pair)
            except CavsimError:
                pass
        if N >= 2:
            en[p] = log_negativity(rho, [0], [1])
        if progress is not None:
            progress(p, grid.size)
    worst["errors"] = errors
    worst["dense_fallbacks"] = solver.fallbacks
    return SteadyScanResult(grid, n_out, g2, en, failed, worst)


def resonance_peaks(delta_omega: np.ndarray, values: np.ndarray, prominence_frac: float = 0.01):
    """Peak positions of a scanned curve, refined by a three-point parabola."""
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    if not np.any(ok):
        return np.array([])
    y = np.where(ok, values, np.nanmin(values))
    idx, _ = find_peaks(y, prominence=prominence_frac * np.nanmax(y))
    out = []
    for i in idx:
        x0 = delta_omega[i]
        if 0 < i < len(y) - 1:
            y0, y1, y2 = y[i - 1], y[i], y[i + 1]
            den = y0 - 2 * y1 + y2
            h = delta_omega[i + 1] - delta_omega[i]
            if den != 0:
                x0 = x0 + 0.5 * h * (y0 - y2) / den
        out.append(x0)
    return np.asarray(out)


def drive_power(eta: float, geom: CompositeCavityGeometry, omega_L: float,
                kappa_tilde: float | None = None) -> float:
    """Input laser power (W) that produces drive amplitude ``eta`` (rad/s).

    ``kappa_tilde`` defaults to the composite-mode linewidth at ``omega_L``.
    """
    if kappa_tilde is None:
        kappa_tilde = mode_at(geom, omega_L, 0.0).kappa_tilde
    if not kappa_tilde > 0:
        raise InvalidParameterError("kappa_tilde must be positive")
    resp = composite_reflection(geom, omega_L)
    stored = float(abs(resp.circulating_C) ** 2 * geom.L_C + abs(resp.circulating_W) ** 2 * geom.L_W)
    if stored == 0.0:
        raise ZeroDivisionError("no circulating field at omega_L; drive power undefined")
    return hbar * omega_L * (eta / kappa_tilde) ** 2 * C_LIGHT / (2 * stored)


def jc_detuning_grid(points: int = 200, half_span: float = 2 * math.pi * 70e6) -> np.ndarray:
    return np.linspace(-half_span, half_span, points)
