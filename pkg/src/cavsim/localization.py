"""Dynamical localization of one excitation in a periodically driven chain.

Site ``k`` (``k = 1..N``) carries the on-site energy
``(Omega_0 + Omega_1 cos(omega t)) k`` and neighbours hop with strength
``c``.  Because the model is quadratic, one excitation is described exactly by
``N`` complex amplitudes.  When ``Omega_0 / omega = n`` is an integer the
fast drive averages to a static chain with hopping ``c J_{-n}(Omega_1 /
omega)``, and transport stops at the zeros of that Bessel function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special
from scipy.integrate import solve_ivp
from scipy.signal import find_peaks

from cavsim.errors import InvalidParameterError, StiffnessError

__all__ = [
    "DrivenChainParams",
    "ChainState",
    "ChainTrajectory",
    "SuppressionScan",
    "driven_chain_evolve",
    "bessel_effective_evolve",
    "effective_hopping",
    "stroboscopic_fidelity",
    "transport_suppression_scan",
]

NORM_TOL = 1e-10


@dataclass(frozen=True)
class DrivenChainParams:
    """Chain of ``N`` sites; all rates in rad/s."""

    N: int
    Omega_0: float
    Omega_1: float
    omega_drive: float
    c: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise InvalidParameterError(f"N must be an integer >= 2, got {self.N}")
        for name in ("Omega_0", "Omega_1", "omega_drive", "c"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")
        if self.Omega_1 != 0 and not self.omega_drive > 0:
            raise InvalidParameterError("omega_drive must be > 0 when Omega_1 != 0")
        if self.omega_drive < 0:
            raise InvalidParameterError("omega_drive must be >= 0")

    @property
    def period(self) -> float:
        if not self.omega_drive > 0:
            raise InvalidParameterError("undriven chain has no drive period")
        return 2 * math.pi / self.omega_drive

    def replace(self, **changes) -> "DrivenChainParams":
        fields = dict(N=self.N, Omega_0=self.Omega_0, Omega_1=self.Omega_1,
                      omega_drive=self.omega_drive, c=self.c)
        fields.update(changes)
        return DrivenChainParams(**fields)


@dataclass(frozen=True)
class ChainState:
    """Normalised single-excitation amplitudes, one per site."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex)
        if amp.ndim != 1 or amp.size < 2:
            raise InvalidParameterError("amplitudes must be a 1-D array with at least two sites")
        norm = float(np.vdot(amp, amp).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise InvalidParameterError(f"state norm {norm!r} differs from 1 by more than {NORM_TOL}")
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def site(cls, N: int, k: int) -> "ChainState":
        """Excitation localised on site ``k`` (0-based)."""
        if not 0 <= k < N:
            raise InvalidParameterError(f"site {k} outside chain of {N}")
        amp = np.zeros(N, dtype=complex)
        amp[k] = 1.0
        return cls(amp)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass
class ChainTrajectory:
    """Amplitudes ``psi`` of shape ``(T, N)`` on ``times``."""

    times: np.ndarray
    psi: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.psi) ** 2


@dataclass
class SuppressionScan:
    """Maximum end-site population over a fixed horizon versus ``Omega_1/omega``."""

    ratio: np.ndarray
    max_end_population: np.ndarray
    minima: np.ndarray  # ratios of the minima at least a decade deep
    horizon: float


def _hopping(N: int, c: float) -> np.ndarray:
    H = np.zeros((N, N))
    idx = np.arange(N - 1)
    H[idx, idx + 1] = c
    H[idx + 1, idx] = c
    return H


def _check_initial(params: DrivenChainParams, initial) -> np.ndarray:
    if not isinstance(initial, ChainState):
        initial = ChainState(np.asarray(initial, dtype=complex))
    if initial.amplitudes.size != params.N:
        raise InvalidParameterError(
            f"initial state has {initial.amplitudes.size} sites, chain has {params.N}"
        )
    return initial.amplitudes


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) < 0):
        raise InvalidParameterError("times must be a non-empty increasing 1-D grid")
    return times


def _hamiltonian(params: DrivenChainParams):
    k = np.arange(1, params.N + 1, dtype=float)
    hop = _hopping(params.N, params.c)
    O0, O1, w = params.Omega_0, params.Omega_1, params.omega_drive

    def H(t):
        return hop + np.diag((O0 + O1 * math.cos(w * t)) * k)

    return H


def _unitary(U: np.ndarray) -> np.ndarray:
    """Nearest unitary matrix (polar factor)."""
    return linalg.polar(U)[0]


def _propagators(params: DrivenChainParams, taus, rtol, atol) -> np.ndarray:
    """``U(tau)`` for ``0 <= tau`` by adaptive Runge-Kutta on the identity, unitarised."""
    N = params.N
    taus = np.asarray(taus, dtype=float)
    if np.all(taus == 0):
        return np.repeat(np.eye(N, dtype=complex)[None], taus.size, axis=0)
    H = _hamiltonian(params)

    def f(t, y):
        return (-1j * (H(t) @ y.view(complex).reshape(N, N))).reshape(-1).view(float)

    y0 = np.eye(N, dtype=complex).reshape(-1).view(float)
    t_eval, inverse = np.unique(taus, return_inverse=True)
    sol = solve_ivp(f, (0.0, t_eval[-1]), y0, method="DOP853", t_eval=t_eval,
                    rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StiffnessError(f"chain integration failed: {sol.message}")
    mats = np.ascontiguousarray(sol.y.T).view(complex).reshape(-1, N, N)
    mats = np.array([_unitary(U) for U in mats])
    return mats[inverse]


def _evolve_amplitudes(params, psi0, times, rtol, atol):
    """Amplitudes at ``times`` via ``psi(mT + tau) = U(tau) U(T)**m psi(0)``.

    ``H`` is periodic, so Runge-Kutta only ever runs over one drive period and
    the norm error does not grow with the number of periods.
    """
    t = times - times[0]
    if not params.omega_drive > 0:
        w, V = linalg.eigh(_hamiltonian(params)(0.0))
        return (np.exp(-1j * np.outer(t, w)) * (V.conj().T @ psi0)) @ V.T
    if times[0] != 0:
        # H(t) fixes the drive phase at t = 0
        raise InvalidParameterError("driven evolution grids must start at t = 0")
    T = params.period
    m = np.floor(t / T + 1e-12).astype(np.int64)
    tau = np.clip(t - m * T, 0.0, T)
    U_tau = _propagators(params, np.append(tau, T), rtol, atol)
    U_T = U_tau[-1]
    psi = np.empty((t.size, params.N), dtype=complex)
    cache = {}
    for i in np.argsort(m, kind="stable"):
        mi = int(m[i])
        if mi not in cache:
            cache[mi] = np.linalg.matrix_power(U_T, mi) @ psi0
        psi[i] = U_tau[i] @ cache[mi]
    return psi


def driven_chain_evolve(params: DrivenChainParams, initial, times, rtol: float = 1e-12,
                        atol: float = 1e-14) -> ChainTrajectory:
    """Integrate ``i psi' = H(t) psi`` with the full time-dependent on-site drive.

    The one-period propagator is built by adaptive Runge-Kutta on the
    identity, projected onto the nearest unitary and raised to integer powers,
    so the norm stays exact to rounding over any number of periods.  The time
    grid must start at ``t = 0`` (drive phase zero) when the chain is driven.
    """
    times = _check_times(times)
    psi0 = _check_initial(params, initial)
    psi = _evolve_amplitudes(params, psi0, times, rtol, atol)
    norms = np.einsum("tj,tj->t", psi.conj(), psi).real
    return ChainTrajectory(times, psi, {"max_norm_error": float(np.max(np.abs(norms - 1)))})


def effective_hopping(params: DrivenChainParams) -> float:
    """Time-averaged hopping ``c J_{-n}(Omega_1 / omega)`` with ``n = Omega_0 / omega``.

    Raises
    ------
    InvalidParameterError
        If ``Omega_0 / omega`` is not an integer; the averaged model does not exist then.
    """
    if params.Omega_0 == 0 and params.Omega_1 == 0:
        return params.c
    if not params.omega_drive > 0:
        raise InvalidParameterError("a static gradient without drive has no averaged model")
    ratio = params.Omega_0 / params.omega_drive
    n = round(ratio)
    if abs(ratio - n) > 1e-9 * max(1.0, abs(ratio)):
        raise InvalidParameterError(
            f"Omega_0/omega = {ratio!r} is not an integer; effective model undefined"
        )
    return params.c * float(special.jv(-n, params.Omega_1 / params.omega_drive))


def bessel_effective_evolve(params: DrivenChainParams, initial, times) -> ChainTrajectory:
    """Evolve under the static chain with Bessel-renormalised hopping.

    The result is in the interaction picture that removes the on-site drive;
    it coincides with the lab frame at multiples of the drive period.
    """
    times = _check_times(times)
    psi0 = _check_initial(params, initial)
    c_eff = effective_hopping(params)
    H = _hopping(params.N, c_eff)
    w, V = linalg.eigh(H)
    coef = V.conj().T @ psi0
    psi = (np.exp(-1j * np.outer(times - times[0], w)) * coef) @ V.T
    norms = np.einsum("tj,tj->t", psi.conj(), psi).real
    return ChainTrajectory(times, psi, {"c_eff": c_eff,
                                        "max_norm_error": float(np.max(np.abs(norms - 1)))})


def stroboscopic_fidelity(params: DrivenChainParams, initial, periods: int) -> np.ndarray:
    """``|<psi_full|psi_eff>|**2`` at ``t = m T`` for ``m = 0..periods``."""
    if periods < 0:
        raise InvalidParameterError("periods must be >= 0")
    times = params.period * np.arange(periods + 1)
    full = driven_chain_evolve(params, initial, times)
    eff = bessel_effective_evolve(params, initial, times)
    return np.abs(np.einsum("tj,tj->t", full.psi.conj(), eff.psi)) ** 2


def _period_propagator(params: DrivenChainParams) -> np.ndarray:
    return _propagators(params, [params.period], 1e-12, 1e-14)[0]


def transport_suppression_scan(params: DrivenChainParams, ratios, horizon: float,
                               start: int = 0, end: int | None = None) -> SuppressionScan:
    """Largest population reached on the far site within ``horizon`` for each ``Omega_1/omega``.

    The state is sampled once per drive period using the one-period propagator
    from the Runge-Kutta core.  ``params.Omega_1`` is replaced by each ratio
    times ``omega_drive``.
    """
    if not horizon > 0:
        raise InvalidParameterError("horizon must be > 0")
    if not params.omega_drive > 0:
        raise InvalidParameterError("scan needs omega_drive > 0")
    ratios = np.asarray(ratios, dtype=float)
    end = params.N - 1 if end is None else end
    psi0 = ChainState.site(params.N, start).amplitudes
    periods = int(math.ceil(horizon / params.period))
    best = np.empty(ratios.size)
    for i, r in enumerate(ratios):
        U = _period_propagator(params.replace(Omega_1=r * params.omega_drive))
        psi = psi0.copy()
        top = abs(psi[end]) ** 2
        for _ in range(periods):
            psi = U @ psi
            top = max(top, abs(psi[end]) ** 2)
        best[i] = top
    # deep minima only: at least a decade below the neighbouring maxima
    idx, _ = find_peaks(-np.log10(np.maximum(best, 1e-300)), prominence=1.0)
    return SuppressionScan(ratios, best, ratios[idx], periods * params.period)
