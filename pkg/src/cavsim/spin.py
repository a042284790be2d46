"""Effective spin model obtained by eliminating excited states and photons.

Each site carries a lambda atom with ground states ``a`` (spin down) and
``b`` (spin up) and an excited state ``e``.  Two lasers and the collective
photon modes of the tunnelling-coupled cavity chain drive Raman transitions
between ``a`` and ``b``; at second order these generate the spin Hamiltonian

    H_spin = sum_j B_j sz_j
             + sum_{j != l} (J_jl s+_j s+_l + conj(J_jl) s-_j s-_l + K_jl s+_j s-_l).

All frequencies are angular (rad/s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from cavsim.errors import InvalidParameterError, ModelInvalidError

__all__ = [
    "LambdaAtomSpec",
    "DriveSpec",
    "CollectiveModeBasis",
    "FrameDetunings",
    "SpinModelParams",
    "SpinTrajectory",
    "collective_modes",
    "frame_detunings",
    "coupling_matrix",
    "validity_ratios",
    "spin_parameters",
    "spin_hamiltonian",
    "spin_evolve",
    "effective_hamiltonian_terms",
    "effective_schrodinger_evolve",
    "model_deviation",
    "fit_damped_oscillation",
]


@dataclass(frozen=True)
class LambdaAtomSpec:
    """Lambda atom; ``gamma`` is the amplitude decay rate of ``e``.

    The branching weights split spontaneous emission from ``e`` into the
    channels ``e -> a``, ``e -> b`` and ``e -> x`` (``x`` lies outside the
    lambda system).
    """

    omega_e: float
    omega_b: float
    gamma: float
    w_ae: float = 0.5
    w_be: float = 1.0 / 6.0
    w_xe: float = 1.0 / 3.0

    def __post_init__(self):
        for name in ("omega_e", "omega_b"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive and finite")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise InvalidParameterError("gamma must be >= 0")
        weights = (self.w_ae, self.w_be, self.w_xe)
        if min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-12:
            raise InvalidParameterError(f"branching weights {weights} must be >= 0 and sum to 1")


@dataclass(frozen=True)
class DriveSpec:
    """Laser Rabi frequencies (complex allowed) and angular frequencies."""

    Omega_a: complex
    Omega_b: complex
    nu_a: float
    nu_b: float

    def __post_init__(self):
        for name in ("Omega_a", "Omega_b", "nu_a", "nu_b"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")


@dataclass(frozen=True)
class CollectiveModeBasis:
    """Normal modes ``a_k = sum_j s[j, k] a_j`` of an open chain of ``N`` cavities."""

    N: int
    omega_C: float
    J: float
    k: np.ndarray = field(init=False, repr=False)
    omega_k: np.ndarray = field(init=False, repr=False)
    s: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.N) < 1:
            raise InvalidParameterError(f"N must be >= 1, got {self.N}")
        N = int(self.N)
        k = np.pi * np.arange(1, N + 1) / (N + 1)
        j = np.arange(1, N + 1)
        s = math.sqrt(2.0 / (N + 1)) * np.sin(np.outer(j, k))
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "omega_k", self.omega_C - 2 * self.J * np.cos(k))
        object.__setattr__(self, "s", s)

    def to_collective(self, local):
        """Coefficients on the collective modes of a local-mode vector (``s`` is orthogonal)."""
        return self.s.T @ np.asarray(local)

    def to_local(self, collective):
        return self.s @ np.asarray(collective)


def collective_modes(N: int, omega_C: float, J: float) -> CollectiveModeBasis:
    return CollectiveModeBasis(N, omega_C, J)


@dataclass(frozen=True)
class FrameDetunings:
    delta: float
    Delta_a: float
    Delta_b: float
    delta_k_a: np.ndarray
    delta_k_b: np.ndarray
    delta_a: float
    delta_b: float


def frame_detunings(atom: LambdaAtomSpec, drives: DriveSpec,
                    modes: CollectiveModeBasis) -> FrameDetunings:
    """Detunings in the frame where ``b`` rotates at ``omega_b - delta``.

    ``delta`` is chosen so that ``delta_k_a - Delta_b == delta_k_b - Delta_a``
    for every mode.  ``delta_a``/``delta_b`` refer to the bare cavity frequency.
    """
    delta = atom.omega_b - 0.5 * (drives.nu_a - drives.nu_b)
    b_frame = atom.omega_b - delta
    delta_a = atom.omega_e - modes.omega_C
    delta_b = atom.omega_e - b_frame - modes.omega_C
    # offsets from the bare cavity avoid subtracting optical frequencies per mode
    shift = 2 * modes.J * np.cos(modes.k)
    return FrameDetunings(
        delta=delta,
        Delta_a=atom.omega_e - drives.nu_a,
        Delta_b=atom.omega_e - b_frame - drives.nu_b,
        delta_k_a=delta_a + shift,
        delta_k_b=delta_b + shift,
        delta_a=delta_a,
        delta_b=delta_b,
    )


def coupling_matrix(g_x: complex, modes: CollectiveModeBasis) -> np.ndarray:
    """``g[j, k] = s[j, k] * g_x`` for one transition."""
    return modes.s * g_x


@dataclass
class SpinModelParams:
    """Effective spin parameters plus the detunings and validity ratios they came from.

    ``J`` and ``K`` are the per-ordered-pair coefficients of ``H_spin``; the
    net coefficient of ``s+_1 s+_2`` is therefore ``J[0,1] + J[1,0]``.
    """

    N: int
    B_sites: np.ndarray
    J: np.ndarray
    K: np.ndarray
    detunings: FrameDetunings
    ratios: dict
    closed_form: bool = False

    @property
    def B(self) -> float:
        return float(self.B_sites[0])

    @property
    def validity_max(self) -> float:
        return max(self.ratios.values()) if self.ratios else 0.0

    def pair_coefficient(self, j: int = 0, l: int = 1) -> complex:
        """Total coefficient of ``s+_j s+_l`` in ``H_spin`` (both orderings)."""
        return complex(self.J[j, l] + self.J[l, j])


def validity_ratios(Omega_a, Omega_b, g_a_jk: np.ndarray, g_b_jk: np.ndarray,
                    det: FrameDetunings, fsr_W: float | None = None) -> dict:
    """Dimensionless smallness parameters of the adiabatic elimination.

    Returns a name -> value mapping containing ``|Omega_x / (2 Delta_x)|``,
    the worst ``|Omega_x g_{y,j,k} / (2 Delta_x (Delta_x - delta_k^y))|`` over
    sites and modes, and, when ``fsr_W`` is given, ``|Delta_x - delta_y| / FSR_W``.
    Degenerate denominators give ``inf``.
    """
    Omegas = {"a": Omega_a, "b": Omega_b}
    Deltas = {"a": det.Delta_a, "b": det.Delta_b}
    gs = {"a": np.asarray(g_a_jk), "b": np.asarray(g_b_jk)}
    dks = {"a": np.asarray(det.delta_k_a), "b": np.asarray(det.delta_k_b)}
    dys = {"a": det.delta_a, "b": det.delta_b}
    out = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        for x in "ab":
            Om, De = Omegas[x], Deltas[x]
            out[f"Omega_{x}/2Delta_{x}"] = _safe_ratio(abs(Om), abs(2 * De))
            for y in "ab":
                denom = np.abs(2 * De * (De - dks[y]))[None, :]
                num = np.abs(Om * gs[y])
                vals = np.where(num == 0, 0.0, num / denom)
                out[f"Omega_{x}g_{y}/2Delta_{x}(Delta_{x}-delta_k{y})"] = float(np.max(vals))
                if fsr_W is not None:
                    out[f"|Delta_{x}-delta_{y}|/FSR_W"] = abs(De - dys[y]) / fsr_W
    return out


def _safe_ratio(num, den):
    if num == 0:
        return 0.0
    if den == 0:
        return math.inf
    return float(num / den)


def _general_parameters(Oa, Ob, ga, gb, det):
    """B per site and the J, K matrices from the mode sums."""
    Da, Db = det.Delta_a, det.Delta_b
    dka, dkb = np.asarray(det.delta_k_a), np.asarray(det.delta_k_b)
    N = ga.shape[0]
    sum_b_bb = (np.abs(gb) ** 2 / (dkb - Db)[None, :]).sum(axis=1)
    sum_b_aa = (np.abs(ga) ** 2 / (dka - Db)[None, :]).sum(axis=1)
    sum_a_aa = (np.abs(ga) ** 2 / (dka - Da)[None, :]).sum(axis=1)
    sum_a_bb = (np.abs(gb) ** 2 / (dkb - Da)[None, :]).sum(axis=1)
    B = (
        det.delta / 2
        - abs(Ob) ** 2 / (8 * Db**2) * (
            Db - abs(Ob) ** 2 / (2 * Db) - abs(Oa) ** 2 / (4 * (Da - Db)) - sum_b_bb - sum_b_aa
        )
        + abs(Oa) ** 2 / (8 * Da**2) * (
            Da - abs(Oa) ** 2 / (2 * Da) - abs(Ob) ** 2 / (4 * (Db - Da)) - sum_a_aa - sum_a_bb
        )
    )
    w_b = 1.0 / (dkb - Da)
    w_a = 1.0 / (dka - Db)
    # J[j,l] = pref * sum_k conj(gb[j,k]) ga[l,k] / (dkb - Da)
    Jm = Oa * np.conj(Ob) / (4 * Da * Db) * (np.conj(gb) * w_b) @ ga.T
    # K[j,l] = |Oa|^2/(4Da^2) sum_k conj(gb[l,k]) gb[j,k] w_b + |Ob|^2/(4Db^2) sum_k conj(ga[j,k]) ga[l,k] w_a
    Km = (abs(Oa) ** 2 / (4 * Da**2)) * (gb * w_b) @ np.conj(gb).T
    Km = Km + (abs(Ob) ** 2 / (4 * Db**2)) * (np.conj(ga) * w_a) @ ga.T
    off = ~np.eye(N, dtype=bool)
    return np.real_if_close(B).astype(float), Jm * off, Km * off


def _closed_form_n2(Oa, Ob, ga, gb, det, J):
    """Two-site closed forms with the mode sums carried out by hand.

    The pair terms carry ``-J`` because the antisymmetric mode ``k = 2 pi/3``
    lies above the symmetric one by ``2 J``.
    """
    Da, Db = det.Delta_a, det.Delta_b
    da, db = det.delta_a, det.delta_b

    def lor(x):
        return x / (x**2 - J**2)

    B = (
        det.delta / 2
        - abs(Ob) ** 2 / (8 * Db**2) * (
            Db - abs(Ob) ** 2 / (2 * Db) - abs(Oa) ** 2 / (4 * (Da - Db))
            - abs(gb) ** 2 * lor(db - Db) - abs(ga) ** 2 * lor(da - Db)
        )
        + abs(Oa) ** 2 / (8 * Da**2) * (
            Da - abs(Oa) ** 2 / (2 * Da) - abs(Ob) ** 2 / (4 * (Db - Da))
            - abs(ga) ** 2 * lor(da - Da) - abs(gb) ** 2 * lor(db - Da)
        )
    )
    pair_J = -Oa * np.conj(Ob) / (4 * Da * Db) * np.conj(gb) * ga * J / ((db - Da) ** 2 - J**2)
    pair_K = -(
        abs(Ob) ** 2 / (4 * Db**2) * abs(ga) ** 2 * J / ((da - Db) ** 2 - J**2)
        + abs(Oa) ** 2 / (4 * Da**2) * abs(gb) ** 2 * J / ((db - Da) ** 2 - J**2)
    )
    off = np.array([[0.0, 1.0], [1.0, 0.0]])
    return np.array([B, B], dtype=float), pair_J * off, pair_K * off


def spin_parameters(
    N: int,
    g_a: complex,
    g_b: complex,
    drives: DriveSpec,
    detunings: FrameDetunings,
    modes: CollectiveModeBasis,
    closed_form_N2: bool = False,
    fsr_W: float | None = None,
    force: bool = False,
) -> SpinModelParams:
    """Transverse field and pair couplings of the effective spin Hamiltonian.

    Raises
    ------
    ModelInvalidError
        If any validity ratio is >= 1 and ``force`` is false.
    """
    if modes.N != N:
        raise InvalidParameterError(f"mode basis has N={modes.N}, expected {N}")
    if closed_form_N2 and N != 2:
        raise InvalidParameterError("closed-form parameters exist only for N=2")
    ga = coupling_matrix(g_a, modes)
    gb = coupling_matrix(g_b, modes)
    Oa, Ob = drives.Omega_a, drives.Omega_b
    ratios = validity_ratios(Oa, Ob, ga, gb, detunings, fsr_W)
    bad = {k: v for k, v in ratios.items() if not v < 1.0}
    if bad and not force:
        raise ModelInvalidError(f"adiabatic elimination invalid, ratios >= 1: {bad}")
    if closed_form_N2:
        B, Jm, Km = _closed_form_n2(Oa, Ob, g_a, g_b, detunings, modes.J)
    else:
        B, Jm, Km = _general_parameters(Oa, Ob, ga, gb, detunings)
    return SpinModelParams(N, B, Jm, Km, detunings, ratios, closed_form_N2)


# --- spin dynamics -------------------------------------------------------

_UP = 1
_DOWN = 0


def _site_op(op, j, N):
    mats = [op if i == j else np.eye(2) for i in range(N)]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


_SP = np.array([[0.0, 0.0], [1.0, 0.0]])  # |up><down| with down=0, up=1
_SZ = np.diag([-1.0, 1.0])


def spin_hamiltonian(spin: SpinModelParams) -> np.ndarray:
    """Dense ``2^N`` matrix; local basis ``(down, up) = (a, b)``."""
    N = spin.N
    if N > 10:
        raise InvalidParameterError("dense spin evolution supports N <= 10")
    sp = [_site_op(_SP, j, N) for j in range(N)]
    sz = [_site_op(_SZ, j, N) for j in range(N)]
    H = np.zeros((2**N, 2**N), dtype=complex)
    for j in range(N):
        H += spin.B_sites[j] * sz[j]
        for l in range(N):
            if j == l:
                continue
            Jjl = spin.J[j, l]
            H += Jjl * sp[j] @ sp[l] + np.conj(Jjl) * sp[j].T @ sp[l].T
            H += spin.K[j, l] * sp[j] @ sp[l].T
    return H


def _product_ket(initial, N):
    if isinstance(initial, (np.ndarray, list, tuple)) and len(initial) == 2**N and not isinstance(
        initial[0], str
    ):
        psi = np.asarray(initial, dtype=complex)
        return psi / np.linalg.norm(psi)
    if len(initial) != N:
        raise InvalidParameterError(f"initial state needs {N} site labels")
    names = {"up": _UP, "b": _UP, "down": _DOWN, "a": _DOWN}
    idx = 0
    for label in initial:
        if label not in names:
            raise InvalidParameterError(f"unknown spin label {label!r}")
        idx = 2 * idx + names[label]
    psi = np.zeros(2**N, dtype=complex)
    psi[idx] = 1.0
    return psi


@dataclass
class SpinTrajectory:
    times: np.ndarray
    P_up: np.ndarray  # (T, N)
    P_down: np.ndarray
    states: np.ndarray


def _unitary_trajectory(H, psi0, times, N):
    E, V = np.linalg.eigh(H)
    c0 = V.conj().T @ psi0
    phases = np.exp(-1j * np.outer(times, E))
    states = (phases * c0[None, :]) @ V.T
    probs = np.abs(states) ** 2
    P_up = np.empty((times.size, N))
    for j in range(N):
        up_mask = ((np.arange(2**N) >> (N - 1 - j)) & 1).astype(bool)
        P_up[:, j] = probs[:, up_mask].sum(axis=1)
    return SpinTrajectory(times, P_up, probs.sum(axis=1)[:, None] - P_up, states)


def spin_evolve(spin: SpinModelParams, initial: Sequence[str], times) -> SpinTrajectory:
    """Exact unitary evolution under ``H_spin`` from a product (or explicit) state."""
    times = np.asarray(times, dtype=float)
    H = spin_hamiltonian(spin)
    return _unitary_trajectory(H, _product_ket(initial, spin.N), times, spin.N)


def effective_hamiltonian_terms(g_a, g_b, drives: DriveSpec, det: FrameDetunings,
                                modes: CollectiveModeBasis):
    """Diagonal energies and transition amplitudes of the second-order effective Hamiltonian.

    Returns ``(E_a, E_b, pair_raise, pair_flip)``: per-site energies of
    ``a`` and ``b`` (from the bare frame shift, the light shifts and the
    fourth-order corrections), the amplitude for ``|a_j a_l> -> |b_j b_l>``
    and the amplitude for ``|a_j b_l> -> |b_j a_l>``, both per ordered pair.
    The flip amplitude contains both Raman paths (laser ``a`` with photon
    ``b``, and laser ``b`` with photon ``a``).
    """
    N = modes.N
    Oa, Ob = drives.Omega_a, drives.Omega_b
    Da, Db = det.Delta_a, det.Delta_b
    ga = modes.s * g_a
    gb = modes.s * g_b
    E_a = np.empty(N)
    E_b = np.empty(N)
    for j in range(N):
        tb = sum(
            abs(gb[j, k]) ** 2 / (det.delta_k_b[k] - Db) + abs(ga[j, k]) ** 2 / (det.delta_k_a[k] - Db)
            for k in range(N)
        )
        ta = sum(
            abs(ga[j, k]) ** 2 / (det.delta_k_a[k] - Da) + abs(gb[j, k]) ** 2 / (det.delta_k_b[k] - Da)
            for k in range(N)
        )
        E_b[j] = (
            det.delta
            - abs(Ob) ** 2 / (4 * Db)
            + abs(Ob) ** 2 / (4 * Db**2) * (abs(Ob) ** 2 / (2 * Db) + abs(Oa) ** 2 / (4 * (Da - Db)) + tb)
        )
        E_a[j] = (
            -abs(Oa) ** 2 / (4 * Da)
            + abs(Oa) ** 2 / (4 * Da**2) * (abs(Oa) ** 2 / (2 * Da) + abs(Ob) ** 2 / (4 * (Db - Da)) + ta)
        )
    raise_amp = np.zeros((N, N), dtype=complex)
    flip_amp = np.zeros((N, N), dtype=complex)
    for j in range(N):
        for l in range(N):
            if j == l:
                continue
            raise_amp[j, l] = Oa * np.conj(Ob) / (4 * Da * Db) * sum(
                np.conj(gb[j, k]) * ga[l, k] / (det.delta_k_b[k] - Da) for k in range(N)
            )
            path_b = abs(Ob) ** 2 / (4 * Db**2) * sum(
                np.conj(ga[j, k]) * ga[l, k] / (det.delta_k_a[k] - Db) for k in range(N)
            )
            path_a = abs(Oa) ** 2 / (4 * Da**2) * sum(
                np.conj(gb[l, k]) * gb[j, k] / (det.delta_k_b[k] - Da) for k in range(N)
            )
            flip_amp[j, l] = path_a + path_b
    return E_a, E_b, raise_amp, flip_amp


def effective_schrodinger_evolve(g_a, g_b, drives: DriveSpec, det: FrameDetunings,
                                 modes: CollectiveModeBasis, initial, times) -> SpinTrajectory:
    """Evolution under the effective ground-state Hamiltonian built level by level.

    Works in the ``{a, b}^N`` basis directly with projectors and ``|b><a|``
    transitions rather than Pauli operators, as an independent check of
    :func:`spin_evolve`.
    """
    N = modes.N
    E_a, E_b, raise_amp, flip_amp = effective_hamiltonian_terms(g_a, g_b, drives, det, modes)
    dim = 2**N
    H = np.zeros((dim, dim), dtype=complex)
    bits = [((np.arange(dim) >> (N - 1 - j)) & 1) for j in range(N)]
    for j in range(N):
        H[np.diag_indices(dim)] += np.where(bits[j] == 1, E_b[j], E_a[j])
    for col in range(dim):
        for j in range(N):
            for l in range(N):
                if j == l:
                    continue
                # |b_j b_l><a_j a_l| and its conjugate
                if bits[j][col] == 0 and bits[l][col] == 0:
                    row = col | (1 << (N - 1 - j)) | (1 << (N - 1 - l))
                    H[row, col] += raise_amp[j, l]
                    H[col, row] += np.conj(raise_amp[j, l])
                # |b_j a_l><a_j b_l|
                if bits[j][col] == 0 and bits[l][col] == 1:
                    row = (col | (1 << (N - 1 - j))) & ~(1 << (N - 1 - l))
                    H[row, col] += flip_amp[j, l]
    times = np.asarray(times, dtype=float)
    return _unitary_trajectory(H, _product_ket(initial, N), times, N)


# --- comparison ----------------------------------------------------------


def _damped(t, c0, c1, amp, rate, omega, phase):
    return c0 + c1 * t + amp * np.exp(-rate * t) * np.cos(omega * t + phase)


def fit_damped_oscillation(times, values, omega_guess: float) -> dict:
    """Least-squares fit of ``c0 + c1 t + A exp(-rate t) cos(omega t + phi)``.

    Returns the fitted parameters; ``rate`` is the contrast decay rate (1/s).
    """
    t = np.asarray(times, dtype=float) - float(times[0])
    y = np.asarray(values, dtype=float)
    amp0 = 0.5 * (y.max() - y.min())
    phase0 = 0.0 if y[0] >= y.mean() else math.pi
    scale = t[-1] if t[-1] > 0 else 1.0
    p0 = [y.mean(), 0.0, amp0, 1.0 / (10 * scale), omega_guess, phase0]
    bounds = ([-np.inf, -np.inf, 0.0, -10.0 / scale, 0.5 * omega_guess, -2 * math.pi],
              [np.inf, np.inf, np.inf, 1e3 / scale, 2.0 * omega_guess, 2 * math.pi])
    popt, _ = curve_fit(_damped, t, y, p0=p0, bounds=bounds, maxfev=20000)
    keys = ("offset", "drift", "amplitude", "rate", "omega", "phase")
    return dict(zip(keys, map(float, popt)))


def model_deviation(times_spin, P_up, times_full, P_b, omega_guess: float | None = None) -> dict:
    """Compare spin-up populations with ``b`` populations of the full model.

    Parameters
    ----------
    times_spin, times_full : array
        Must be the same grid.
    P_up, P_b : array, shape (T, N) or (T,)
        Spin-up and ``b``-level populations (mapping up -> b, down -> a).
    omega_guess : float, optional
        Oscillation angular frequency used to seed the damping fits.

    Returns
    -------
    dict
        ``max`` and ``rms`` deviations per site, and the fitted contrast
        decay rates of both models on site 1 when ``omega_guess`` is given.
    """
    ts = np.asarray(times_spin, dtype=float)
    tf = np.asarray(times_full, dtype=float)
    if ts.shape != tf.shape or not np.allclose(ts, tf, rtol=0, atol=1e-15 + 1e-12 * np.abs(ts).max()):
        raise InvalidParameterError("spin and full trajectories use different time grids")
    Pu = np.atleast_2d(np.asarray(P_up, dtype=float).T).T
    Pb = np.atleast_2d(np.asarray(P_b, dtype=float).T).T
    diff = Pb - Pu
    out = {
        "max": np.abs(diff).max(axis=0).tolist(),
        "rms": np.sqrt((diff**2).mean(axis=0)).tolist(),
    }
    if omega_guess is not None:
        out["spin_fit"] = fit_damped_oscillation(ts, Pu[:, 0], omega_guess)
        out["full_fit"] = fit_damped_oscillation(tf, Pb[:, 0], omega_guess)
        out["spin_decay_rate"] = out["spin_fit"]["rate"]
        out["full_decay_rate"] = out["full_fit"]["rate"]
    return out
