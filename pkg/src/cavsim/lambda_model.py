"""Master-equation dynamics of lambda atoms in coupled cavities.

Two representations of the same physics are provided:

``full-ip``
    The interaction-picture Hamiltonian with every term rotating at its
    single-photon detuning (``Delta_x`` for lasers, ``delta_k^x`` for photons),
    integrated by adaptive Runge-Kutta.  Exact within the model, but the
    ~10 GHz phases make it expensive beyond a few microseconds.

``secular``
    A static generator.  The excited level is split into two sideband copies,
    ``eA`` reached by laser ``a`` (or by a ``b``-photon from ``b``) and ``eB``
    reached by laser ``b`` (or by an ``a``-photon from ``a``).  In a frame
    where ``eA`` sits at ``Delta_a``, ``eB`` at ``Delta_b`` and one photon in
    mode ``k`` at ``Delta_a - delta_k^b``, all near-resonant couplings are
    static; the terms that are dropped rotate at ``|Delta_a - Delta_b|``.

Both use spontaneous emission from the excited level(s) to ``a``, ``b`` and
the outside state ``x`` with the atom's branching weights, and photon loss at
``kappa_tilde`` from each collective mode (equivalent to loss from each local
mode, since the mode transformation is orthogonal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from cavsim.errors import InvalidParameterError, StiffnessError
from cavsim.operators import (
    DensityState,
    LindbladChannel,
    ProductSpace,
    QOperator,
    Subsystem,
    check_density,
    coordinates_to_matrix,
    destroy,
    evolve,
    matrix_to_coordinates,
    real_generator_from_operators,
    transition,
)
from cavsim.spin import CollectiveModeBasis, DriveSpec, LambdaAtomSpec, frame_detunings

__all__ = [
    "LambdaTrajectory",
    "LambdaModel",
    "build_lambda_model",
    "lambda_evolve",
    "loss_lifetime",
    "exchange_contrast",
]

DEFAULT_SECULAR_CUTOFF = 2 * math.pi * 1e9


@dataclass
class LambdaTrajectory:
    """Site-resolved populations and local photon numbers.

    ``populations[label]`` has shape ``(T, N)`` for labels ``a``, ``b``,
    ``e`` and ``x``; ``n_local`` holds lab-frame local photon numbers.
    """

    mode: str
    times: np.ndarray
    populations: dict
    n_local: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class LambdaModel:
    """Assembled operators for one representation."""

    mode: str
    space: ProductSpace
    static: np.ndarray
    rotating: list  # (operator matrix, angular frequency); Hermitian conjugates implied
    channels: list
    projectors: dict
    photon_pairs: np.ndarray  # (K, K, d, d) of a_k^dag a_k'
    s: np.ndarray
    photon_phase_rates: np.ndarray  # (K, K) lab-frame phase rate of <a_k^dag a_k'>
    N: int

    def hamiltonian(self, t: float) -> np.ndarray:
        H = self.static.copy()
        for op, w in self.rotating:
            c = np.exp(1j * w * t)
            H += c * op
            H += np.conj(c) * op.conj().T
        return H


def _ground_labels(mode):
    return ("a", "b", "eA", "eB", "x") if mode == "secular" else ("a", "b", "e", "x")


def build_lambda_model(
    atom: LambdaAtomSpec,
    drives: DriveSpec,
    modes: CollectiveModeBasis,
    g_a: complex,
    g_b: complex,
    kappa_tilde: float,
    mode: str = "secular",
    n_max: int = 2,
    max_excitations: int | None = None,
    cutoff: float = DEFAULT_SECULAR_CUTOFF,
    max_excited_atoms: int | None = 1,
    max_photons: int | None = 1,
) -> LambdaModel:
    """Operators of the chosen representation on an excitation-capped space.

    ``max_excited_atoms`` and ``max_photons`` cap the two kinds of excitation
    separately and ``max_excitations`` caps their sum; ``None`` disables a
    cap.  Capping photons and excited atoms separately, rather than their sum,
    lets a state holding a photon still be light-shifted by the lasers.
    """
    if mode not in ("secular", "full-ip"):
        raise InvalidParameterError(f"mode must be 'secular' or 'full-ip', got {mode!r}")
    if kappa_tilde < 0:
        raise InvalidParameterError("kappa_tilde must be >= 0")
    N = modes.N
    det = frame_detunings(atom, drives, modes)
    if mode == "secular" and abs(det.Delta_a - det.Delta_b) <= cutoff:
        raise InvalidParameterError(
            f"sidebands separated by |Delta_a - Delta_b| = {abs(det.Delta_a - det.Delta_b):.3e} rad/s "
            f"do not exceed the secular cutoff {cutoff:.3e} rad/s; use mode='full-ip'"
        )
    labels = _ground_labels(mode)
    excited = ("eA", "eB") if mode == "secular" else ("e",)
    atoms = tuple(Subsystem.levels(labels, excited=excited, name=f"atom{j + 1}") for j in range(N))
    photons = tuple(Subsystem.boson(n_max, name=f"k{k + 1}") for k in range(N))
    groups = []
    if max_excited_atoms is not None:
        groups.append((tuple(range(N)), max_excited_atoms))
    if max_photons is not None:
        groups.append((tuple(range(N, 2 * N)), max_photons))
    space = ProductSpace(atoms + photons, max_excitations=max_excitations,
                         group_caps=tuple(groups))
    # operators are multiplied in the uncapped space and compressed at the end
    full = space.unrestricted()
    d = full.dimension

    def sig(j, frm, to):
        return transition(full, j, frm, to).matrix

    a_k = [destroy(full, N + k).matrix for k in range(N)]
    ga = modes.s * g_a
    gb = modes.s * g_b
    Oa, Ob = drives.Omega_a, drives.Omega_b

    static = np.zeros((d, d), dtype=complex)
    rotating = []
    for j in range(N):
        static += det.delta * sig(j, "b", "b")
    if mode == "secular":
        eps = det.Delta_a - np.asarray(det.delta_k_b)
        for j in range(N):
            static += det.Delta_a * sig(j, "eA", "eA") + det.Delta_b * sig(j, "eB", "eB")
        for k in range(N):
            static += eps[k] * (a_k[k].conj().T @ a_k[k])
        V = np.zeros((d, d), dtype=complex)
        for j in range(N):
            V += 0.5 * Oa * sig(j, "a", "eA") + 0.5 * Ob * sig(j, "b", "eB")
            for k in range(N):
                V += gb[j, k] * (a_k[k] @ sig(j, "b", "eA"))
                V += ga[j, k] * (a_k[k] @ sig(j, "a", "eB"))
        static += V + V.conj().T
        # <a_k^dag a_k'> picks up exp(-i(eps_k - eps_k')t) into the interaction
        # picture and exp(+i(omega_k - omega_k')t) into the lab; they cancel.
        phase_rates = np.zeros((N, N))
        excited_sets = {j: ("eA", "eB") for j in range(N)}
    else:
        for x, Om, De in (("a", Oa, det.Delta_a), ("b", Ob, det.Delta_b)):
            O = sum(0.5 * Om * sig(j, x, "e") for j in range(N))
            rotating.append((O, De))
        for x, g, dk in (("a", ga, det.delta_k_a), ("b", gb, det.delta_k_b)):
            for k in range(N):
                G = sum(g[j, k] * (a_k[k] @ sig(j, x, "e")) for j in range(N))
                rotating.append((G, float(dk[k])))
        wk = np.asarray(modes.omega_k)
        phase_rates = wk[:, None] - wk[None, :]
        excited_sets = {j: ("e",) for j in range(N)}

    R = space.restrict
    channels = []
    for j in range(N):
        for e in excited_sets[j]:
            for target, w in (("a", atom.w_ae), ("b", atom.w_be), ("x", atom.w_xe)):
                channels.append(LindbladChannel(QOperator(space, R(sig(j, e, target))), atom.gamma * w))
    for k in range(N):
        channels.append(LindbladChannel(QOperator(space, R(a_k[k])), kappa_tilde))

    projectors = {}
    for lab in ("a", "b", "x"):
        projectors[lab] = [R(sig(j, lab, lab)) for j in range(N)]
    projectors["e"] = [R(sum(sig(j, e, e) for e in excited_sets[j])) for j in range(N)]
    pairs = np.array([[R(a_k[k].conj().T @ a_k[kp]) for kp in range(N)] for k in range(N)])
    rotating = [(R(op), w) for op, w in rotating]
    return LambdaModel(mode, space, R(static), rotating, channels, projectors, pairs,
                       np.asarray(modes.s), phase_rates, N)


def _observables(model: LambdaModel, times, states):
    pops = {
        lab: np.stack([np.einsum("ij,tji->t", P, states).real for P in projs], axis=1)
        for lab, projs in model.projectors.items()
    }
    corr = np.einsum("klij,tji->tkl", model.photon_pairs, states)
    corr = corr * np.exp(1j * model.photon_phase_rates[None] * times[:, None, None])
    s = model.s
    n_local = np.einsum("jk,tkl,jl->tj", s, corr, s).real
    return pops, n_local


def _initial_state(model: LambdaModel, initial):
    if isinstance(initial, DensityState):
        if initial.space != model.space:
            raise InvalidParameterError("initial state lives on a different space")
        return initial
    labels = list(initial)
    if len(labels) != model.N:
        raise InvalidParameterError(f"initial state needs {model.N} atomic labels")
    return DensityState.basis(model.space, labels + [0] * model.N)


def _propagate_static(M, x0, times):
    xs = np.empty((times.size, x0.size))
    xs[0] = x0
    cache = {}
    for i in range(1, times.size):
        dt = times[i] - times[i - 1]
        key = round(dt, 18) if dt != 0 else 0.0
        if key not in cache:
            cache[key] = linalg.expm(M * dt)
        xs[i] = cache[key] @ xs[i - 1]
    return xs


def lambda_evolve(
    atom: LambdaAtomSpec,
    drives: DriveSpec,
    modes: CollectiveModeBasis,
    g_a: complex,
    g_b: complex,
    kappa_tilde: float,
    times,
    initial: Sequence[str] | DensityState = ("b", "a"),
    mode: str = "secular",
    n_max: int = 2,
    max_excitations: int | None = None,
    cutoff: float = DEFAULT_SECULAR_CUTOFF,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_excited_atoms: int | None = 1,
    max_photons: int | None = 1,
) -> LambdaTrajectory:
    """Evolve the lambda-atom chain and return populations per site.

    ``initial`` lists one atomic level per site (photons start in vacuum).

    Raises
    ------
    StiffnessError
        If the adaptive integrator fails in ``full-ip`` mode.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) < 0):
        raise InvalidParameterError("times must be a non-empty increasing 1-D grid")
    model = build_lambda_model(atom, drives, modes, g_a, g_b, kappa_tilde, mode, n_max,
                               max_excitations, cutoff, max_excited_atoms, max_photons)
    rho0 = _initial_state(model, initial)
    d = model.space.dimension
    if mode == "secular":
        jumps = [(ch.rate, ch.op.matrix) for ch in model.channels]
        M = real_generator_from_operators(model.static, jumps)
        xs = _propagate_static(M, matrix_to_coordinates(rho0.matrix), times)
        states = np.stack([coordinates_to_matrix(x, d) for x in xs])
    else:
        try:
            traj = evolve(model.hamiltonian, model.channels, rho0, times, rtol=rtol, atol=atol)
        except StiffnessError as exc:
            raise StiffnessError(f"{exc}; the secular mode avoids the fast phases") from None
        states = traj.states
    pops, n_local = _observables(model, times, states)
    diags = [check_density(s) for s in states]
    diagnostics = {
        "dimension": d,
        "max_trace_error": max(x["trace_error"] for x in diags),
        "max_hermiticity": max(x["hermiticity"] for x in diags),
        "min_eigenvalue": min(x["min_eigenvalue"] for x in diags),
    }
    return LambdaTrajectory(mode, times, pops, n_local, diagnostics)


def loss_lifetime(traj: LambdaTrajectory, gamma: float, site: int = 0, w_xe: float = 1.0 / 3.0) -> float:
    """Time scale ``(P_e * w_xe * 2 gamma)**-1`` for leaking out of the lambda system.

    ``P_e`` is the excited fraction of the population still inside the
    lambda manifold, ``P_e / (1 - P_x)``, averaged over the trajectory.
    Without the conditioning the average would drop as the dark state ``x``
    fills up.
    """
    pe = traj.populations["e"][:, site]
    inside = 1.0 - traj.populations["x"][:, site]
    if np.any(inside <= 0):
        raise InvalidParameterError("site has left the lambda manifold entirely")
    frac = float(np.mean(pe / inside))
    if frac <= 0:
        return math.inf
    return 1.0 / (frac * w_xe * 2.0 * gamma)


def exchange_contrast(traj: LambdaTrajectory, t: float, sites=(0, 1)) -> float:
    """Signed fraction of the initial ``b`` imbalance transferred by time ``t``.

    With ``D = P_b[i] - P_b[j]`` this is ``-D(t) / D(0)``.  Evaluated at half
    a flip-flop period, ideal exchange gives 1 and a damped incoherent
    mixture gives about 0.
    """
    i, j = sites
    D = traj.populations["b"][:, i] - traj.populations["b"][:, j]
    if D[0] == 0:
        raise InvalidParameterError("no initial imbalance between the sites")
    if not traj.times[0] <= t <= traj.times[-1]:
        raise InvalidParameterError("t lies outside the trajectory")
    return float(-np.interp(t, traj.times, D) / D[0])
