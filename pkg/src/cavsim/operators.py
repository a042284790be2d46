"""Dense operator algebra on truncated product spaces and Lindblad solvers.

Subsystems are either truncated bosonic modes or atoms with a finite set of
labelled levels.  A :class:`ProductSpace` fixes the tensor-leg order and may
optionally keep only basis states below an excitation cap, which keeps the
multi-atom models small.

Dissipators use the amplitude-rate convention

    D[L] rho = rate * (2 L rho L^dag - L^dag L rho - rho L^dag L),

so a channel of rate ``gamma`` on sigma^- empties the excited state at ``2*gamma``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.integrate import solve_ivp

from cavsim.errors import (
    AmbiguityError,
    InvalidParameterError,
    SpaceMismatchError,
    StiffnessError,
    UndefinedCorrelationError,
)

__all__ = [
    "Subsystem",
    "ProductSpace",
    "QOperator",
    "DensityState",
    "LindbladChannel",
    "Liouvillian",
    "TimeDependentHamiltonian",
    "Trajectory",
    "destroy",
    "number",
    "transition",
    "identity",
    "steady_state",
    "solve_steady_real",
    "ShiftedSteadySolver",
    "evolve",
    "partial_trace",
    "partial_transpose",
    "log_negativity",
    "g2_correlations",
    "check_density",
    "DEFAULT_EXPLICIT_CAP",
]

# Largest Hilbert dimension for which the explicit real Liouvillian is built.
# d=100 gives a 10^4 x 10^4 real matrix (0.8 GB).
DEFAULT_EXPLICIT_CAP = 100


@dataclass(frozen=True)
class Subsystem:
    """One tensor leg: a bosonic mode or a labelled level set.

    ``excitation`` gives the excitation number of each level and is used
    only when the enclosing space carries an excitation cap.
    """

    kind: str
    dimension: int
    labels: tuple[str, ...] = ()
    excitation: tuple[int, ...] = ()
    name: str = ""

    @classmethod
    def boson(cls, n_max: int, name: str = "") -> Subsystem:
        if int(n_max) < 1:
            raise InvalidParameterError(f"n_max must be >= 1, got {n_max}")
        n = int(n_max)
        return cls("boson", n + 1, (), tuple(range(n + 1)), name)

    @classmethod
    def levels(cls, labels: Sequence[str], excited: Sequence[str] = (), name: str = "") -> Subsystem:
        labels = tuple(labels)
        if not labels or len(set(labels)) != len(labels):
            raise InvalidParameterError(f"level labels must be unique and non-empty: {labels}")
        unknown = set(excited) - set(labels)
        if unknown:
            raise InvalidParameterError(f"excited labels {sorted(unknown)} not in {labels}")
        exc = tuple(1 if lab in excited else 0 for lab in labels)
        return cls("levels", len(labels), labels, exc, name)

    @property
    def n_max(self) -> int:
        if self.kind != "boson":
            raise SpaceMismatchError("level subsystem has no photon cutoff")
        return self.dimension - 1

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidParameterError(
                f"unknown level {label!r}; known levels {self.labels}"
            ) from None


@dataclass(frozen=True)
class ProductSpace:
    """Ordered tensor product of subsystems, optionally excitation-capped.

    ``max_excitations`` caps the total excitation number; ``group_caps`` is a
    sequence of ``(legs, cap)`` pairs capping the excitations carried by the
    listed legs only.  A basis state is kept when every cap holds.
    """

    subsystems: tuple[Subsystem, ...]
    max_excitations: int | None = None
    group_caps: tuple = ()
    kept: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        subs = tuple(self.subsystems)
        if not subs:
            raise InvalidParameterError("a product space needs at least one subsystem")
        object.__setattr__(self, "subsystems", subs)
        groups = tuple((tuple(int(i) for i in legs), int(cap)) for legs, cap in self.group_caps)
        for legs, _ in groups:
            if any(not 0 <= i < len(subs) for i in legs):
                raise InvalidParameterError(f"group {legs} names a leg outside the space")
        object.__setattr__(self, "group_caps", groups)
        dims = [s.dimension for s in subs]
        keep = np.ones(int(np.prod(dims)), dtype=bool)

        def count(legs):
            out = np.zeros(1, dtype=int)
            for i, sub in enumerate(subs):
                exc = np.asarray(sub.excitation) if i in legs else np.zeros(sub.dimension, int)
                out = (out[:, None] + exc[None, :]).ravel()
            return out

        if self.max_excitations is not None:
            keep &= count(range(len(subs))) <= self.max_excitations
        for legs, cap in groups:
            keep &= count(legs) <= cap
        object.__setattr__(self, "kept", np.flatnonzero(keep))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dimension for s in self.subsystems)

    @property
    def full_dimension(self) -> int:
        return int(np.prod(self.dims))

    @property
    def dimension(self) -> int:
        return int(self.kept.size)

    @property
    def is_restricted(self) -> bool:
        return self.dimension != self.full_dimension

    def index(self, local: Sequence[int | str]) -> int:
        """Basis index of a product state given per-leg Fock numbers or level labels."""
        if len(local) != len(self.subsystems):
            raise InvalidParameterError("one local index per subsystem is required")
        idx = []
        for sub, value in zip(self.subsystems, local):
            if isinstance(value, str):
                value = sub.index(value)
            if not 0 <= int(value) < sub.dimension:
                raise InvalidParameterError(f"local index {value} out of range for {sub}")
            idx.append(int(value))
        flat = int(np.ravel_multi_index(idx, self.dims))
        pos = np.searchsorted(self.kept, flat)
        if pos >= self.kept.size or self.kept[pos] != flat:
            raise InvalidParameterError(f"state {tuple(local)} exceeds the excitation cap")
        return int(pos)

    def embed(self, local_op: np.ndarray, site: int) -> np.ndarray:
        """Full matrix of ``local_op`` acting on leg ``site`` (identity elsewhere)."""
        mats = [
            local_op if i == site else np.eye(d) for i, d in enumerate(self.dims)
        ]
        full = reduce(np.kron, mats).astype(complex)
        if self.is_restricted:
            full = full[np.ix_(self.kept, self.kept)]
        return full

    def unrestricted(self) -> ProductSpace:
        """Same legs without the excitation cap."""
        return ProductSpace(self.subsystems)

    def restrict(self, full_matrix: np.ndarray) -> np.ndarray:
        """Compress an unrestricted-basis matrix onto the kept states.

        Products must be formed *before* restricting: ``P A P B P`` differs
        from ``P A B P`` whenever ``B`` raises a state above the cap.
        """
        if not self.is_restricted:
            return full_matrix
        return full_matrix[np.ix_(self.kept, self.kept)]

    def to_full(self, matrix: np.ndarray) -> np.ndarray:
        """Zero-pad a (restricted) matrix into the unrestricted product basis."""
        if not self.is_restricted:
            return matrix
        out = np.zeros((self.full_dimension, self.full_dimension), dtype=complex)
        out[np.ix_(self.kept, self.kept)] = matrix
        return out

    def __eq__(self, other):
        return (
            isinstance(other, ProductSpace)
            and self.subsystems == other.subsystems
            and self.max_excitations == other.max_excitations
            and self.group_caps == other.group_caps
        )

    def __hash__(self):
        return hash((self.subsystems, self.max_excitations, self.group_caps))


class QOperator:
    """Dense operator tagged with the space it acts on."""

    __array_priority__ = 1000

    def __init__(self, space: ProductSpace, matrix):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (space.dimension, space.dimension):
            raise SpaceMismatchError(
                f"matrix shape {matrix.shape} does not match space dimension {space.dimension}"
            )
        self.space = space
        self.matrix = matrix

    def _other(self, other):
        if isinstance(other, QOperator):
            if other.space != self.space:
                raise SpaceMismatchError("operators live on different spaces")
            return other.matrix
        return None

    def __add__(self, other):
        m = self._other(other)
        if m is None:
            if np.isscalar(other) and other == 0:
                return self
            return NotImplemented
        return QOperator(self.space, self.matrix + m)

    __radd__ = __add__

    def __sub__(self, other):
        m = self._other(other)
        if m is None:
            return NotImplemented
        return QOperator(self.space, self.matrix - m)

    def __neg__(self):
        return QOperator(self.space, -self.matrix)

    def __mul__(self, scalar):
        if isinstance(scalar, QOperator):
            return self @ scalar
        return QOperator(self.space, self.matrix * complex(scalar))

    def __rmul__(self, scalar):
        return QOperator(self.space, self.matrix * complex(scalar))

    def __truediv__(self, scalar):
        return QOperator(self.space, self.matrix / complex(scalar))

    def __matmul__(self, other):
        m = self._other(other)
        if m is None:
            return NotImplemented
        return QOperator(self.space, self.matrix @ m)

    def dag(self) -> QOperator:
        return QOperator(self.space, self.matrix.conj().T)

    def commutator(self, other: QOperator) -> QOperator:
        return self @ other - other @ self

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix, self.matrix.conj().T, atol=tol, rtol=0))

    def __repr__(self):
        return f"QOperator(dim={self.space.dimension})"


def identity(space: ProductSpace) -> QOperator:
    return QOperator(space, np.eye(space.dimension))


def destroy(space: ProductSpace, site: int) -> QOperator:
    """Truncated annihilation operator of the bosonic leg ``site``."""
    sub = space.subsystems[site]
    if sub.kind != "boson":
        raise SpaceMismatchError(f"subsystem {site} is not a bosonic mode")
    local = np.diag(np.sqrt(np.arange(1, sub.dimension)), k=1)
    return QOperator(space, space.embed(local, site))


def number(space: ProductSpace, site: int) -> QOperator:
    a = destroy(space, site)
    return a.dag() @ a


def transition(space: ProductSpace, site: int, from_label: str, to_label: str) -> QOperator:
    """Embedded ``|to><from|`` on the level-set leg ``site``."""
    sub = space.subsystems[site]
    if sub.kind != "levels":
        raise SpaceMismatchError(f"subsystem {site} is not a level set")
    local = np.zeros((sub.dimension, sub.dimension))
    local[sub.index(to_label), sub.index(from_label)] = 1.0
    return QOperator(space, space.embed(local, site))


def check_density(matrix: np.ndarray) -> dict:
    """Hermiticity error, trace error and smallest eigenvalue of a density matrix."""
    herm = float(np.max(np.abs(matrix - matrix.conj().T))) if matrix.size else 0.0
    trace_err = float(abs(np.trace(matrix) - 1.0))
    min_eig = float(np.linalg.eigvalsh(0.5 * (matrix + matrix.conj().T)).min())
    return {"hermiticity": herm, "trace_error": trace_err, "min_eigenvalue": min_eig}


class DensityState:
    """Density matrix on a product space.

    Construction checks Hermiticity and trace to 1e-9 and positivity to
    -1e-8 unless ``validate=False``.
    """

    def __init__(self, space: ProductSpace, matrix, validate: bool = True):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (space.dimension, space.dimension):
            raise SpaceMismatchError("density matrix shape does not match its space")
        self.space = space
        self.matrix = matrix
        if validate:
            diag = check_density(matrix)
            if diag["hermiticity"] > 1e-9 or diag["trace_error"] > 1e-9:
                raise InvalidParameterError(f"not a normalised Hermitian state: {diag}")
            if diag["min_eigenvalue"] < -1e-8:
                raise InvalidParameterError(f"state is not positive: {diag}")

    @classmethod
    def from_ket(cls, space: ProductSpace, ket) -> DensityState:
        ket = np.asarray(ket, dtype=complex)
        ket = ket / np.linalg.norm(ket)
        return cls(space, np.outer(ket, ket.conj()))

    @classmethod
    def basis(cls, space: ProductSpace, local: Sequence[int | str]) -> DensityState:
        """Pure product basis state, e.g. ``("b", "a", 0, 0)``."""
        rho = np.zeros((space.dimension, space.dimension), dtype=complex)
        i = space.index(local)
        rho[i, i] = 1.0
        return cls(space, rho)

    def expect(self, op: QOperator) -> complex:
        if op.space != self.space:
            raise SpaceMismatchError("operator and state live on different spaces")
        return complex(np.einsum("ij,ji->", op.matrix, self.matrix))

    def diagnostics(self) -> dict:
        return check_density(self.matrix)


@dataclass(frozen=True)
class LindbladChannel:
    op: QOperator
    rate: float

    def __post_init__(self):
        if not np.isfinite(self.rate) or self.rate < 0:
            raise InvalidParameterError(f"channel rate must be finite and >= 0, got {self.rate}")


def _hermitian_coordinates(d):
    iu, ju = np.triu_indices(d, k=1)
    return iu, ju


class Liouvillian:
    """Lindblad generator for a static Hamiltonian and a set of channels.

    Parameters
    ----------
    H : QOperator
    channels : list of LindbladChannel
    cap : int
        Largest Hilbert dimension for which explicit matrices may be built.
    """

    def __init__(self, H: QOperator, channels: Sequence[LindbladChannel] = (),
                 cap: int = DEFAULT_EXPLICIT_CAP):
        for ch in channels:
            if ch.op.space != H.space:
                raise SpaceMismatchError("channel operator and Hamiltonian live on different spaces")
        self.space = H.space
        self.H = H
        self.channels = tuple(channels)
        self.cap = int(cap)
        d = self.space.dimension
        decay = np.zeros((d, d), dtype=complex)
        for ch in self.channels:
            L = ch.op.matrix
            decay += ch.rate * (L.conj().T @ L)
        # rho' = -i (Heff rho - rho Heff^dag) + sum 2 r L rho L^dag
        self._heff = H.matrix - 1j * decay
        self._jumps = [(2.0 * ch.rate, ch.op.matrix) for ch in self.channels if ch.rate > 0]

    @property
    def dimension(self) -> int:
        return self.space.dimension

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Matrix-free action on a density matrix (or a stack of them)."""
        heff = self._heff
        out = -1j * (heff @ rho - rho @ heff.conj().T)
        for r, L in self._jumps:
            out += r * (L @ rho @ L.conj().T)
        return out

    def _require_cap(self):
        if self.dimension > self.cap:
            raise InvalidParameterError(
                f"explicit Liouvillian needs dimension <= {self.cap}, got {self.dimension}"
            )

    def matrix(self) -> np.ndarray:
        """Complex superoperator acting on row-major ``rho.ravel()``."""
        self._require_cap()
        d = self.dimension
        eye = np.eye(d)
        heff = self._heff
        S = -1j * (np.kron(heff, eye) - np.kron(eye, heff.conj()))
        for r, L in self._jumps:
            S += r * np.kron(L, L.conj())
        return S

    def real_matrix(self, block: int = 512) -> np.ndarray:
        """Real generator in Hermitian coordinates (diagonal, Re and Im of the upper triangle).

        Built column by column from the action on matrix units, so no complex
        ``d^2 x d^2`` intermediate is allocated.
        """
        self._require_cap()
        return _real_generator(self._heff, self._jumps, self.dimension, block)


def _units_action(heff, heff_dag, jumps, i_idx, j_idx, d):
    """Stack of L(E_ij) for matrix units E_ij = |i><j|."""
    m = i_idx.size
    ar = np.arange(m)
    out = np.zeros((m, d, d), dtype=complex)
    out[ar, :, j_idx] += -1j * heff[:, i_idx].T
    out[ar, i_idx, :] += 1j * heff_dag[j_idx, :]
    for r, L in jumps:
        out += r * np.einsum("mi,mj->mij", L[:, i_idx].T, L.conj().T[j_idx, :])
    return out


def _coordinates(Y, d):
    """Real coordinates of a stack of Hermitian matrices."""
    iu, ju = _hermitian_coordinates(d)
    di = np.arange(d)
    return np.concatenate(
        [Y[:, di, di].real, Y[:, iu, ju].real, Y[:, iu, ju].imag], axis=1
    )


def _real_generator(heff, jumps, d, block=512):
    heff_dag = heff.conj().T
    iu, ju = _hermitian_coordinates(d)
    n_off = iu.size
    D = d * d
    M = np.empty((D, D))
    di = np.arange(d)
    for start in range(0, d, block):
        sl = di[start:start + block]
        M[:, start:start + sl.size] = _coordinates(
            _units_action(heff, heff_dag, jumps, sl, sl, d), d
        ).T
    for start in range(0, n_off, block):
        a = iu[start:start + block]
        b = ju[start:start + block]
        Eab = _units_action(heff, heff_dag, jumps, a, b, d)
        Eba = _units_action(heff, heff_dag, jumps, b, a, d)
        cols = slice(d + start, d + start + a.size)
        M[:, cols] = _coordinates(Eab + Eba, d).T
        cols = slice(d + n_off + start, d + n_off + start + a.size)
        M[:, cols] = _coordinates(1j * (Eab - Eba), d).T
    return M


def real_generator_from_operators(H: np.ndarray, jump_list=(), block: int = 512) -> np.ndarray:
    """Real Hermitian-coordinate generator for a raw Hamiltonian matrix and ``(rate, L)`` pairs."""
    d = H.shape[0]
    decay = np.zeros((d, d), dtype=complex)
    jumps = []
    for rate, L in jump_list:
        decay += rate * (L.conj().T @ L)
        if rate > 0:
            jumps.append((2.0 * rate, L))
    return _real_generator(np.asarray(H, dtype=complex) - 1j * decay, jumps, d, block)


def coordinates_to_matrix(x: np.ndarray, d: int) -> np.ndarray:
    """Inverse of the Hermitian coordinate map."""
    iu, ju = _hermitian_coordinates(d)
    n_off = iu.size
    rho = np.zeros((d, d), dtype=complex)
    rho[np.arange(d), np.arange(d)] = x[:d]
    upper = x[d:d + n_off] + 1j * x[d + n_off:]
    rho[iu, ju] = upper
    rho[ju, iu] = upper.conj()
    return rho


def matrix_to_coordinates(rho: np.ndarray) -> np.ndarray:
    return _coordinates(rho[None], rho.shape[0])[0]


def solve_steady_real(M: np.ndarray, d: int, residual_tol: float = 1e-10) -> np.ndarray:
    """Trace-normalised null vector of a real generator; returns the density matrix.

    The first diagonal row is replaced by the trace condition.  A singular
    or numerically singular system means the null space is not one
    dimensional and raises :class:`AmbiguityError`.
    """
    A = M.copy()
    A[0, :] = 0.0
    A[0, :d] = 1.0
    rhs = np.zeros(A.shape[0])
    rhs[0] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            x = linalg.solve(A, rhs, overwrite_a=True, check_finite=False)
        except (linalg.LinAlgError, linalg.LinAlgWarning) as exc:
            raise AmbiguityError(
                f"steady state is not unique (singular trace-augmented generator): {exc}"
            ) from None
    scale = np.abs(M).sum(axis=1).max() * max(np.abs(x).max(), 1.0)
    residual = np.abs(M @ x).max()
    if scale > 0 and residual > residual_tol * scale:
        raise AmbiguityError(
            f"steady-state residual {residual:.3e} exceeds {residual_tol:g} x ||L|| ({scale:.3e})"
        )
    return coordinates_to_matrix(x, d)


def _hessenberg_shift_solve(H, eps, rhs):
    """Solve ``(I + eps*H) y = rhs`` for upper-Hessenberg ``H`` by adjacent-row pivoting."""
    K = eps * H
    K[np.diag_indices_from(K)] += 1.0
    y = rhs.copy()
    n = K.shape[0]
    for k in range(n - 1):
        if abs(K[k + 1, k]) > abs(K[k, k]):
            K[[k, k + 1], k:] = K[[k + 1, k], k:]
            y[k], y[k + 1] = y[k + 1], y[k]
        piv = K[k, k]
        if piv == 0.0:
            raise linalg.LinAlgError("zero pivot")
        f = K[k + 1, k] / piv
        if f != 0.0:
            K[k + 1, k:] -= f * K[k, k:]
            y[k + 1] -= f * y[k]
    return linalg.solve_triangular(K, y, check_finite=False)


class ShiftedSteadySolver:
    """Steady states of the affine family ``M(delta) = A + delta * B``.

    With ``M0 = A'`` (trace row inserted) and ``C = M0^{-1} B'`` reduced once to
    Hessenberg form ``C = Q Hs Q^T``, every shifted system becomes
    ``(I + delta*Hs) y = Q^T M0^{-1} e0`` and costs O(D^2).  Each solution is
    checked against the unreduced generator and falls back to a dense solve if
    the residual is poor.
    """

    def __init__(self, A: np.ndarray, B: np.ndarray, d: int, residual_tol: float = 1e-10):
        self.A, self.B, self.d = A, B, d
        self.residual_tol = residual_tol
        M0 = A.copy()
        M0[0, :] = 0.0
        M0[0, :d] = 1.0
        Bp = B.copy()
        Bp[0, :] = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            try:
                lu = linalg.lu_factor(M0, overwrite_a=True, check_finite=False)
            except (linalg.LinAlgError, linalg.LinAlgWarning) as exc:
                raise AmbiguityError(f"reference generator is singular: {exc}") from None
        e0 = np.zeros(A.shape[0])
        e0[0] = 1.0
        C = linalg.lu_solve(lu, Bp, overwrite_b=True, check_finite=False)
        del Bp
        Hs, Q = linalg.hessenberg(C, calc_q=True, overwrite_a=True, check_finite=False)
        self._H = Hs
        self._Q = Q
        self._c = Q.T @ linalg.lu_solve(lu, e0, check_finite=False)
        self._scale_A = np.abs(A).sum(axis=1).max()
        self._scale_B = np.abs(B).sum(axis=1).max()
        self.fallbacks = 0

    def solve(self, delta: float) -> np.ndarray:
        d = self.d
        x = None
        try:
            y = _hessenberg_shift_solve(self._H, float(delta), self._c)
            x = self._Q @ y
        except linalg.LinAlgError:
            x = None
        if x is not None and np.all(np.isfinite(x)):
            residual = np.abs(self.A @ x + delta * (self.B @ x)).max()
            scale = (self._scale_A + abs(delta) * self._scale_B) * max(np.abs(x).max(), 1.0)
            if residual <= self.residual_tol * scale and abs(x[:d].sum() - 1.0) < 1e-10:
                return coordinates_to_matrix(x, d)
        self.fallbacks += 1
        return solve_steady_real(self.A + delta * self.B, d, self.residual_tol)


def steady_state(liouvillian: Liouvillian) -> DensityState:
    """Unique stationary state of an explicit Liouvillian."""
    M = liouvillian.real_matrix()
    rho = solve_steady_real(M, liouvillian.dimension)
    rho = 0.5 * (rho + rho.conj().T)
    return DensityState(liouvillian.space, rho)


class TimeDependentHamiltonian:
    """``H(t) = H0 + sum_k f_k(t) H_k`` with scalar (possibly complex) coefficient functions."""

    def __init__(self, static: QOperator, terms: Sequence[tuple[QOperator, Callable]] = ()):
        for op, _ in terms:
            if op.space != static.space:
                raise SpaceMismatchError("Hamiltonian terms live on different spaces")
        self.space = static.space
        self.static = static.matrix
        self.ops = [op.matrix for op, _ in terms]
        self.funcs = [f for _, f in terms]

    def __call__(self, t: float) -> np.ndarray:
        H = self.static.copy()
        for op, f in zip(self.ops, self.funcs):
            H += f(t) * op
        return H


@dataclass
class Trajectory:
    """Density matrices sampled on a time grid."""

    space: ProductSpace
    times: np.ndarray
    states: np.ndarray
    stats: dict = field(default_factory=dict)

    def expect(self, op: QOperator) -> np.ndarray:
        if op.space != self.space:
            raise SpaceMismatchError("operator and trajectory live on different spaces")
        return np.einsum("ij,tji->t", op.matrix, self.states)

    def state(self, i: int) -> DensityState:
        return DensityState(self.space, self.states[i], validate=False)

    def diagnostics(self) -> dict:
        """Worst trace, Hermiticity and positivity errors over all samples."""
        diags = [check_density(s) for s in self.states]
        return {
            "max_trace_error": max(d["trace_error"] for d in diags),
            "max_hermiticity": max(d["hermiticity"] for d in diags),
            "min_eigenvalue": min(d["min_eigenvalue"] for d in diags),
        }


def evolve(
    H,
    channels: Sequence[LindbladChannel],
    rho0: DensityState,
    times,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    method: str = "DOP853",
    max_step: float = np.inf,
) -> Trajectory:
    """Integrate the master equation with an adaptive embedded Runge-Kutta scheme.

    ``H`` is a :class:`QOperator`, a :class:`TimeDependentHamiltonian`, or any
    callable returning the Hamiltonian matrix at time ``t``.
    """
    space = rho0.space
    for ch in channels:
        if ch.op.space != space:
            raise SpaceMismatchError("channel operator and state live on different spaces")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) < 0):
        raise InvalidParameterError("times must be a non-empty increasing 1-D grid")
    d = space.dimension
    decay = np.zeros((d, d), dtype=complex)
    jumps = []
    for ch in channels:
        L = ch.op.matrix
        decay += ch.rate * (L.conj().T @ L)
        if ch.rate > 0:
            jumps.append((2.0 * ch.rate, L, L.conj().T))

    if isinstance(H, QOperator):
        if H.space != space:
            raise SpaceMismatchError("Hamiltonian and state live on different spaces")
        static = H.matrix - 1j * decay

        def heff_of(t):
            return static
    else:
        def heff_of(t):
            return np.asarray(H(t)) - 1j * decay

    def rhs(t, y):
        rho = y.reshape(d, d)
        heff = heff_of(t)
        out = -1j * (heff @ rho - rho @ heff.conj().T)
        for r, L, Ld in jumps:
            out += r * (L @ rho @ Ld)
        return out.ravel()

    if times.size == 1 or times[-1] == times[0]:
        states = np.repeat(rho0.matrix[None], times.size, axis=0)
        return Trajectory(space, times, states, {"nfev": 0})
    sol = solve_ivp(
        rhs, (times[0], times[-1]), rho0.matrix.ravel().astype(complex),
        method=method, t_eval=times, rtol=rtol, atol=atol, max_step=max_step,
    )
    if sol.status != 0:
        raise StiffnessError(
            f"integration stopped at t={sol.t[-1] if sol.t.size else times[0]:.6e}: {sol.message}"
        )
    states = sol.y.T.reshape(times.size, d, d)
    return Trajectory(space, times, states, {"nfev": int(sol.nfev)})


def _check_sites(space, sites):
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites):
        raise InvalidParameterError(f"duplicate subsystem indices {sites}")
    n = len(space.subsystems)
    for s in sites:
        if not 0 <= s < n:
            raise InvalidParameterError(f"subsystem index {s} out of range")
    return sites


def partial_trace(rho: DensityState, keep: Sequence[int]) -> DensityState:
    """Reduced state on the subsystems ``keep`` (returned in ascending leg order)."""
    space = rho.space
    keep = sorted(_check_sites(space, keep))
    dims = space.dims
    n = len(dims)
    full = space.to_full(rho.matrix).reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = [letters[i] for i in range(n)]
    col = [letters[i].upper() for i in range(n)]
    for i in traced:
        col[i] = row[i]
    out = [row[i] for i in keep] + [col[i] for i in keep]
    red = np.einsum("".join(row) + "".join(col) + "->" + "".join(out), full)
    dk = int(np.prod([dims[i] for i in keep]))
    sub = ProductSpace(tuple(space.subsystems[i] for i in keep))
    return DensityState(sub, red.reshape(dk, dk), validate=False)


def partial_transpose(rho: DensityState, sites: Sequence[int]) -> np.ndarray:
    """Partial transpose on the given legs of an unrestricted-space state."""
    space = rho.space
    sites = _check_sites(space, sites)
    dims = space.dims
    n = len(dims)
    t = space.to_full(rho.matrix).reshape(dims + dims)
    axes = list(range(2 * n))
    for s in sites:
        axes[s], axes[n + s] = axes[n + s], axes[s]
    D = space.full_dimension
    return t.transpose(axes).reshape(D, D)


def log_negativity(rho: DensityState, part_a: Sequence[int], part_b: Sequence[int]) -> float:
    """Logarithmic negativity between two disjoint groups of subsystems.

    Subsystems in neither group are traced out first.
    """
    a = _check_sites(rho.space, part_a)
    b = _check_sites(rho.space, part_b)
    if set(a) & set(b):
        raise InvalidParameterError(f"bipartition overlaps: {a} and {b}")
    if not a or not b:
        raise InvalidParameterError("both sides of the bipartition must be non-empty")
    keep = sorted(a + b)
    red = partial_trace(rho, keep)
    new_b = [keep.index(s) for s in b]
    pt = partial_transpose(red, new_b)
    eig = np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))
    en = float(np.log2(np.abs(eig).sum()))
    if en < -1e-12:
        raise InvalidParameterError(f"negative log-negativity {en:.3e}; input is not a state")
    return max(en, 0.0)


def g2_correlations(rho: DensityState, mode_i: int, mode_j: int) -> float:
    """Normalised equal-time intensity correlation between two bosonic legs."""
    space = rho.space
    ai = destroy(space, mode_i).matrix
    aj = destroy(space, mode_j).matrix
    r = rho.matrix
    ni = float(np.real(np.trace(ai.conj().T @ ai @ r)))
    nj = float(np.real(np.trace(aj.conj().T @ aj @ r)))
    if not (ni > 0 and nj > 0) or ni * nj < 1e-300:
        raise UndefinedCorrelationError(
            f"g2({mode_i},{mode_j}) undefined for photon numbers {ni:.3e}, {nj:.3e}"
        )
    num = np.real(np.trace(ai.conj().T @ aj.conj().T @ aj @ ai @ r))
    return float(num / (ni * nj))
