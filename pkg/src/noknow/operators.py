"""Operator and state algebra for open-system dynamics.

Conventions
-----------
* Operators are dense complex ``numpy`` arrays.
* Basis ordering on one qubit: ``|e> = (1, 0)``, ``|g> = (0, 1)``, so
  ``sigma_z|e> = +|e>`` and ``sigma_minus = |g><e|``.
* Multi-qubit operators are Kronecker products in site order (site 0 is the
  leftmost factor).
* States are unnormalized: a :class:`QuantumState` carries the working matrix
  plus ``log_norm``, the accumulated log of trace factors divided out along
  the way.  Physical quantities always use the normalized view.

Superoperators used by the measurement equations:

* dissipator        ``D[Z] rho = Z rho Z' - (Z'Z rho + rho Z'Z)/2``
* innovation action ``A[Z] rho = Z rho + rho Z'``
* iterated action   ``A^2[Z] rho = A[Z](A[Z] rho)``

with ``'`` the adjoint.  ``A[Z]`` generates the measurement back-action; its
exponential is the exact conjugation map ``exp(c A[Z]) rho = e^{cZ} rho e^{cZ'}``
because left and right multiplication commute.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ModelError, NumericalError, StateError

__all__ = [
    "TRACE_FLOOR",
    "TRACE_WINDOW",
    "QuantumState",
    "cluster_stabilizers",
    "cluster_state",
    "dagger",
    "dissipator",
    "expectation",
    "frobenius_distance",
    "hermitize",
    "identity",
    "innovation_action",
    "innovation_squared",
    "is_hermitian",
    "is_unitary",
    "lindblad_rhs",
    "overlap_fidelity",
    "pauli",
]

# Unnormalized traces are folded into log_norm once they leave this window.
TRACE_WINDOW = (1e-3, 1e3)
# Below this the state has numerically collapsed and nothing can be salvaged.
TRACE_FLOOR = 1e-300

_PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
    "plus": np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex),
    "minus": np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex),
}


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose (of the last two axes, so stacks work too)."""
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a: np.ndarray) -> np.ndarray:
    """Project onto the Hermitian part, ``(a + a')/2``."""
    return 0.5 * (a + dagger(a))


def is_hermitian(a: np.ndarray, tol: float = 1e-10) -> bool:
    scale = max(np.linalg.norm(a), 1.0)
    return bool(np.linalg.norm(a - dagger(a)) <= tol * scale)


def is_unitary(a: np.ndarray, tol: float = 1e-10) -> bool:
    d = a.shape[-1]
    return bool(np.linalg.norm(dagger(a) @ a - np.eye(d)) <= tol * np.sqrt(d))


def identity(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex)


def _require_square(a: np.ndarray, name: str = "operator") -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {a.shape}")


def _require_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"operator dimensions differ: {a.shape} vs {b.shape}")


def pauli(which: str, site: int = 0, n_sites: int = 1) -> np.ndarray:
    """Single-site Pauli/ladder operator embedded in an ``n_sites`` register.

    Parameters
    ----------
    which : {'i', 'x', 'y', 'z', 'plus', 'minus'}
        ``plus``/``minus`` are the raising/lowering operators in the
        ``sigma_z|e> = +|e>`` convention, i.e. ``minus = |g><e|``.
    site : int
        Which tensor factor carries the operator (0-based, leftmost first).
    n_sites : int
        Register size; the result is ``2**n_sites`` dimensional.
    """
    key = which.lower()
    if key not in _PAULI:
        raise ModelError(f"unknown Pauli label {which!r}; expected one of {sorted(_PAULI)}")
    if n_sites < 1:
        raise DimensionError(f"n_sites must be >= 1, got {n_sites}")
    if not 0 <= site < n_sites:
        raise IndexError(f"site {site} out of range for {n_sites} sites")
    op = np.array([[1.0 + 0.0j]])
    for k in range(n_sites):
        op = np.kron(op, _PAULI[key] if k == site else _PAULI["i"])
    return op


@dataclass(frozen=True)
class QuantumState:
    """Unnormalized density matrix plus accumulated log trace factor.

    ``matrix`` is kept Hermitian by the evolution code; the true (physical)
    density matrix is ``matrix / trace``, and the total norm that has been
    divided out over time is ``exp(log_norm)``.
    """

    matrix: np.ndarray
    log_norm: float = 0.0

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        _require_square(m, "state matrix")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalized(self) -> np.ndarray:
        """Unit-trace view of the state matrix."""
        tr = self.trace
        if not np.isfinite(tr) or tr <= TRACE_FLOOR:
            raise StateError(f"state trace {tr} is not positive")
        return self.matrix / tr

    def purity(self) -> float:
        """``Tr[rho^2]`` of the normalized state."""
        rho = self.normalized()
        return float(np.trace(rho @ rho).real)

    def rescaled(self) -> "QuantumState":
        """Fold the trace into ``log_norm`` once it leaves ``TRACE_WINDOW``."""
        tr = self.trace
        if not np.isfinite(tr) or tr <= TRACE_FLOOR:
            raise StateError(f"state trace {tr} is not positive")
        lo, hi = TRACE_WINDOW
        if lo <= tr <= hi:
            return self
        return QuantumState(self.matrix / tr, self.log_norm + np.log(tr))

    @classmethod
    def pure(cls, ket: np.ndarray) -> "QuantumState":
        v = np.asarray(ket, dtype=complex).reshape(-1)
        n = np.linalg.norm(v)
        if n == 0:
            raise StateError("cannot build a state from the zero vector")
        v = v / n
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "QuantumState":
        return cls(np.eye(dim, dtype=complex) / dim)


def _as_matrix(rho) -> np.ndarray:
    m = rho.matrix if isinstance(rho, QuantumState) else np.asarray(rho, dtype=complex)
    _require_square(m, "state")
    return m


def dissipator(Z: np.ndarray, rho) -> np.ndarray:
    """Lindblad dissipator ``D[Z] rho = Z rho Z' - (Z'Z rho + rho Z'Z)/2``."""
    m = _as_matrix(rho)
    _require_square(Z)
    _require_same_dim(Z, m)
    ZdZ = dagger(Z) @ Z
    return Z @ m @ dagger(Z) - 0.5 * (ZdZ @ m + m @ ZdZ)


def innovation_action(Z: np.ndarray, rho) -> np.ndarray:
    """Measurement back-action generator ``A[Z] rho = Z rho + rho Z'``."""
    m = _as_matrix(rho)
    _require_square(Z)
    _require_same_dim(Z, m)
    return Z @ m + m @ dagger(Z)


def innovation_squared(Z: np.ndarray, rho) -> np.ndarray:
    """Iterated back-action ``A[Z](A[Z] rho)`` (Stratonovich noise correction)."""
    return innovation_action(Z, innovation_action(Z, rho))


def lindblad_rhs(H: np.ndarray, Ls, rho, hermitian_tol: float = 1e-10) -> np.ndarray:
    """Unconditional master-equation right-hand side.

    ``-i[H, rho] + sum_k D[L_k] rho`` for collapse operators ``Ls``.
    """
    m = _as_matrix(rho)
    _require_square(H, "Hamiltonian")
    _require_same_dim(H, m)
    if not is_hermitian(H, hermitian_tol):
        raise ModelError("Hamiltonian is not Hermitian within tolerance")
    out = -1j * (H @ m - m @ H)
    for L in Ls:
        out = out + dissipator(L, m)
    return out


def expectation(X: np.ndarray, rho) -> complex:
    """Normalized expectation ``Tr[X rho] / Tr[rho]``.

    Works on unnormalized states; raises :class:`StateError` when the trace
    is not positive.  Real within rounding when ``X`` is Hermitian and the
    state is.
    """
    m = _as_matrix(rho)
    _require_square(X, "observable")
    _require_same_dim(X, m)
    tr = np.trace(m)
    if not np.isfinite(tr.real) or tr.real <= TRACE_FLOOR:
        raise StateError(f"state trace {tr} is not positive")
    return complex(np.trace(X @ m) / tr)


def frobenius_distance(a, b) -> float:
    """Frobenius distance ``sqrt(Tr[(a-b)^2])`` between normalized states."""
    ma, mb = _as_matrix(a), _as_matrix(b)
    _require_same_dim(ma, mb)
    ta, tb = np.trace(ma).real, np.trace(mb).real
    if ta <= TRACE_FLOOR or tb <= TRACE_FLOOR:
        raise StateError("cannot compare states with non-positive trace")
    diff = ma / ta - mb / tb
    return float(np.linalg.norm(diff))


def overlap_fidelity(rho, target) -> float:
    """Fidelity ``sqrt(Tr[rho target])`` between normalized states.

    This is the overlap form used for comparing a steady state against a pure
    target; it is not the Uhlmann fidelity.  Equals 1 iff both states are the
    same pure state.
    """
    mr, mt = _as_matrix(rho), _as_matrix(target)
    _require_same_dim(mr, mt)
    tr, tt = np.trace(mr).real, np.trace(mt).real
    if tr <= TRACE_FLOOR or tt <= TRACE_FLOOR:
        raise StateError("cannot evaluate fidelity for non-positive trace")
    val = np.trace((mr / tr) @ (mt / tt))
    if abs(val.imag) > 1e-10:
        raise NumericalError(f"fidelity overlap has imaginary part {val.imag}")
    if val.real < -1e-10:
        raise NumericalError(f"fidelity overlap is negative: {val.real}")
    return float(np.sqrt(max(val.real, 0.0)))


def cluster_stabilizers(n_sites: int) -> list[np.ndarray]:
    """Stabilizer generators ``K_i = Z_{i-1} X_i Z_{i+1}`` of the linear cluster state.

    Boundary sites drop the missing neighbour (``K_1 = X_1 Z_2`` and
    ``K_N = Z_{N-1} X_N``); for a single site ``K_1 = X_1``.
    """
    if n_sites < 1:
        raise DimensionError(f"n_sites must be >= 1, got {n_sites}")
    ks = []
    for i in range(n_sites):
        k = pauli("x", i, n_sites)
        if i > 0:
            k = pauli("z", i - 1, n_sites) @ k
        if i < n_sites - 1:
            k = k @ pauli("z", i + 1, n_sites)
        ks.append(k)
    return ks


def cluster_state(n_sites: int) -> QuantumState:
    """Linear cluster state ``prod_i (1 + K_i)/2`` as a density matrix.

    Pure (purity 1), unit trace, and stabilized: ``K_i rho = rho`` for every
    generator.
    """
    dim = 2**n_sites
    rho = np.eye(dim, dtype=complex)
    for k in cluster_stabilizers(n_sites):
        rho = rho @ (np.eye(dim) + k) / 2.0
    return QuantumState(hermitize(rho))
