"""Liouvillian construction, steady states, and the cluster-fidelity scan.

Vectorization is row-major (C order): ``vec(A rho B) = (A kron B^T) vec(rho)``,
matching ``ndarray.reshape``.  The unconditional generator

    Lhat = -i (H kron 1 - 1 kron H^T)
         + sum_k [ L_k kron conj(L_k)
                   - (L_k'L_k kron 1 + 1 kron (L_k'L_k)^T) / 2 ]

acts on ``vec(rho)``.  Steady states are null vectors of ``Lhat``; small
problems take the full spectrum, large ones shift-invert Arnoldi around zero
with a deterministic start vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import DimensionError, ModelError, ResourceError, SolverError
from .operators import QuantumState, dagger, hermitize, is_hermitian, overlap_fidelity
from .models import DqcChainParams, dqc_chain
from .operators import cluster_state

__all__ = [
    "LiouvillianMatrix",
    "SteadyStateResult",
    "fidelity_scan",
    "lindblad_evolution",
    "steady_state",
    "vectorize",
]

# Full dense eigendecomposition below this superoperator size; Arnoldi above.
FULL_SPECTRUM_MAX = 1024
# Hard cap on the dense superoperator (64 GB-class memory is out of scope).
SUPEROP_MAX = 4096


@dataclass(frozen=True)
class LiouvillianMatrix:
    """Dense superoperator ``(dim^2, dim^2)`` over row-major vec."""

    matrix: np.ndarray
    dim: int

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.dim**2, self.dim**2):
            raise DimensionError(f"Liouvillian shape {m.shape} != ({self.dim**2}, {self.dim**2})")
        object.__setattr__(self, "matrix", m)


@dataclass
class SteadyStateResult:
    state: QuantumState
    residual: float
    spectral_gap: float
    degenerate: bool
    degraded: bool = False


def vectorize(H: np.ndarray, Ls) -> LiouvillianMatrix:
    """Build the dense unconditional generator over row-major ``vec``."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionError(f"Hamiltonian must be square, got shape {H.shape}")
    if not is_hermitian(H):
        raise ModelError("Hamiltonian is not Hermitian within tolerance")
    d = H.shape[0]
    if d * d > SUPEROP_MAX:
        raise ResourceError(f"superoperator dimension {d * d} exceeds the cap {SUPEROP_MAX}")
    eye = np.eye(d)
    out = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for L in Ls:
        L = np.asarray(L, dtype=complex)
        if L.shape != H.shape:
            raise DimensionError(f"collapse operator shape {L.shape} != {H.shape}")
        LdL = dagger(L) @ L
        out += np.kron(L, L.conj()) - 0.5 * (np.kron(LdL, eye) + np.kron(eye, LdL.T))
    return LiouvillianMatrix(matrix=out, dim=d)


def _state_from_vec(v: np.ndarray, d: int) -> tuple[np.ndarray, float]:
    rho = hermitize(v.reshape(d, d))
    tr = np.trace(rho).real
    return rho, tr


def _pick_null_vector(vals: np.ndarray, vecs: np.ndarray, d: int, null_mask: np.ndarray):
    """Among near-null eigenvectors prefer the one with the largest trace."""
    best, best_tr = None, 0.0
    for j in np.nonzero(null_mask)[0]:
        rho, tr = _state_from_vec(vecs[:, j], d)
        if abs(tr) > abs(best_tr):
            best, best_tr = rho, tr
    if best is None or abs(best_tr) < 1e-12:
        raise SolverError("null space contains no trace-carrying state")
    return best / best_tr


def steady_state(liouv: LiouvillianMatrix, tol: float = 1e-9) -> SteadyStateResult:
    """Steady state of a Liouvillian with residual/gap/degeneracy diagnostics.

    ``degenerate`` is set when more than one eigenvalue has a real part within
    ``tol * max|lambda|`` of zero — the steady state is then not unique and
    the returned one is the trace-carrying representative.  If the eigensolve
    residual exceeds tolerance, a long-time integration fallback is used and
    flagged with ``degraded``.
    """
    D = liouv.matrix
    n = D.shape[0]
    d = liouv.dim

    if n <= FULL_SPECTRUM_MAX:
        vals, vecs = sla.eig(D)
        scale = max(float(np.abs(vals).max()), 1e-30)
        null_mask = np.abs(vals.real) < tol * scale
        if not null_mask.any():
            null_mask = np.abs(vals.real) == np.abs(vals.real).min()
        rho = _pick_null_vector(vals, vecs, d, null_mask)
        degenerate = int(null_mask.sum()) > 1
        nonnull = ~null_mask
        gap = float((-vals.real[nonnull]).min()) if nonnull.any() else 0.0
    else:
        scale = float(np.abs(D).sum(axis=0).max())  # 1-norm
        sigma = 1e-8 * max(scale, 1.0)
        lu = sla.lu_factor(D - sigma * np.eye(n))
        op_inv = spla.LinearOperator((n, n), matvec=lambda x: sla.lu_solve(lu, x), dtype=complex)
        v0 = np.eye(d, dtype=complex).reshape(-1) / np.sqrt(d)
        k = min(6, n - 2)
        try:
            vals, vecs = spla.eigs(
                D, k=k, sigma=sigma, OPinv=op_inv, v0=v0, ncv=min(n, 48), maxiter=5000
            )
        except spla.ArpackNoConvergence as exc:
            # shift-invert converges nearest-to-sigma first, so any partial
            # result already contains the near-null vector we are after
            vals, vecs = exc.eigenvalues, exc.eigenvectors
            if vals.size == 0:  # pragma: no cover - rare
                raise SolverError(f"shift-invert Arnoldi did not converge: {exc}") from exc
        null_mask = np.abs(vals.real) < tol * max(float(np.abs(vals).max()), scale * 1e-12)
        if not null_mask.any():
            null_mask = np.abs(vals.real) == np.abs(vals.real).min()
        rho = _pick_null_vector(vals, vecs, d, null_mask)
        degenerate = int(null_mask.sum()) > 1
        nonnull = ~null_mask
        gap = float((-vals.real[nonnull]).min()) if nonnull.any() else 0.0

    norm = float(np.abs(D).sum(axis=0).max())
    residual = float(np.linalg.norm(D @ rho.reshape(-1)))
    degraded = False
    if residual > 1e-8 * max(norm, 1.0):
        # fallback: relax an arbitrary state for many gap times
        t_long = 50.0 / gap if gap > 0 else 50.0 / max(norm, 1.0)
        v = spla.expm_multiply(D * t_long, np.eye(d, dtype=complex).reshape(-1) / d)
        rho, tr = _state_from_vec(v, d)
        if abs(tr) < 1e-12:
            raise SolverError("long-time fallback lost all trace")
        rho = rho / tr
        residual = float(np.linalg.norm(D @ rho.reshape(-1)))
        degraded = True
        if residual > 1e-6 * max(norm, 1.0):
            raise SolverError(f"steady-state residual {residual:.3g} did not converge")

    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -1e-8:
        raise SolverError(f"steady state has negative population {evals.min():.3g}")
    return SteadyStateResult(
        state=QuantumState(rho),
        residual=residual,
        spectral_gap=gap,
        degenerate=degenerate,
        degraded=degraded,
    )


def lindblad_evolution(H: np.ndarray, Ls, rho0, times) -> list[QuantumState]:
    """Exact unconditional evolution ``rho(t) = exp(Lhat t) rho0`` at given times.

    Dense ``expm`` per time point — meant for oracle-grade references on
    small systems, not production integration.
    """
    liouv = vectorize(H, Ls)
    m0 = rho0.matrix if isinstance(rho0, QuantumState) else np.asarray(rho0, dtype=complex)
    tr = np.trace(m0).real
    v0 = (m0 / tr).reshape(-1)
    out = []
    for t in np.asarray(times, dtype=float):
        v = sla.expm(liouv.matrix * t) @ v0
        rho = hermitize(v.reshape(liouv.dim, liouv.dim))
        out.append(QuantumState(rho / np.trace(rho).real))
    return out


def fidelity_scan(
    n_values,
    gamma_over_alpha: float,
    etas,
    alpha: float = 1.0,
    include_no_feedback: bool = True,
    tol: float = 1e-9,
) -> list[dict]:
    """Steady-state cluster fidelity across chain sizes and efficiencies.

    One row per (size, configuration): the no-feedback lossy chain and the
    feedback-corrected chain at each efficiency.  Fidelity is the overlap
    ``sqrt(Tr[rho_ss rho_cluster])`` against the pure target.
    """
    rows: list[dict] = []
    for n in n_values:
        target = cluster_state(int(n))
        configs: list[tuple[str, float | None]] = []
        if include_no_feedback:
            configs.append(("no_feedback", None))
        configs.extend(("feedback", float(e)) for e in etas)
        for label, eta in configs:
            params = DqcChainParams(
                n_sites=int(n),
                alpha=alpha,
                gamma=gamma_over_alpha * alpha,
                eta=1.0 if eta is None else eta,
            )
            model = dqc_chain(params, with_feedback=eta is not None)
            liouv = vectorize(model.H, [ch.L for ch in model.channels])
            res = steady_state(liouv, tol=tol)
            rows.append(
                {
                    "n_sites": int(n),
                    "config": label,
                    "eta": np.nan if eta is None else eta,
                    "fidelity": overlap_fidelity(res.state, target),
                    "residual": res.residual,
                    "spectral_gap": res.spectral_gap,
                    "degenerate": res.degenerate,
                    "degraded": res.degraded,
                }
            )
    return rows
