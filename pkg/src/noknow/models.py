"""Concrete physical models: monitored qubit, general coupling, cluster chain.

The workhorse single-qubit example is dephasing: ``H = Omega sigma_x`` with a
monitored coupling ``L = sqrt(gamma) sigma_z``.  At quadrature angle ``pi/2``
the homodyne signal carries no information and the conditional dynamics can
be undone by feedback; away from it the record localizes the state.

The chain model targets a linear cluster state: each site carries a
quasi-local dissipator

    Q_i = sqrt(alpha) (1 + K_i) sigma_z^i / 2,
    K_i = sigma_z^{i-1} sigma_x^i sigma_z^{i+1}  (truncated at the ends)

whose dark space is spanned by the cluster state, plus photon loss
``sqrt(gamma) sigma_-^i``.  Monitoring the loss through a beamsplitter pair
of Hermitian quadratures at ``pi/2`` and feeding the signals back rescales
the effective loss rate to ``(1 - eta) gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelError, ResourceError, StateError
from .feedback import beamsplitter_network, no_knowledge_feedback
from .operators import cluster_stabilizers, pauli
from .trajectories import Channel, MonitoredModel

__all__ = [
    "BlochState",
    "DephasingQubitParams",
    "DqcChainParams",
    "bloch_rhs",
    "bloch_to_matrix",
    "dephasing_qubit",
    "dqc_chain",
    "general_L_model",
    "matrix_to_bloch",
]

MAX_CHAIN_SITES = 7


@dataclass(frozen=True)
class DephasingQubitParams:
    """Rates and monitoring setup for the dephasing qubit."""

    omega: float = 1.0
    gamma: float = 1.0
    theta: float = np.pi / 2
    eta: float = 1.0

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ModelError(f"gamma must be >= 0, got {self.gamma}")
        if not (0.0 <= self.eta <= 1.0):
            raise ModelError(f"eta must lie in [0, 1], got {self.eta}")


@dataclass(frozen=True)
class BlochState:
    """Bloch vector (x, y, z); physical states satisfy x^2+y^2+z^2 <= 1."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        r2 = self.x**2 + self.y**2 + self.z**2
        if r2 > 1.0 + 1e-6:
            raise StateError(f"Bloch vector has length {np.sqrt(r2):.6f} > 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, b) -> "BlochState":
        x, y, z = np.asarray(b, dtype=float).reshape(3)
        return cls(float(x), float(y), float(z))


def bloch_to_matrix(b) -> np.ndarray:
    """Density matrix ``(1 + b . sigma)/2`` from a Bloch vector."""
    b = b.as_array() if isinstance(b, BlochState) else np.asarray(b, dtype=float).reshape(3)
    return 0.5 * (
        np.eye(2, dtype=complex) + b[0] * pauli("x") + b[1] * pauli("y") + b[2] * pauli("z")
    )


def matrix_to_bloch(rho) -> np.ndarray:
    """Bloch vector of a (possibly unnormalized) qubit state."""
    from .operators import expectation

    return np.array([expectation(pauli(k), rho).real for k in ("x", "y", "z")])


def dephasing_qubit(params: DephasingQubitParams, with_feedback: bool = False) -> MonitoredModel:
    """Driven qubit with homodyne-monitored dephasing.

    ``H = Omega sigma_x``, one homodyne channel ``L = sqrt(gamma) sigma_z`` at
    angle ``theta`` and efficiency ``eta``.  With ``with_feedback`` the
    no-knowledge law (requires ``theta = pi/2``) is attached.
    """
    H = params.omega * pauli("x")
    ch = Channel.homodyne(np.sqrt(params.gamma) * pauli("z"), theta=params.theta, eta=params.eta)
    fb = no_knowledge_feedback([ch]) if with_feedback else None
    return MonitoredModel(H=H, channels=(ch,), feedback=fb)


def bloch_rhs(b, params: DephasingQubitParams, signal: float) -> np.ndarray:
    """Bloch-coordinate form of the monitored dephasing qubit (unit efficiency).

    For the homodyne signal value ``y`` the conditional Bloch vector obeys

        dx/dt =            2 sqrt(gamma) ( y_B sin(theta) - x z cos(theta) ) y
        dy/dt = -Omega z - 2 sqrt(gamma) ( x sin(theta) + y_B z cos(theta) ) y
        dz/dt = +Omega y + 2 sqrt(gamma) ( 1 - z^2 ) cos(theta) y

    with ``y_B`` the Bloch y-component, and the signal itself satisfies
    ``y = 2 sqrt(gamma) cos(theta) z + xi``.  Here ``Omega`` is the precession
    rate about x: a Hamiltonian ``(Omega/2) sigma_x`` in matrix form.
    """
    if params.eta != 1.0:
        raise ModelError("Bloch-coordinate form assumes unit detection efficiency")
    x, y, z = (b.as_array() if isinstance(b, BlochState) else np.asarray(b, dtype=float).reshape(3))
    rg = 2.0 * np.sqrt(params.gamma)
    st, ct = np.sin(params.theta), np.cos(params.theta)
    om = params.omega
    return np.array(
        [
            rg * (y * st - x * z * ct) * signal,
            -om * z - rg * (x * st + y * z * ct) * signal,
            om * y + rg * (1.0 - z * z) * ct * signal,
        ]
    )


def general_L_model(
    H: np.ndarray, L: np.ndarray, eta: float, with_feedback: bool = False
) -> MonitoredModel:
    """Arbitrary coupling monitored through its two Hermitian quadratures.

    Both beamsplitter outputs sit at the no-knowledge angle with shared
    efficiency ``eta``; unmonitored (``eta = 0``) the pair generates
    ``D[L] + D[L']``.  With feedback the residual decoherence is the same
    pair scaled by ``1 - eta``, vanishing entirely at ``eta = 1``.
    """
    channels = beamsplitter_network(L, eta)
    fb = no_knowledge_feedback(channels) if with_feedback else None
    return MonitoredModel(H=np.asarray(H, dtype=complex), channels=channels, feedback=fb)


@dataclass(frozen=True)
class DqcChainParams:
    """Cluster-chain sizes and rates; ``eta`` only matters with feedback."""

    n_sites: int
    alpha: float = 1.0
    gamma: float = 0.0
    eta: float = 1.0

    def __post_init__(self) -> None:
        if self.n_sites < 2:
            raise ModelError(f"chain needs at least 2 sites, got {self.n_sites}")
        if self.n_sites > MAX_CHAIN_SITES:
            raise ResourceError(
                f"{self.n_sites} sites exceeds the dense-matrix budget ({MAX_CHAIN_SITES})"
            )
        if self.alpha < 0 or self.gamma < 0:
            raise ModelError("rates must be >= 0")
        if not (0.0 <= self.eta <= 1.0):
            raise ModelError(f"eta must lie in [0, 1], got {self.eta}")


def dqc_chain(params: DqcChainParams, with_feedback: bool = False) -> MonitoredModel:
    """Cluster-state preparation chain as an unconditional channel model.

    Returns ``H = 0`` with unmonitored channels: the quasi-local ``Q_i`` at
    rate ``alpha`` plus per-site loss.  Without feedback the loss channels
    are ``sqrt(gamma) sigma_-^i``; with feedback they are the residual pair
    ``sqrt((1-eta) gamma) sigma_{+/-}^i`` left over after no-knowledge
    cancellation of the monitored quadratures (dropped entirely when
    ``(1-eta) gamma = 0``).
    """
    n = params.n_sites
    dim = 2**n
    channels: list[Channel] = []
    for i, K in enumerate(cluster_stabilizers(n)):
        q = np.sqrt(params.alpha) * 0.5 * ((np.eye(dim) + K) @ pauli("z", i, n))
        channels.append(Channel.unmonitored(q))
    if with_feedback:
        resid = (1.0 - params.eta) * params.gamma
        if resid > 0.0:
            for i in range(n):
                channels.append(Channel.unmonitored(np.sqrt(resid) * pauli("minus", i, n)))
                channels.append(Channel.unmonitored(np.sqrt(resid) * pauli("plus", i, n)))
    elif params.gamma > 0.0:
        for i in range(n):
            channels.append(Channel.unmonitored(np.sqrt(params.gamma) * pauli("minus", i, n)))
    return MonitoredModel(H=np.zeros((dim, dim), dtype=complex), channels=tuple(channels))
