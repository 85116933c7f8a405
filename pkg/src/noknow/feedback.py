"""Feedback laws that cancel measurement back-action.

A homodyne channel measuring a Hermitian coupling ``L`` at quadrature angle
``theta = pi/2`` produces a signal carrying no information about the state
(the mean part vanishes identically), yet its back-action still enters the
conditional state as ``-i[-sqrt(eta) L y, rho]``.  Modulating the Hamiltonian
by ``+sqrt(eta) L y(t)`` therefore erases the back-action pathwise, leaving
deterministic evolution with the monitored dissipator scaled by ``1 - eta``.

Non-Hermitian couplings are handled by splitting into Hermitian quadrature
components on a beamsplitter: ``L_+ = (L + L')/sqrt(2)`` and
``L_- = i(L - L')/sqrt(2)`` satisfy ``D[L_+] + D[L_-] = D[L] + D[L']``, so
monitoring both at ``pi/2`` and feeding back cancels the sum of absorption
and emission.

For photodetection of a unitary coupling ``L = U`` the detector clicks at
unit rate regardless of the state; applying ``U'`` right after each click
undoes the jump, so the corrected trajectory is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AngleError,
    DimensionError,
    ModelError,
    NonHermitianChannelError,
    NonUnitaryError,
    NoQuadratureError,
)
from .operators import dagger, is_hermitian, is_unitary
from .trajectories import Channel

__all__ = [
    "FeedbackLaw",
    "beamsplitter_network",
    "hermitian_split",
    "jump_correction",
    "no_knowledge_angle",
    "no_knowledge_feedback",
]

HAMILTONIAN_MODULATION = "hamiltonian_modulation"
JUMP_UNITARY = "jump_unitary"


@dataclass(frozen=True)
class FeedbackLaw:
    """Either signal-proportional Hamiltonian modulation or a post-jump unitary.

    ``gains`` maps a homodyne channel index to a Hermitian gain operator G;
    during integration the Hamiltonian picks up ``sum_c G_c y_c(t)``.
    ``correction`` is applied as ``rho -> C rho C'`` right after each jump.
    """

    kind: str
    gains: tuple[tuple[int, np.ndarray], ...] = ()
    correction: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in (HAMILTONIAN_MODULATION, JUMP_UNITARY):
            raise ModelError(f"unknown feedback kind {self.kind!r}")
        gains = tuple((int(i), np.asarray(g, dtype=complex)) for i, g in self.gains)
        object.__setattr__(self, "gains", gains)
        if self.kind == HAMILTONIAN_MODULATION:
            if self.correction is not None:
                raise ModelError("hamiltonian_modulation takes gains, not a correction unitary")
            if not gains:
                raise ModelError("hamiltonian_modulation needs at least one (channel, gain) pair")
            for i, g in gains:
                if i < 0:
                    raise ModelError(f"negative channel index {i} in feedback gains")
                if g.ndim != 2 or g.shape[0] != g.shape[1]:
                    raise DimensionError(f"gain for channel {i} is not square: shape {g.shape}")
                if not is_hermitian(g):
                    raise ModelError(f"gain for channel {i} is not Hermitian")
        else:
            if self.gains:
                raise ModelError("jump_unitary feedback takes no gains")
            if self.correction is None:
                raise ModelError("jump_unitary feedback needs a correction unitary")
            c = np.asarray(self.correction, dtype=complex)
            if not is_unitary(c):
                raise NonUnitaryError("jump correction operator is not unitary")
            object.__setattr__(self, "correction", c)


def hermitian_split(L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature components ``(L + L')/sqrt(2)`` and ``i(L - L')/sqrt(2)``.

    Both are Hermitian by construction (exactly, in floating point) and
    satisfy ``D[L_+] + D[L_-] = D[L] + D[L']``.
    """
    L = np.asarray(L, dtype=complex)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionError(f"coupling operator must be square, got shape {L.shape}")
    Ld = dagger(L)
    return (L + Ld) / np.sqrt(2.0), 1j * (L - Ld) / np.sqrt(2.0)


def beamsplitter_network(L: np.ndarray, eta: float = 1.0) -> tuple[Channel, Channel]:
    """Two no-knowledge homodyne channels monitoring the quadratures of ``L``.

    Unmonitored (``eta = 0``) the pair reproduces ``D[L] + D[L']``; at
    ``eta = 1`` with no-knowledge feedback the residual dissipation vanishes.
    Both channels share the detection efficiency ``eta``.
    """
    lp, lm = hermitian_split(L)
    theta = np.pi / 2
    return (
        Channel.homodyne(lp, theta=theta, eta=eta),
        Channel.homodyne(lm, theta=theta, eta=eta),
    )


def no_knowledge_feedback(channels, angle_tol: float = 1e-9, hermitian_tol: float = 1e-8) -> FeedbackLaw:
    """Build the Hamiltonian-modulation law cancelling every homodyne channel.

    Each homodyne channel must sit at the no-knowledge angle ``pi/2`` and
    couple through a Hermitian operator; its gain is ``sqrt(eta) L``.
    Unmonitored channels are skipped (they have no signal to feed back);
    photodetection channels are rejected.
    """
    gains: list[tuple[int, np.ndarray]] = []
    for idx, ch in enumerate(channels):
        if ch.kind == Channel.UNMONITORED:
            continue
        if ch.kind == Channel.PHOTODETECT:
            raise ModelError(f"channel {idx} is photodetection; no-knowledge feedback is homodyne-only")
        if abs(ch.theta - np.pi / 2) > angle_tol:
            raise AngleError(
                f"channel {idx} sits at theta={ch.theta!r}, not the no-knowledge angle pi/2"
            )
        scale = max(np.linalg.norm(ch.L), 1.0)
        if np.linalg.norm(ch.L - dagger(ch.L)) > hermitian_tol * scale:
            raise NonHermitianChannelError(f"channel {idx} coupling operator is not Hermitian")
        gains.append((idx, np.sqrt(ch.eta) * ch.L))
    if not gains:
        raise ModelError("no homodyne channels to cancel")
    return FeedbackLaw(kind=HAMILTONIAN_MODULATION, gains=tuple(gains))


def jump_correction(U: np.ndarray) -> FeedbackLaw:
    """Post-click correction law applying ``U'`` after every detector click."""
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise DimensionError(f"jump operator must be square, got shape {U.shape}")
    if not is_unitary(U):
        raise NonUnitaryError("jump operator is not unitary; cannot build an undo correction")
    return FeedbackLaw(kind=JUMP_UNITARY, correction=dagger(U))


def no_knowledge_angle(L: np.ndarray, tol: float = 1e-8) -> float:
    """Quadrature angle at which the homodyne signal of ``L`` is pure noise.

    Exists iff ``L' = exp(i phi) L`` for some phase; then any state gives a
    vanishing signal mean at ``theta = (phi - pi)/2`` (mod pi).  Returns the
    representative in ``(-pi/2, pi/2]``; Hermitian operators give ``pi/2``.
    """
    L = np.asarray(L, dtype=complex)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionError(f"coupling operator must be square, got shape {L.shape}")
    nrm2 = np.linalg.norm(L) ** 2
    if nrm2 == 0:
        raise ModelError("coupling operator is zero")
    phase = np.trace(dagger(L) @ dagger(L)) / nrm2
    if abs(phase) < 1e-14:
        raise NoQuadratureError("no phase relates L and its adjoint")
    phase /= abs(phase)
    if np.linalg.norm(dagger(L) - phase * L) > tol * np.sqrt(nrm2):
        raise NoQuadratureError("L adjoint is not a phase multiple of L; every quadrature is informative")
    theta = (np.angle(phase) - np.pi) / 2.0
    while theta <= -np.pi / 2:
        theta += np.pi
    while theta > np.pi / 2:
        theta -= np.pi
    return float(theta)
