"""Stochastic integration engine.

The engine is deliberately representation-agnostic: states are flat real
vectors, drift/diffusion are callbacks.  Density matrices ride through it as
``complex128`` arrays viewed as doubled-length float vectors.

Interpretation
--------------
``ito_step`` is Euler–Maruyama for an Ito SDE ``dx = a(x) dt + b(x) dW``.
``stratonovich_step`` is the Heun predictor–corrector for the Stratonovich
SDE ``dx = a(x) dt + b(x) o dW``.  For linear diffusion ``b(x) = B x`` the two
describe the same process when the drifts differ by the correction
``-B(B x)/2``, which :func:`strat_correction` computes from the callback.

Noise
-----
:class:`NoiseStream` wraps a counter-based Philox generator keyed by
``(seed, stream_index)``: streams with different indices are statistically
independent, and a stream replays identically for the same key and draw
sequence on a given platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericalError

__all__ = [
    "IntegratorConfig",
    "NoiseStream",
    "ito_step",
    "strat_correction",
    "stratonovich_step",
]

SCHEMES = ("ito_euler", "stratonovich_heun")


class NoiseStream:
    """Reproducible Wiener-increment source for one trajectory.

    Parameters
    ----------
    seed : int
        Base seed shared by an ensemble.
    stream_index : int
        Trajectory index; each index yields an independent substream.
    dt : float
        Step size; increments are drawn with variance ``dt``.

    Draws advance an internal cursor, so a trajectory and its replay must
    consume increments in the same order.  Uniform draws (used by the jump
    unraveling) come from the same underlying generator.
    """

    def __init__(self, seed: int, stream_index: int = 0, dt: float = 1.0):
        if dt <= 0:
            raise ConfigError(f"dt must be positive, got {dt}")
        self.seed = int(seed)
        self.stream_index = int(stream_index)
        self.dt = float(dt)
        key = np.array([self.seed % 2**64, self.stream_index % 2**64], dtype=np.uint64)
        self._rng = np.random.Generator(np.random.Philox(key=key))
        self.cursor = 0

    def wiener_increment(self) -> float:
        """One increment ``dW ~ N(0, dt)``."""
        self.cursor += 1
        return float(self._rng.normal(0.0, np.sqrt(self.dt)))

    def wiener_increments(self, n: int) -> np.ndarray:
        """``n`` increments in draw order (same sequence as repeated single draws)."""
        self.cursor += n
        return self._rng.normal(0.0, np.sqrt(self.dt), size=n)

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` uniform(0,1) draws, advancing the same cursor."""
        self.cursor += n
        return self._rng.uniform(0.0, 1.0, size=n)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"NoiseStream(seed={self.seed}, stream_index={self.stream_index}, dt={self.dt}, cursor={self.cursor})"


@dataclass(frozen=True)
class IntegratorConfig:
    """Grid and scheme for a trajectory integration.

    ``record_stride`` thins observable/state recording; the measurement
    record itself always keeps every step so a filter can replay it.
    """

    dt: float
    t_final: float
    scheme: str = "stratonovich_heun"
    record_stride: int = 1

    def __post_init__(self) -> None:
        problems = []
        if not (self.dt > 0):
            problems.append(f"dt must be positive, got {self.dt}")
        if not (self.t_final > 0):
            problems.append(f"t_final must be positive, got {self.t_final}")
        if self.dt > 0 and self.t_final > 0 and self.dt > self.t_final:
            problems.append(f"dt={self.dt} exceeds t_final={self.t_final}")
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.record_stride < 1:
            problems.append(f"record_stride must be >= 1, got {self.record_stride}")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_final / self.dt)))

    def times(self) -> np.ndarray:
        """All step-boundary times ``0, dt, ..., n_steps*dt``."""
        return self.dt * np.arange(self.n_steps + 1)

    def recorded_indices(self) -> np.ndarray:
        """Step indices kept in outputs: every ``record_stride``-th plus the last."""
        idx = np.arange(0, self.n_steps + 1, self.record_stride)
        if idx[-1] != self.n_steps:
            idx = np.append(idx, self.n_steps)
        return idx


Drift = Callable[[np.ndarray], np.ndarray]
Diffusion = Callable[[np.ndarray], np.ndarray]


def _check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite state after {where}")
    return x


def ito_step(x: np.ndarray, drift: Drift, diffusion: Diffusion, dW: float, dt: float) -> np.ndarray:
    """Euler–Maruyama update ``x + a(x) dt + b(x) dW``."""
    out = x + drift(x) * dt + diffusion(x) * dW
    return _check_finite(out, "ito_step")


def stratonovich_step(x: np.ndarray, drift: Drift, diffusion: Diffusion, dW: float, dt: float) -> np.ndarray:
    """Heun update: evaluate drift and diffusion at both ends of a predictor.

    Converges to the Stratonovich solution for smooth coefficients; the
    frozen increment ``dW`` is shared between predictor and corrector.
    """
    ax, bx = drift(x), diffusion(x)
    pred = x + ax * dt + bx * dW
    out = x + 0.5 * (ax + drift(pred)) * dt + 0.5 * (bx + diffusion(pred)) * dW
    return _check_finite(out, "stratonovich_step")


def strat_correction(diffusion: Diffusion, x: np.ndarray) -> np.ndarray:
    """Ito-to-Stratonovich drift correction ``-b(b(x))/2`` for linear ``b``.

    With ``b(x) = B x`` this returns ``-B^2 x / 2``: subtract it from an Ito
    drift to get the matching Stratonovich drift (and vice versa).
    """
    return -0.5 * diffusion(diffusion(x))
