"""Stochastic unravelings of monitored open-system dynamics.

The conditional (unnormalized) state under homodyne monitoring of channels
``L_c`` at quadrature angles ``theta_c`` with efficiencies ``eta_c`` obeys the
Stratonovich-form equation

    d rho = [ -i[H, rho] + sum_c D[L_c] rho ] dt
          + sum_c sqrt(eta_c) A[L_c e^{i theta_c}] rho * y_c(t) dt
          - sum_c (eta_c / 2) A^2[L_c e^{i theta_c}] rho dt

driven by the measured signals

    y_c(t) = sqrt(eta_c) <L_c e^{i theta_c} + L_c' e^{-i theta_c}> + xi_c(t),

with ``xi_c = dW_c/dt`` white noise and ``A[Z] rho = Z rho + rho Z'``.
Expectation values use the normalized state.  A filter is the same equation
run on the recorded ``y_c`` without access to the system state.

Integration scheme
------------------
Each step is a symmetric (Strang) split.  The deterministic part (commutator,
dissipators, and the ``A^2`` noise correction) advances with Heun half-steps;
the signal part advances with the exact conjugation map

    rho -> exp(B_c y_c dt) rho exp(B_c' y_c dt),
    B_c = sqrt(eta_c) e^{i theta_c} L_c - i G_c,

where ``G_c`` is the feedback gain attached to channel ``c`` (zero without
feedback).  The map is the exact solution of the signal term for a frozen
``y_c``, so it preserves positivity, and for no-knowledge feedback
(``G_c = sqrt(eta_c) L_c`` at ``theta_c = pi/2``) the exponent cancels to
zero and the back-action is removed identically rather than to stepper
accuracy.  Signals are computed once per step from the pre-step state,
recorded, and reused verbatim, which makes filter replay bit-for-bit
reproducible.

Photodetection trajectories (:func:`propagate_jump`) use the exact
exponential no-jump propagator and per-step Bernoulli clicks with
probability ``<L'L> dt``.

Ensembles are batched: trajectories advance together through stacked matmuls
in fixed-size chunks, and averages fold in stream order, so results do not
depend on the parallelism degree.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import (
    ConfigError,
    DimensionError,
    ModelError,
    NumericalError,
    RecordError,
    StateError,
)
from .operators import (
    TRACE_FLOOR,
    TRACE_WINDOW,
    QuantumState,
    dagger,
    dissipator,
    expectation,
    hermitize,
    innovation_action,
    innovation_squared,
    is_hermitian,
)
from .sde import IntegratorConfig, NoiseStream

__all__ = [
    "Channel",
    "EnsembleResult",
    "FilterRun",
    "JumpEnsembleResult",
    "MeasurementRecord",
    "MonitoredModel",
    "TrajectoryResult",
    "ensemble_average",
    "homodyne_signal",
    "integrate_sme_engine",
    "jump_ensemble",
    "propagate_filter",
    "propagate_homodyne",
    "propagate_homodyne_batch",
    "propagate_jump",
    "propagate_with_filter",
    "propagate_with_filter_batch",
    "sme_rhs",
]


@dataclass(frozen=True)
class Channel:
    """One environmental coupling ``L`` and how (or whether) it is monitored."""

    HOMODYNE = "homodyne"
    PHOTODETECT = "photodetect"
    UNMONITORED = "unmonitored"

    L: np.ndarray
    kind: str
    theta: float = 0.0
    eta: float = 1.0

    def __post_init__(self) -> None:
        L = np.asarray(self.L, dtype=complex)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise DimensionError(f"channel operator must be square, got shape {L.shape}")
        object.__setattr__(self, "L", L)
        if self.kind not in (self.HOMODYNE, self.PHOTODETECT, self.UNMONITORED):
            raise ModelError(f"unknown channel kind {self.kind!r}")
        if not (0.0 <= self.eta <= 1.0):
            raise ModelError(f"efficiency must lie in [0, 1], got {self.eta}")

    @classmethod
    def homodyne(cls, L: np.ndarray, theta: float, eta: float = 1.0) -> "Channel":
        return cls(L=L, kind=cls.HOMODYNE, theta=float(theta), eta=float(eta))

    @classmethod
    def photodetect(cls, L: np.ndarray) -> "Channel":
        return cls(L=L, kind=cls.PHOTODETECT)

    @classmethod
    def unmonitored(cls, L: np.ndarray) -> "Channel":
        return cls(L=L, kind=cls.UNMONITORED)

    @property
    def dim(self) -> int:
        return self.L.shape[0]


@dataclass(frozen=True)
class MonitoredModel:
    """Hamiltonian, channel list, and an optional feedback law.

    Channel order is part of the model identity: noise substreams, record
    columns, and feedback gains all refer to channels by position.
    """

    H: np.ndarray
    channels: tuple[Channel, ...]
    feedback: object | None = None  # FeedbackLaw; kept untyped to avoid an import cycle

    def __post_init__(self) -> None:
        H = np.asarray(self.H, dtype=complex)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise DimensionError(f"Hamiltonian must be square, got shape {H.shape}")
        if not is_hermitian(H):
            raise ModelError("Hamiltonian is not Hermitian within tolerance")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "channels", tuple(self.channels))
        for i, ch in enumerate(self.channels):
            if ch.L.shape != H.shape:
                raise DimensionError(
                    f"channel {i} has dimension {ch.L.shape[0]}, Hamiltonian has {H.shape[0]}"
                )
        fb = self.feedback
        if fb is not None:
            if not hasattr(fb, "kind"):
                raise ModelError("feedback must be a FeedbackLaw")
            for idx, g in getattr(fb, "gains", ()):
                if idx >= len(self.channels):
                    raise ModelError(f"feedback gain refers to missing channel {idx}")
                if self.channels[idx].kind != Channel.HOMODYNE:
                    raise ModelError(f"feedback gain on channel {idx}, which is not homodyne")
                if np.asarray(g).shape != H.shape:
                    raise DimensionError(f"feedback gain for channel {idx} has wrong shape")

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def homodyne_indices(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.channels) if c.kind == Channel.HOMODYNE)

    def photodetect_indices(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.channels) if c.kind == Channel.PHOTODETECT)


@dataclass(frozen=True)
class MeasurementRecord:
    """Per-step measurement outcomes for one trajectory.

    ``signals[k, j]`` is the homodyne sample over ``[k dt, (k+1) dt)`` for the
    j-th monitored channel (model channel ``channel_indices[j]``).  Every
    integration step is kept regardless of the recording stride so that a
    filter can replay the trajectory exactly.
    """

    dt: float
    n_steps: int
    channel_indices: tuple[int, ...]
    signals: np.ndarray
    jump_channel: int | None = None
    jump_flags: np.ndarray | None = None
    seed: int | None = None
    stream_index: int | None = None

    def __post_init__(self) -> None:
        sig = np.asarray(self.signals, dtype=float)
        if sig.shape != (self.n_steps, len(self.channel_indices)):
            raise RecordError(
                f"signals shape {sig.shape} != (n_steps, n_channels) = "
                f"({self.n_steps}, {len(self.channel_indices)})"
            )
        object.__setattr__(self, "signals", sig)
        if self.jump_flags is not None:
            jf = np.asarray(self.jump_flags, dtype=bool)
            if jf.shape != (self.n_steps,):
                raise RecordError(f"jump_flags shape {jf.shape} != ({self.n_steps},)")
            object.__setattr__(self, "jump_flags", jf)

    def step_times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps)


@dataclass
class TrajectoryResult:
    """One trajectory: recorded series plus the final working state."""

    times: np.ndarray
    observables: dict[str, np.ndarray]
    purity: np.ndarray
    trace: np.ndarray
    log_norm: np.ndarray
    final_state: QuantumState
    record: MeasurementRecord | None = None
    states: np.ndarray | None = None  # (n_recorded, d, d) normalized snapshots


@dataclass
class FilterRun:
    """System and filter propagated side by side from the same signals."""

    times: np.ndarray
    distances: np.ndarray
    system: TrajectoryResult
    filter: TrajectoryResult


@dataclass
class EnsembleResult:
    """Trajectory average: mean states and per-observable mean/standard error."""

    times: np.ndarray
    mean_states: list[QuantumState]
    observable_mean: dict[str, np.ndarray]
    observable_sem: dict[str, np.ndarray]
    n_traj: int


@dataclass
class JumpEnsembleResult:
    """Click statistics for a photodetection ensemble."""

    counts: np.ndarray
    final_states: np.ndarray  # (n_traj, d, d) normalized
    n_steps: int
    dt: float


def homodyne_signal(rho, ch: Channel, xi: float) -> float:
    """Measured sample ``sqrt(eta) <L e^{i theta} + L' e^{-i theta}> + xi``."""
    if ch.kind != Channel.HOMODYNE:
        raise ModelError("homodyne_signal is defined for homodyne channels only")
    X = np.exp(1j * ch.theta) * ch.L + np.exp(-1j * ch.theta) * dagger(ch.L)
    return float(np.sqrt(ch.eta) * expectation(X, rho).real + xi)


def sme_rhs(model: MonitoredModel, rho, signals) -> tuple[np.ndarray, list[np.ndarray]]:
    """Drift and per-channel diffusion of the Stratonovich measurement equation.

    Returns ``(drift, diffusions)`` where the full right-hand side is
    ``drift + sum_c diffusions[c] * y_c``.  The drift carries the commutator,
    all dissipators, the ``-(eta/2) A^2`` Stratonovich correction, and the
    feedback commutator evaluated at the supplied signals; ``diffusions[c]``
    is ``sqrt(eta_c) A[L_c e^{i theta_c}] rho`` for each homodyne channel.

    With every efficiency at zero (or no homodyne channels) the drift reduces
    exactly to the unconditional master equation.
    """
    m = rho.matrix if isinstance(rho, QuantumState) else np.asarray(rho, dtype=complex)
    if m.shape != model.H.shape:
        raise DimensionError(f"state shape {m.shape} does not match model dimension {model.dim}")
    hom = model.homodyne_indices()
    signals = np.asarray(signals, dtype=float).reshape(-1)
    if signals.shape[0] != len(hom):
        raise DimensionError(f"got {signals.shape[0]} signals for {len(hom)} homodyne channels")

    drift = -1j * (model.H @ m - m @ model.H)
    for ch in model.channels:
        drift = drift + dissipator(ch.L, m)
    diffusions: list[np.ndarray] = []
    for idx in hom:
        ch = model.channels[idx]
        Z = np.exp(1j * ch.theta) * ch.L
        drift = drift - 0.5 * ch.eta * innovation_squared(Z, m)
        diffusions.append(np.sqrt(ch.eta) * innovation_action(Z, m))
    fb = model.feedback
    if fb is not None and getattr(fb, "kind", None) == "hamiltonian_modulation":
        pos = {c: j for j, c in enumerate(hom)}
        for idx, g in fb.gains:
            Hfb = np.asarray(g, dtype=complex) * signals[pos[idx]]
            drift = drift - 1j * (Hfb @ m - m @ Hfb)
    return drift, diffusions


# ---------------------------------------------------------------------------
# batched homodyne runner
# ---------------------------------------------------------------------------


def _expm_batch(E: np.ndarray) -> np.ndarray:
    """Matrix exponential of a stack of small matrices (scaling + Taylor).

    Exact at ``E = 0`` (returns the identity), which is what makes perfect
    feedback cancellation exact rather than approximate.
    """
    norm = float(np.abs(E).sum(axis=-1).max()) if E.size else 0.0
    if not np.isfinite(norm):
        raise NumericalError("non-finite innovation exponent")
    s = max(0, int(np.ceil(np.log2(norm / 0.25)))) if norm > 0.25 else 0
    A = E / (2.0**s)
    d = E.shape[-1]
    out = np.zeros_like(A)
    out[...] = np.eye(d)
    term = out.copy()
    for k in range(1, 15):
        term = (term @ A) / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


class _HomodynePlan:
    """Precomputed constants for stepping one model."""

    def __init__(self, model: MonitoredModel):
        if model.photodetect_indices():
            raise ModelError("model has photodetection channels; use propagate_jump")
        fb = model.feedback
        if fb is not None and getattr(fb, "kind", None) != "hamiltonian_modulation":
            raise ModelError("homodyne propagation supports hamiltonian_modulation feedback only")
        self.model = model
        self.dim = model.dim
        self.H = model.H
        self.hom = model.homodyne_indices()
        gains = {}
        if fb is not None:
            for idx, g in fb.gains:
                gains[idx] = np.asarray(g, dtype=complex)

        # deterministic-part constants: D[L] for every channel, -(eta/2) A^2 for homodyne
        self.diss = []  # (L, L', L'L) triples
        for ch in model.channels:
            L = ch.L
            self.diss.append((L, dagger(L), dagger(L) @ L))
        self.corr = []  # (eta, c2, L^2, (L')^2, L, L') per homodyne channel
        self.sig_ops = []  # quadrature observables e^{i th} L + e^{-i th} L'
        self.sqrt_eta = np.array([model.channels[i].eta for i in self.hom]) ** 0.5
        self.bexp = []  # innovation/feedback exponent base per homodyne channel
        for idx in self.hom:
            ch = model.channels[idx]
            L, Ld = ch.L, dagger(ch.L)
            c2 = np.exp(2j * ch.theta)
            self.corr.append((ch.eta, c2, L @ L, Ld @ Ld, L, Ld))
            self.sig_ops.append(np.exp(1j * ch.theta) * L + np.exp(-1j * ch.theta) * Ld)
            base = np.sqrt(ch.eta) * np.exp(1j * ch.theta) * L
            if idx in gains:
                base = base - 1j * gains[idx]
            self.bexp.append(base)

    def det_rhs(self, M: np.ndarray) -> np.ndarray:
        """Deterministic drift on a stacked state ``(..., d, d)``."""
        out = -1j * (self.H @ M - M @ self.H)
        for L, Ld, LdL in self.diss:
            out = out + L @ M @ Ld - 0.5 * (LdL @ M + M @ LdL)
        for eta, c2, L2, Ld2, L, Ld in self.corr:
            if eta == 0.0:
                continue
            # A^2[e^{i th} L] rho = e^{2i th} L^2 rho + 2 L rho L' + e^{-2i th} rho L'^2
            out = out - 0.5 * eta * (c2 * (L2 @ M) + 2.0 * (L @ M @ Ld) + np.conj(c2) * (M @ Ld2))
        return out


@dataclass
class _RunOutput:
    times: np.ndarray
    signals: np.ndarray | None
    observables: dict[str, np.ndarray]
    purity: np.ndarray
    trace: np.ndarray
    log_norm: np.ndarray
    states: np.ndarray | None
    distances: np.ndarray | None
    final_matrix: np.ndarray
    final_log_norm: np.ndarray


def _run_homodyne(
    plan: _HomodynePlan,
    M0: np.ndarray,
    log0: np.ndarray,
    cfg: IntegratorConfig,
    dW: np.ndarray | None = None,
    signals: np.ndarray | None = None,
    *,
    keep_record: bool = True,
    keep_states: bool = False,
    observables: dict[str, np.ndarray] | None = None,
    collect_distance: bool = False,
) -> _RunOutput:
    """Advance a stacked state ``(B, S, d, d)`` through the full grid.

    Slot 0 of axis ``S`` generates the signals; any further slots (e.g. a
    filter state) are driven by the same signals.  Exactly one of ``dW``
    (fresh noise) and ``signals`` (replay) must be given.
    """
    if (dW is None) == (signals is None):
        raise ValueError("exactly one of dW and signals must be supplied")
    if cfg.scheme != "stratonovich_heun":
        raise ConfigError(
            f"the split-step propagator implements the Stratonovich form only; "
            f"got scheme {cfg.scheme!r} (use integrate_sme_engine for Ito runs)"
        )
    M = np.array(M0, dtype=complex)
    B, S, d, _ = M.shape
    logn = np.array(log0, dtype=float)
    h = cfg.dt
    n = cfg.n_steps
    nh = len(plan.hom)
    rec = cfg.recorded_indices()
    n_rec = rec.size
    is_rec = np.zeros(n + 1, dtype=bool)
    is_rec[rec] = True

    names = list(observables) if observables else []
    ops = [np.asarray(observables[k], dtype=complex) for k in names]
    herm = [is_hermitian(op) for op in ops]
    obs_out = {
        k: np.empty((B, n_rec), dtype=float if hm else complex) for k, hm in zip(names, herm)
    }
    purity_out = np.empty((B, S, n_rec))
    trace_out = np.empty((B, S, n_rec))
    logn_out = np.empty((B, S, n_rec))
    states_out = np.empty((B, S, n_rec, d, d), dtype=complex) if keep_states else None
    dist_out = np.empty((B, n_rec)) if collect_distance else None
    y_store = np.empty((B, n, nh)) if keep_record else None

    lo, hi = TRACE_WINDOW
    half = 0.5 * h
    r = 0

    def record() -> None:
        nonlocal r
        tr = np.einsum("bsii->bs", M).real
        rho_n = M / tr[:, :, None, None]
        purity_out[:, :, r] = np.einsum("bsij,bsji->bs", rho_n, rho_n).real
        trace_out[:, :, r] = tr
        logn_out[:, :, r] = logn
        if keep_states:
            states_out[:, :, r] = rho_n
        for k_name, op, hm in zip(names, ops, herm):
            v = np.einsum("ij,bji->b", op, rho_n[:, 0])
            obs_out[k_name][:, r] = v.real if hm else v
        if collect_distance:
            diff = rho_n[:, 0] - rho_n[:, 1]
            dist_out[:, r] = np.sqrt(np.einsum("bij,bij->b", diff, diff.conj()).real)
        r += 1

    record()
    for k in range(n):
        if signals is None:
            tr0 = np.einsum("bii->b", M[:, 0]).real
            if not np.all(np.isfinite(tr0)):
                raise NumericalError(f"non-finite trace at step {k}")
            if np.any(tr0 <= TRACE_FLOOR):
                raise StateError(f"state trace collapsed at step {k}")
            y = np.empty((B, nh))
            for j in range(nh):
                mval = np.einsum("ij,bji->b", plan.sig_ops[j], M[:, 0]).real / tr0
                y[:, j] = plan.sqrt_eta[j] * mval + dW[:, k, j] / h
        else:
            y = signals[:, k, :]
        if keep_record:
            y_store[:, k, :] = y

        # Strang: deterministic half, exact signal maps, deterministic half
        k1 = plan.det_rhs(M)
        k2 = plan.det_rhs(M + half * k1)
        M = M + 0.5 * half * (k1 + k2)
        for j in range(nh):
            E = (y[:, j] * h)[:, None, None, None] * plan.bexp[j]
            Mx = _expm_batch(E)
            M = Mx @ M @ dagger(Mx)
        k1 = plan.det_rhs(M)
        k2 = plan.det_rhs(M + half * k1)
        M = M + 0.5 * half * (k1 + k2)

        M = 0.5 * (M + dagger(M))
        tr = np.einsum("bsii->bs", M).real
        if not np.all(np.isfinite(tr)):
            raise NumericalError(f"non-finite trace after step {k}")
        if np.any(tr <= TRACE_FLOOR):
            raise StateError(f"state trace collapsed after step {k}")
        mask = (tr < lo) | (tr > hi)
        if mask.any():
            M[mask] /= tr[mask][:, None, None]
            logn[mask] += np.log(tr[mask])
        if is_rec[k + 1]:
            record()

    return _RunOutput(
        times=rec * h,
        signals=y_store,
        observables=obs_out,
        purity=purity_out,
        trace=trace_out,
        log_norm=logn_out,
        states=states_out,
        distances=dist_out,
        final_matrix=M,
        final_log_norm=logn,
    )


def _as_state(rho) -> QuantumState:
    return rho if isinstance(rho, QuantumState) else QuantumState(np.asarray(rho, dtype=complex))


def _check_stream(stream: NoiseStream, cfg: IntegratorConfig) -> None:
    if abs(stream.dt - cfg.dt) > 1e-12 * cfg.dt:
        raise ConfigError(f"stream dt {stream.dt} does not match integrator dt {cfg.dt}")


def _check_state_dim(state: QuantumState, model: MonitoredModel) -> None:
    if state.dim != model.dim:
        raise DimensionError(f"state dimension {state.dim} does not match model dimension {model.dim}")


def _draw_increments(stream: NoiseStream, n_steps: int, n_channels: int) -> np.ndarray:
    # stepwise draw order: one increment per homodyne channel per step
    return stream.wiener_increments(n_steps * n_channels).reshape(n_steps, n_channels)


def _traj_result(plan, out: _RunOutput, b: int, s: int, record) -> TrajectoryResult:
    obs = {k: v[b] for k, v in out.observables.items()} if s == 0 else {}
    return TrajectoryResult(
        times=out.times,
        observables=obs,
        purity=out.purity[b, s],
        trace=out.trace[b, s],
        log_norm=out.log_norm[b, s],
        final_state=QuantumState(out.final_matrix[b, s].copy(), float(out.final_log_norm[b, s])),
        record=record,
        states=out.states[b, s] if out.states is not None else None,
    )


def propagate_homodyne(
    model: MonitoredModel,
    rho0,
    cfg: IntegratorConfig,
    stream: NoiseStream,
    observables: dict[str, np.ndarray] | None = None,
    keep_states: bool = False,
) -> TrajectoryResult:
    """Integrate one homodyne trajectory, recording the measured signals."""
    plan = _HomodynePlan(model)
    state = _as_state(rho0)
    _check_state_dim(state, model)
    _check_stream(stream, cfg)
    dW = _draw_increments(stream, cfg.n_steps, len(plan.hom))[None]
    out = _run_homodyne(
        plan,
        state.matrix[None, None],
        np.array([[state.log_norm]]),
        cfg,
        dW=dW,
        observables=observables,
        keep_states=keep_states,
    )
    record = MeasurementRecord(
        dt=cfg.dt,
        n_steps=cfg.n_steps,
        channel_indices=plan.hom,
        signals=out.signals[0],
        seed=stream.seed,
        stream_index=stream.stream_index,
    )
    return _traj_result(plan, out, 0, 0, record)


def propagate_homodyne_batch(
    model: MonitoredModel,
    rho0,
    cfg: IntegratorConfig,
    streams: list[NoiseStream],
    observables: dict[str, np.ndarray] | None = None,
    keep_states: bool = False,
) -> list[TrajectoryResult]:
    """Independent trajectories advanced together (one per noise stream)."""
    plan = _HomodynePlan(model)
    state = _as_state(rho0)
    _check_state_dim(state, model)
    B = len(streams)
    dW = np.empty((B, cfg.n_steps, len(plan.hom)))
    for b, stream in enumerate(streams):
        _check_stream(stream, cfg)
        dW[b] = _draw_increments(stream, cfg.n_steps, len(plan.hom))
    M0 = np.broadcast_to(state.matrix, (B, 1, state.dim, state.dim))
    out = _run_homodyne(
        plan,
        M0,
        np.full((B, 1), state.log_norm),
        cfg,
        dW=dW,
        observables=observables,
        keep_states=keep_states,
    )
    results = []
    for b, stream in enumerate(streams):
        record = MeasurementRecord(
            dt=cfg.dt,
            n_steps=cfg.n_steps,
            channel_indices=plan.hom,
            signals=out.signals[b],
            seed=stream.seed,
            stream_index=stream.stream_index,
        )
        results.append(_traj_result(plan, out, b, 0, record))
    return results


def propagate_filter(
    model: MonitoredModel,
    pi0,
    record: MeasurementRecord,
    cfg: IntegratorConfig,
    observables: dict[str, np.ndarray] | None = None,
    keep_states: bool = False,
) -> TrajectoryResult:
    """Replay a measurement record through the filter equation.

    The filter state follows the same split steps as the system but never
    evaluates its own signal; starting it from the system's initial state
    reproduces the system trajectory bit-for-bit.
    """
    plan = _HomodynePlan(model)
    state = _as_state(pi0)
    _check_state_dim(state, model)
    if record.jump_flags is not None:
        raise RecordError("record contains detector clicks; propagate_filter replays homodyne records")
    if record.n_steps != cfg.n_steps:
        raise RecordError(f"record has {record.n_steps} steps, grid has {cfg.n_steps}")
    if abs(record.dt - cfg.dt) > 1e-12 * cfg.dt:
        raise RecordError(f"record dt {record.dt} does not match integrator dt {cfg.dt}")
    if tuple(record.channel_indices) != plan.hom:
        raise RecordError(
            f"record channels {record.channel_indices} do not match model homodyne channels {plan.hom}"
        )
    out = _run_homodyne(
        plan,
        state.matrix[None, None],
        np.array([[state.log_norm]]),
        cfg,
        signals=record.signals[None],
        keep_record=False,
        observables=observables,
        keep_states=keep_states,
    )
    return _traj_result(plan, out, 0, 0, record)


def propagate_with_filter(
    model: MonitoredModel,
    rho0,
    pi0,
    cfg: IntegratorConfig,
    stream: NoiseStream,
    observables: dict[str, np.ndarray] | None = None,
    keep_states: bool = False,
) -> FilterRun:
    """System and filter side by side, sharing the signals step by step."""
    plan = _HomodynePlan(model)
    sys0, fil0 = _as_state(rho0), _as_state(pi0)
    _check_state_dim(sys0, model)
    _check_state_dim(fil0, model)
    _check_stream(stream, cfg)
    dW = _draw_increments(stream, cfg.n_steps, len(plan.hom))[None]
    M0 = np.stack([sys0.matrix, fil0.matrix])[None]
    out = _run_homodyne(
        plan,
        M0,
        np.array([[sys0.log_norm, fil0.log_norm]]),
        cfg,
        dW=dW,
        observables=observables,
        keep_states=keep_states,
        collect_distance=True,
    )
    record = MeasurementRecord(
        dt=cfg.dt,
        n_steps=cfg.n_steps,
        channel_indices=plan.hom,
        signals=out.signals[0],
        seed=stream.seed,
        stream_index=stream.stream_index,
    )
    return FilterRun(
        times=out.times,
        distances=out.distances[0],
        system=_traj_result(plan, out, 0, 0, record),
        filter=_traj_result(plan, out, 0, 1, record),
    )


def propagate_with_filter_batch(
    model: MonitoredModel,
    rho0,
    pi0,
    cfg: IntegratorConfig,
    streams: list[NoiseStream],
) -> tuple[np.ndarray, np.ndarray]:
    """Distance series ``|rho_t - pi_t|`` for many seeds; returns (times, distances)."""
    plan = _HomodynePlan(model)
    sys0, fil0 = _as_state(rho0), _as_state(pi0)
    _check_state_dim(sys0, model)
    _check_state_dim(fil0, model)
    B = len(streams)
    dW = np.empty((B, cfg.n_steps, len(plan.hom)))
    for b, stream in enumerate(streams):
        _check_stream(stream, cfg)
        dW[b] = _draw_increments(stream, cfg.n_steps, len(plan.hom))
    M0 = np.broadcast_to(np.stack([sys0.matrix, fil0.matrix]), (B, 2, sys0.dim, sys0.dim))
    out = _run_homodyne(
        plan,
        M0,
        np.stack([np.full(B, sys0.log_norm), np.full(B, fil0.log_norm)], axis=1),
        cfg,
        dW=dW,
        keep_record=False,
        collect_distance=True,
    )
    return out.times, out.distances


def _chunk_ranges(n: int, size: int) -> list[tuple[int, int]]:
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def ensemble_average(
    model: MonitoredModel,
    rho0,
    cfg: IntegratorConfig,
    n_traj: int,
    base_seed: int,
    observables: dict[str, np.ndarray] | None = None,
    chunk_size: int = 256,
    threads: int = 1,
) -> EnsembleResult:
    """Average ``n_traj`` homodyne trajectories with substreams ``0..n_traj-1``.

    Work proceeds in fixed-size chunks folded in stream order, so the result
    is identical for any ``threads`` value.
    """
    if n_traj < 1:
        raise ConfigError(f"n_traj must be >= 1, got {n_traj}")
    plan = _HomodynePlan(model)
    state = _as_state(rho0)
    _check_state_dim(state, model)
    d = state.dim
    nh = len(plan.hom)
    rec = cfg.recorded_indices()
    names = list(observables) if observables else []

    def run_chunk(rng: tuple[int, int]):
        i0, i1 = rng
        b = i1 - i0
        dW = np.empty((b, cfg.n_steps, nh))
        for j, idx in enumerate(range(i0, i1)):
            dW[j] = _draw_increments(NoiseStream(base_seed, idx, cfg.dt), cfg.n_steps, nh)
        M0 = np.broadcast_to(state.matrix, (b, 1, d, d))
        out = _run_homodyne(
            plan,
            M0,
            np.full((b, 1), state.log_norm),
            cfg,
            dW=dW,
            keep_record=False,
            keep_states=True,
            observables=observables,
        )
        ssum = out.states[:, 0].sum(axis=0)
        osum = {k: out.observables[k].sum(axis=0) for k in names}
        osq = {k: (np.abs(out.observables[k]) ** 2).sum(axis=0) for k in names}
        return ssum, osum, osq

    ranges = _chunk_ranges(n_traj, chunk_size)
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run_chunk, ranges))
    else:
        partials = [run_chunk(r) for r in ranges]

    state_sum = np.zeros((rec.size, d, d), dtype=complex)
    obs_sum = {k: None for k in names}
    obs_sq = {k: None for k in names}
    for ssum, osum, osq in partials:  # fold in stream order
        state_sum += ssum
        for k in names:
            obs_sum[k] = osum[k] if obs_sum[k] is None else obs_sum[k] + osum[k]
            obs_sq[k] = osq[k] if obs_sq[k] is None else obs_sq[k] + osq[k]

    mean_states = [QuantumState(hermitize(m) / np.trace(m).real) for m in state_sum / n_traj]
    obs_mean = {}
    obs_sem = {}
    for k in names:
        mean = obs_sum[k] / n_traj
        obs_mean[k] = mean
        if n_traj > 1:
            var = (obs_sq[k] - n_traj * np.abs(mean) ** 2) / (n_traj - 1)
            obs_sem[k] = np.sqrt(np.maximum(var.real, 0.0) / n_traj)
        else:
            obs_sem[k] = np.full(rec.size, np.nan)
    return EnsembleResult(
        times=rec * cfg.dt,
        mean_states=mean_states,
        observable_mean=obs_mean,
        observable_sem=obs_sem,
        n_traj=n_traj,
    )


def integrate_sme_engine(
    model: MonitoredModel,
    rho0,
    cfg: IntegratorConfig,
    dW: np.ndarray,
) -> QuantumState:
    """Integrate the measurement equation with the generic SDE engine.

    Flattens the density matrix into a real vector and steps it with
    :func:`~noknow.sde.ito_step` or :func:`~noknow.sde.stratonovich_step`
    according to ``cfg.scheme``, using the supplied increments.  Restricted
    to a single homodyne channel and no feedback; meant for cross-checking
    the production split stepper and the Ito/Stratonovich correspondence,
    not for production runs.
    """
    plan = _HomodynePlan(model)
    if len(plan.hom) != 1:
        raise ModelError("engine integration supports exactly one homodyne channel")
    if model.feedback is not None:
        raise ModelError("engine integration does not support feedback")
    from .sde import ito_step, stratonovich_step

    state = _as_state(rho0)
    _check_state_dim(state, model)
    dW = np.asarray(dW, dtype=float).reshape(-1)
    if dW.shape[0] != cfg.n_steps:
        raise ConfigError(f"got {dW.shape[0]} increments for {cfg.n_steps} steps")
    d = model.dim
    ch = model.channels[plan.hom[0]]
    Z = np.exp(1j * ch.theta) * ch.L
    sq_eta = np.sqrt(ch.eta)
    X = Z + dagger(Z)  # quadrature observable; signal mean is sqrt(eta) <X>

    def unflat(x: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(x).view(np.complex128).reshape(d, d)

    def flat(m: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(m).view(np.float64).ravel()

    def diffusion(x: np.ndarray) -> np.ndarray:
        m = unflat(x)
        return flat(sq_eta * innovation_action(Z, m))

    def drift_common(m: np.ndarray) -> np.ndarray:
        out = -1j * (model.H @ m - m @ model.H)
        for c in model.channels:
            out = out + dissipator(c.L, m)
        mean = np.trace(X @ m).real / np.trace(m).real
        return out + sq_eta * mean * (sq_eta * innovation_action(Z, m))

    def drift_ito(x: np.ndarray) -> np.ndarray:
        return flat(drift_common(unflat(x)))

    def drift_strat(x: np.ndarray) -> np.ndarray:
        m = unflat(x)
        return flat(drift_common(m) - 0.5 * ch.eta * innovation_squared(Z, m))

    x = flat(state.matrix.astype(complex))
    logn = state.log_norm
    lo, hi = TRACE_WINDOW
    for k in range(cfg.n_steps):
        if cfg.scheme == "ito_euler":
            x = ito_step(x, drift_ito, diffusion, float(dW[k]), cfg.dt)
        else:
            x = stratonovich_step(x, drift_strat, diffusion, float(dW[k]), cfg.dt)
        m = unflat(x)
        tr = np.trace(m).real
        if not np.isfinite(tr) or tr <= TRACE_FLOOR:
            raise StateError(f"state trace collapsed at step {k}")
        if tr < lo or tr > hi:
            x = flat(m / tr)
            logn += np.log(tr)
    return QuantumState(hermitize(unflat(x)), logn)


# ---------------------------------------------------------------------------
# photodetection (jump) unraveling
# ---------------------------------------------------------------------------


class _JumpPlan:
    """Vectorized no-jump propagator and click superoperator for one model."""

    def __init__(self, model: MonitoredModel, cfg: IntegratorConfig):
        pd = model.photodetect_indices()
        if len(pd) != 1:
            raise ModelError(f"photodetection needs exactly one photodetect channel, got {len(pd)}")
        if model.homodyne_indices():
            raise ModelError("mixed homodyne/photodetect models are not supported")
        fb = model.feedback
        if fb is not None and getattr(fb, "kind", None) != "jump_unitary":
            raise ModelError("photodetection supports jump_unitary feedback only")
        d = model.dim
        self.dim = d
        L = model.channels[pd[0]].L
        LdL = dagger(L) @ L
        max_rate = float(np.linalg.eigvalsh(LdL).max())
        if max_rate * cfg.dt >= 0.1:
            raise ConfigError(
                f"jump probability per step {max_rate * cfg.dt:.3g} too large; "
                "shrink dt so that max rate * dt < 0.1"
            )
        eye = np.eye(d)
        # row-major vectorization: rho -> A rho B maps to (A kron B^T) vec(rho)
        G = -1j * (np.kron(model.H, eye) - np.kron(eye, model.H.T))
        G -= 0.5 * (np.kron(LdL, eye) + np.kron(eye, LdL.T))
        for i, ch in enumerate(model.channels):
            if i == pd[0]:
                continue
            Lu = ch.L
            LdLu = dagger(Lu) @ Lu
            G += np.kron(Lu, Lu.conj()) - 0.5 * (np.kron(LdLu, eye) + np.kron(eye, LdLu.T))
        self.P = expm(G * cfg.dt)
        K = np.kron(L, L.conj())
        if fb is not None:
            C = fb.correction
            K = np.kron(C, C.conj()) @ K
        self.K = K
        self.rate_vec = LdL.T.reshape(-1)
        self.tr_vec = eye.reshape(-1).astype(complex)


def _run_jump(
    plan: _JumpPlan,
    v0: np.ndarray,
    log0: np.ndarray,
    cfg: IntegratorConfig,
    uniforms: np.ndarray,
    *,
    keep_flags: bool,
    keep_states: bool,
    observables: dict[str, np.ndarray] | None,
):
    B = v0.shape[0]
    d = plan.dim
    n = cfg.n_steps
    h = cfg.dt
    rec = cfg.recorded_indices()
    is_rec = np.zeros(n + 1, dtype=bool)
    is_rec[rec] = True
    names = list(observables) if observables else []
    ops = [np.asarray(observables[k], dtype=complex) for k in names]
    herm = [is_hermitian(op) for op in ops]
    obs_out = {k: np.empty((B, rec.size), dtype=float if hm else complex) for k, hm in zip(names, herm)}
    purity_out = np.empty((B, rec.size))
    trace_out = np.empty((B, rec.size))
    logn_out = np.empty((B, rec.size))
    states_out = np.empty((B, rec.size, d, d), dtype=complex) if keep_states else None
    flags = np.zeros((B, n), dtype=bool) if keep_flags else None
    counts = np.zeros(B, dtype=int)

    v = np.array(v0, dtype=complex)
    logn = np.array(log0, dtype=float)
    lo, hi = TRACE_WINDOW
    r = 0

    def record():
        nonlocal r
        M = hermitize(v.reshape(B, d, d))
        tr = np.einsum("bii->b", M).real
        rho_n = M / tr[:, None, None]
        purity_out[:, r] = np.einsum("bij,bji->b", rho_n, rho_n).real
        trace_out[:, r] = tr
        logn_out[:, r] = logn
        if keep_states:
            states_out[:, r] = rho_n
        for k_name, op, hm in zip(names, ops, herm):
            val = np.einsum("ij,bji->b", op, rho_n)
            obs_out[k_name][:, r] = val.real if hm else val
        r += 1

    record()
    for k in range(n):
        tr = (v @ plan.tr_vec).real
        if not np.all(np.isfinite(tr)):
            raise NumericalError(f"non-finite trace at step {k}")
        if np.any(tr <= TRACE_FLOOR):
            raise StateError(f"state trace collapsed at step {k}")
        q = (v @ plan.rate_vec).real / tr
        v = v @ plan.P.T
        jump = uniforms[:, k] < q * h
        if jump.any():
            v[jump] = v[jump] @ plan.K.T
            counts += jump
            if keep_flags:
                flags[:, k] = jump
        tr = (v @ plan.tr_vec).real
        mask = (tr < lo) | (tr > hi)
        if mask.any():
            v[mask] /= tr[mask][:, None]
            logn[mask] += np.log(tr[mask])
        if is_rec[k + 1]:
            record()

    return rec * h, obs_out, purity_out, trace_out, logn_out, states_out, flags, counts, v, logn


def propagate_jump(
    model: MonitoredModel,
    omega0,
    cfg: IntegratorConfig,
    stream: NoiseStream,
    observables: dict[str, np.ndarray] | None = None,
    keep_states: bool = False,
) -> TrajectoryResult:
    """One photodetection trajectory with per-step Bernoulli clicks.

    Between clicks the state follows the exact exponential no-jump propagator;
    a click applies ``rho -> L rho L'`` followed by the correction unitary if
    the model carries jump feedback.  Click probability per step is
    ``<L'L> dt`` on the normalized state.
    """
    plan = _JumpPlan(model, cfg)
    state = _as_state(omega0)
    _check_state_dim(state, model)
    _check_stream(stream, cfg)
    u = stream.uniforms(cfg.n_steps)[None]
    times, obs, pur, tr, lg, states, flags, counts, v, logn = _run_jump(
        plan,
        state.matrix.reshape(1, -1),
        np.array([state.log_norm]),
        cfg,
        u,
        keep_flags=True,
        keep_states=keep_states,
        observables=observables,
    )
    record = MeasurementRecord(
        dt=cfg.dt,
        n_steps=cfg.n_steps,
        channel_indices=(),
        signals=np.empty((cfg.n_steps, 0)),
        jump_channel=model.photodetect_indices()[0],
        jump_flags=flags[0],
        seed=stream.seed,
        stream_index=stream.stream_index,
    )
    d = plan.dim
    return TrajectoryResult(
        times=times,
        observables={k: val[0] for k, val in obs.items()},
        purity=pur[0],
        trace=tr[0],
        log_norm=lg[0],
        final_state=QuantumState(hermitize(v[0].reshape(d, d)), float(logn[0])),
        record=record,
        states=states[0] if states is not None else None,
    )


def jump_ensemble(
    model: MonitoredModel,
    omega0,
    cfg: IntegratorConfig,
    n_traj: int,
    base_seed: int,
    chunk_size: int = 2048,
    threads: int = 1,
) -> JumpEnsembleResult:
    """Click counts and final states over ``n_traj`` photodetection runs."""
    if n_traj < 1:
        raise ConfigError(f"n_traj must be >= 1, got {n_traj}")
    plan = _JumpPlan(model, cfg)
    state = _as_state(omega0)
    _check_state_dim(state, model)
    d = plan.dim

    def run_chunk(rng: tuple[int, int]):
        i0, i1 = rng
        b = i1 - i0
        u = np.empty((b, cfg.n_steps))
        for j, idx in enumerate(range(i0, i1)):
            u[j] = NoiseStream(base_seed, idx, cfg.dt).uniforms(cfg.n_steps)
        v0 = np.broadcast_to(state.matrix.reshape(-1), (b, d * d))
        out = _run_jump(
            plan,
            v0,
            np.full(b, state.log_norm),
            cfg,
            u,
            keep_flags=False,
            keep_states=False,
            observables=None,
        )
        counts, v = out[7], out[8]
        M = hermitize(v.reshape(b, d, d))
        trs = np.einsum("bii->b", M).real
        return counts, M / trs[:, None, None]

    ranges = _chunk_ranges(n_traj, chunk_size)
    if threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run_chunk, ranges))
    else:
        partials = [run_chunk(r) for r in ranges]
    counts = np.concatenate([p[0] for p in partials])
    finals = np.concatenate([p[1] for p in partials])
    return JumpEnsembleResult(counts=counts, final_states=finals, n_steps=cfg.n_steps, dt=cfg.dt)
