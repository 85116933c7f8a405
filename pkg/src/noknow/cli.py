"""Command-line front end: ``noknow <experiment> --config <file>``.

Configs are flat JSON objects; unknown keys are rejected and every violation
is reported at once.  Outputs are CSV (default) or JSON-lines with ``#``
metadata lines carrying the resolved config and its hash — never timestamps,
so a rerun with the same config produces byte-identical files.  The output
directory resolves as ``--out`` > ``$NOKNOW_OUTPUT_DIR`` > config ``out_dir``.

Exit codes: 0 success, 2 configuration, 3 numerical, 4 resource, 5 solver.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import __version__
from .errors import (
    ConfigError,
    DimensionError,
    ModelError,
    NumericalError,
    ParseError,
    RecordError,
    ResourceError,
    SolverError,
    StateError,
    ValidationError,
)
from .feedback import jump_correction
from .models import DephasingQubitParams, bloch_to_matrix, dephasing_qubit
from .operators import QuantumState, frobenius_distance, pauli
from .sde import IntegratorConfig, NoiseStream
from .steady import fidelity_scan, lindblad_evolution
from .trajectories import (
    Channel,
    MonitoredModel,
    ensemble_average,
    integrate_sme_engine,
    jump_ensemble,
    propagate_homodyne,
    propagate_homodyne_batch,
    propagate_with_filter,
    propagate_with_filter_batch,
)

EXPERIMENTS = (
    "trajectory",
    "ensemble",
    "filter-divergence",
    "feedback-cancel",
    "jump",
    "dqc-scan",
    "convergence",
)
ENV_OUT = "NOKNOW_OUTPUT_DIR"
_INV_SQRT2 = 1.0 / np.sqrt(2.0)


@dataclass
class RunConfig:
    """Resolved run parameters (defaults already applied)."""

    experiment: str
    omega: float = 1.0
    gamma: float = 1.0
    theta: float = float(np.pi / 2)
    eta: float = 1.0
    feedback: bool = False
    correction: bool = True
    rho0: tuple = (_INV_SQRT2, _INV_SQRT2, 0.0)
    pi0: tuple | None = None
    dt: float | None = None
    t_final: float | None = None
    record_stride: int = 1
    n_traj: int | None = None
    seed: int = 0
    n_list: tuple = (2, 3, 4)
    gamma_over_alpha: float = 10.0
    etas: tuple = (0.9, 0.99, 1.0)
    alpha: float = 1.0
    include_no_feedback: bool = True
    dt_list: tuple = (1e-2, 5e-3, 2.5e-3)
    out_dir: str = "noknow-out"
    format: str = "csv"
    threads: int | None = None


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _vec3(v) -> bool:
    if not (isinstance(v, list) and len(v) == 3 and all(_num(x) for x in v)):
        return False
    return sum(float(x) ** 2 for x in v) <= 1.0 + 1e-6


_CHECKS = {
    "experiment": (lambda v: isinstance(v, str) and v in EXPERIMENTS, f"one of {EXPERIMENTS}"),
    "omega": (_num, "a number"),
    "gamma": (lambda v: _num(v) and v >= 0, "a number >= 0"),
    "theta": (_num, "a number (radians)"),
    "eta": (lambda v: _num(v) and 0.0 <= v <= 1.0, "a number in [0, 1]"),
    "feedback": (lambda v: isinstance(v, bool), "true or false"),
    "correction": (lambda v: isinstance(v, bool), "true or false"),
    "rho0": (_vec3, "a Bloch vector [x, y, z] with length <= 1"),
    "pi0": (_vec3, "a Bloch vector [x, y, z] with length <= 1"),
    "dt": (lambda v: _num(v) and v > 0, "a number > 0"),
    "t_final": (lambda v: _num(v) and v > 0, "a number > 0"),
    "record_stride": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1, "an integer >= 1"),
    "n_traj": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1, "an integer >= 1"),
    "seed": (lambda v: isinstance(v, int) and not isinstance(v, bool), "an integer"),
    "n_list": (
        lambda v: isinstance(v, list) and v and all(isinstance(x, int) and not isinstance(x, bool) and x >= 2 for x in v),
        "a list of integers >= 2",
    ),
    "gamma_over_alpha": (lambda v: _num(v) and v >= 0, "a number >= 0"),
    "etas": (lambda v: isinstance(v, list) and v and all(_num(x) and 0.0 <= x <= 1.0 for x in v), "a list of numbers in [0, 1]"),
    "alpha": (lambda v: _num(v) and v > 0, "a number > 0"),
    "include_no_feedback": (lambda v: isinstance(v, bool), "true or false"),
    "dt_list": (lambda v: isinstance(v, list) and v and all(_num(x) and x > 0 for x in v), "a list of numbers > 0"),
    "out_dir": (lambda v: isinstance(v, str) and bool(v), "a non-empty string"),
    "format": (lambda v: v in ("csv", "jsonl"), "csv or jsonl"),
    "threads": (lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1, "an integer >= 1"),
}

_COMMON = {"experiment", "seed", "out_dir", "format", "threads"}
_ALLOWED = {
    "trajectory": _COMMON | {"omega", "gamma", "theta", "eta", "feedback", "rho0", "pi0", "dt", "t_final", "record_stride"},
    "ensemble": _COMMON | {"omega", "gamma", "theta", "eta", "feedback", "rho0", "dt", "t_final", "record_stride", "n_traj"},
    "filter-divergence": _COMMON | {"omega", "gamma", "theta", "eta", "rho0", "pi0", "dt", "t_final", "record_stride", "n_traj"},
    "feedback-cancel": _COMMON | {"omega", "gamma", "eta", "rho0", "dt", "t_final", "record_stride", "n_traj"},
    "jump": _COMMON | {"omega", "rho0", "dt", "t_final", "record_stride", "n_traj", "correction"},
    "dqc-scan": _COMMON | {"n_list", "gamma_over_alpha", "etas", "alpha", "include_no_feedback"},
    "convergence": _COMMON | {"omega", "gamma", "theta", "eta", "rho0", "dt_list", "t_final", "n_traj"},
}
_N_TRAJ_DEFAULT = {
    "ensemble": 256,
    "filter-divergence": 50,
    "feedback-cancel": 20,
    "jump": 1000,
    "convergence": 16,
}


def parse_config(text: str, experiment: str | None = None) -> RunConfig:
    """Parse and validate a JSON config, reporting every violation at once."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"config is not valid JSON: {exc.msg} at line {exc.lineno} column {exc.colno}"
        ) from exc
    if not isinstance(data, dict):
        raise ParseError(f"config must be a JSON object, got {type(data).__name__}")

    violations: list[str] = []
    exp = experiment
    if "experiment" in data:
        v = data["experiment"]
        ok, want = _CHECKS["experiment"]
        if not ok(v):
            violations.append(f"experiment: expected {want}, got {v!r}")
        elif experiment is not None and v != experiment:
            violations.append(f"experiment: config says {v!r} but {experiment!r} was requested")
        else:
            exp = v
    if exp is None:
        violations.append("experiment: missing (provide it on the command line or in the config)")
        raise ValidationError(violations)

    allowed = _ALLOWED[exp]
    values: dict = {}
    for key, v in data.items():
        if key == "experiment":
            continue
        if key not in _CHECKS:
            violations.append(f"{key}: unknown key")
            continue
        if key not in allowed:
            violations.append(f"{key}: not applicable to the {exp!r} experiment")
            continue
        ok, want = _CHECKS[key]
        if not ok(v):
            violations.append(f"{key}: expected {want}, got {v!r}")
            continue
        values[key] = tuple(v) if isinstance(v, list) else v
    if violations:
        raise ValidationError(violations)

    rc = RunConfig(experiment=exp, **values)
    # derived defaults: dt from the fastest rate, horizon from the decoherence time
    if rc.dt is None:
        base = max(abs(rc.omega), rc.gamma) if exp != "jump" else max(abs(rc.omega), 1.0)
        rc.dt = 1e-3 / base if base > 0 else 1e-3
    if rc.t_final is None:
        rc.t_final = 5.0 / rc.gamma if rc.gamma > 0 else 5.0
    if rc.n_traj is None:
        rc.n_traj = _N_TRAJ_DEFAULT.get(exp, 1)
    if rc.threads is None:
        rc.threads = os.cpu_count() or 1
    return rc


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _coerce(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _metadata(rc: RunConfig) -> dict:
    # only keys that influence the payload: threads and out_dir must not
    # change the bytes we write
    resolved = {
        f.name: getattr(rc, f.name)
        for f in fields(rc)
        if f.name in _ALLOWED[rc.experiment] and f.name not in ("out_dir", "threads")
    }
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=str)
    return {
        "experiment": rc.experiment,
        "version": __version__,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "config": canon,
        "seed": rc.seed,
    }


def _write(rc: RunConfig, metadata: dict, header: list[str], rows: list[list]) -> Path:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "csv" if rc.format == "csv" else "jsonl"
    path = out / f"{rc.experiment}.{suffix}"
    rows = [[_coerce(v) for v in row] for row in rows]
    if rc.format == "csv":
        with open(path, "w", newline="") as fh:
            for k, v in metadata.items():
                fh.write(f"# {k}: {v}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    else:
        with open(path, "w") as fh:
            fh.write(json.dumps({"_meta": metadata}) + "\n")
            for row in rows:
                fh.write(json.dumps(dict(zip(header, row))) + "\n")
    return path


def _qubit_observables() -> dict[str, np.ndarray]:
    return {"sigma_x": pauli("x"), "sigma_y": pauli("y"), "sigma_z": pauli("z")}


def _signal_column(record, rec_idx: np.ndarray, n_steps: int) -> np.ndarray:
    # signal over the step starting at each recorded time; final row has none
    sig = np.full(rec_idx.size, np.nan)
    inside = rec_idx < n_steps
    sig[inside] = record.signals[rec_idx[inside], 0]
    return sig


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------


def _run_trajectory(rc: RunConfig) -> list[Path]:
    params = DephasingQubitParams(rc.omega, rc.gamma, rc.theta, rc.eta)
    model = dephasing_qubit(params, with_feedback=rc.feedback)
    cfg = IntegratorConfig(dt=rc.dt, t_final=rc.t_final, record_stride=rc.record_stride)
    rho0 = QuantumState(bloch_to_matrix(rc.rho0))
    stream = NoiseStream(rc.seed, 0, cfg.dt)
    obs = _qubit_observables()
    distances = None
    if rc.pi0 is not None:
        run = propagate_with_filter(
            model, rho0, QuantumState(bloch_to_matrix(rc.pi0)), cfg, stream, observables=obs
        )
        res, distances = run.system, run.distances
    else:
        res = propagate_homodyne(model, rho0, cfg, stream, observables=obs)
    rec_idx = cfg.recorded_indices()
    sig = _signal_column(res.record, rec_idx, cfg.n_steps)
    header = ["time", "sigma_x", "sigma_y", "sigma_z", "signal", "trace", "purity", "log_norm"]
    if distances is not None:
        header.append("filter_distance")
    rows = []
    for r, t in enumerate(res.times):
        row = [
            t,
            res.observables["sigma_x"][r],
            res.observables["sigma_y"][r],
            res.observables["sigma_z"][r],
            sig[r],
            res.trace[r],
            res.purity[r],
            res.log_norm[r],
        ]
        if distances is not None:
            row.append(distances[r])
        rows.append(row)
    return [_write(rc, _metadata(rc), header, rows)]


def _run_ensemble(rc: RunConfig) -> list[Path]:
    params = DephasingQubitParams(rc.omega, rc.gamma, rc.theta, rc.eta)
    model = dephasing_qubit(params, with_feedback=rc.feedback)
    cfg = IntegratorConfig(dt=rc.dt, t_final=rc.t_final, record_stride=rc.record_stride)
    rho0 = QuantumState(bloch_to_matrix(rc.rho0))
    ens = ensemble_average(
        model, rho0, cfg, rc.n_traj, rc.seed, observables=_qubit_observables(), threads=rc.threads
    )
    names = ("sigma_x", "sigma_y", "sigma_z")
    header = ["time"] + [f"{n}_{kind}" for n in names for kind in ("mean", "sem")]
    rows = []
    for r, t in enumerate(ens.times):
        row = [t]
        for n in names:
            row.extend([ens.observable_mean[n][r], ens.observable_sem[n][r]])
        rows.append(row)
    meta = _metadata(rc)
    meta["n_traj"] = rc.n_traj
    return [_write(rc, meta, header, rows)]


def _run_filter_divergence(rc: RunConfig) -> list[Path]:
    params = DephasingQubitParams(rc.omega, rc.gamma, rc.theta, rc.eta)
    model = dephasing_qubit(params)
    cfg = IntegratorConfig(dt=rc.dt, t_final=rc.t_final, record_stride=rc.record_stride)
    rho0 = QuantumState(bloch_to_matrix(rc.rho0))
    pi0_vec = rc.pi0 if rc.pi0 is not None else (_INV_SQRT2, -_INV_SQRT2, 0.0)
    pi0 = QuantumState(bloch_to_matrix(pi0_vec))
    streams = [NoiseStream(rc.seed, i, cfg.dt) for i in range(rc.n_traj)]
    times, dists = propagate_with_filter_batch(model, rho0, pi0, cfg, streams)
    header = ["time", "distance_mean", "distance_median", "distance_min", "distance_max"]
    rows = [
        [t, dists[:, r].mean(), np.median(dists[:, r]), dists[:, r].min(), dists[:, r].max()]
        for r, t in enumerate(times)
    ]
    meta = _metadata(rc)
    meta["n_traj"] = rc.n_traj
    meta["initial_distance"] = frobenius_distance(rho0, pi0)
    return [_write(rc, meta, header, rows)]


def _run_feedback_cancel(rc: RunConfig) -> list[Path]:
    params = DephasingQubitParams(rc.omega, rc.gamma, np.pi / 2, rc.eta)
    model = dephasing_qubit(params, with_feedback=True)
    cfg = IntegratorConfig(dt=rc.dt, t_final=rc.t_final, record_stride=rc.record_stride)
    rho0 = QuantumState(bloch_to_matrix(rc.rho0))
    streams = [NoiseStream(rc.seed, i, cfg.dt) for i in range(rc.n_traj)]
    results = propagate_homodyne_batch(model, rho0, cfg, streams, keep_states=True)
    # expected closed dynamics: unitary part plus the (1-eta) residual dephasing
    resid = (1.0 - rc.eta) * rc.gamma
    Ls = [np.sqrt(resid) * pauli("z")] if resid > 0 else []
    refs = lindblad_evolution(model.H, Ls, rho0, results[0].times)
    dists = np.empty((len(results), results[0].times.size))
    purity = np.empty_like(dists)
    for b, res in enumerate(results):
        purity[b] = res.purity
        for r in range(res.times.size):
            dists[b, r] = frobenius_distance(res.states[r], refs[r])
    header = ["time", "distance_median", "distance_max", "purity_min"]
    rows = [
        [t, np.median(dists[:, r]), dists[:, r].max(), purity[:, r].min()]
        for r, t in enumerate(results[0].times)
    ]
    meta = _metadata(rc)
    meta["n_traj"] = rc.n_traj
    return [_write(rc, meta, header, rows)]


def _run_jump(rc: RunConfig) -> list[Path]:
    H = rc.omega * pauli("z")
    U = pauli("x")
    fb = jump_correction(U) if rc.correction else None
    model = MonitoredModel(H=H, channels=(Channel.photodetect(U),), feedback=fb)
    cfg = IntegratorConfig(dt=rc.dt, t_final=rc.t_final, record_stride=rc.record_stride)
    rho0 = QuantumState(bloch_to_matrix(rc.rho0))
    ens = jump_ensemble(model, rho0, cfg, rc.n_traj, rc.seed, threads=rc.threads)
    Ut = sla.expm(-1j * H * cfg.n_steps * cfg.dt)
    ref = Ut @ rho0.normalized() @ Ut.conj().T
    header = ["stream_index", "n_jumps", "final_distance_to_unitary"]
    rows = [
        [i, int(ens.counts[i]), frobenius_distance(ens.final_states[i], ref)]
        for i in range(rc.n_traj)
    ]
    meta = _metadata(rc)
    meta["count_mean"] = float(ens.counts.mean())
    meta["count_var"] = float(ens.counts.var(ddof=1)) if rc.n_traj > 1 else 0.0
    return [_write(rc, meta, header, rows)]


def _run_dqc_scan(rc: RunConfig) -> list[Path]:
    scan = fidelity_scan(
        rc.n_list,
        rc.gamma_over_alpha,
        rc.etas,
        alpha=rc.alpha,
        include_no_feedback=rc.include_no_feedback,
    )
    header = ["n_sites", "config", "eta", "fidelity", "residual", "spectral_gap", "degenerate", "degraded"]
    rows = [[row[k] for k in header] for row in scan]
    return [_write(rc, _metadata(rc), header, rows)]


def _run_convergence(rc: RunConfig) -> list[Path]:
    params = DephasingQubitParams(rc.omega, rc.gamma, rc.theta, rc.eta)
    model = dephasing_qubit(params)
    rho0 = QuantumState(bloch_to_matrix(rc.rho0))
    header = ["dt", "ito_strat_distance_median", "heun_refinement_median"]
    rows = []
    for dt in rc.dt_list:
        cfg_s = IntegratorConfig(dt=dt, t_final=rc.t_final, scheme="stratonovich_heun")
        cfg_i = IntegratorConfig(dt=dt, t_final=rc.t_final, scheme="ito_euler")
        cfg_f = IntegratorConfig(dt=dt / 2, t_final=rc.t_final, scheme="stratonovich_heun")
        d_is, d_ref = [], []
        for i in range(rc.n_traj):
            fine = NoiseStream(rc.seed, i, dt / 2).wiener_increments(2 * cfg_s.n_steps)
            coarse = fine[0::2] + fine[1::2]
            strat = integrate_sme_engine(model, rho0, cfg_s, coarse)
            ito = integrate_sme_engine(model, rho0, cfg_i, coarse)
            refined = integrate_sme_engine(model, rho0, cfg_f, fine)
            d_is.append(frobenius_distance(strat, ito))
            d_ref.append(frobenius_distance(strat, refined))
        rows.append([dt, float(np.median(d_is)), float(np.median(d_ref))])
    meta = _metadata(rc)
    meta["n_traj"] = rc.n_traj
    return [_write(rc, meta, header, rows)]


_RUNNERS = {
    "trajectory": _run_trajectory,
    "ensemble": _run_ensemble,
    "filter-divergence": _run_filter_divergence,
    "feedback-cancel": _run_feedback_cancel,
    "jump": _run_jump,
    "dqc-scan": _run_dqc_scan,
    "convergence": _run_convergence,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="noknow",
        description="Monitored open-system trajectories, no-knowledge feedback, and steady states.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, type=Path, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None, help="parallelism degree (results are identical for any value)")
    args = parser.parse_args(argv)

    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        rc = parse_config(text, args.experiment)
        if args.seed is not None:
            rc.seed = args.seed
        if args.threads is not None:
            rc.threads = max(1, args.threads)
        out_dir = args.out or os.environ.get(ENV_OUT) or rc.out_dir
        rc.out_dir = str(out_dir)
        paths = _RUNNERS[rc.experiment](rc)
    except (ParseError, ValidationError, ConfigError, ModelError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, StateError, RecordError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ResourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
