"""Homodyne propagation, filtering, ensembles, and the jump unraveling."""

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import random_density, random_hermitian

from noknow import (
    Channel,
    ConfigError,
    DephasingQubitParams,
    DimensionError,
    IntegratorConfig,
    MeasurementRecord,
    ModelError,
    MonitoredModel,
    NoiseStream,
    QuantumState,
    RecordError,
    bloch_to_matrix,
    dephasing_qubit,
    ensemble_average,
    frobenius_distance,
    homodyne_signal,
    integrate_sme_engine,
    jump_correction,
    jump_ensemble,
    lindblad_rhs,
    pauli,
    propagate_filter,
    propagate_homodyne,
    propagate_homodyne_batch,
    propagate_jump,
    propagate_with_filter,
    propagate_with_filter_batch,
    sme_rhs,
)
from noknow.steady import lindblad_evolution

INV_SQRT2 = 1.0 / np.sqrt(2.0)
RHO0 = QuantumState(bloch_to_matrix((INV_SQRT2, INV_SQRT2, 0.0)))
PI0 = QuantumState(bloch_to_matrix((INV_SQRT2, -INV_SQRT2, 0.0)))


class TestChannel:
    def test_homodyne_fields(self):
        ch = Channel.homodyne(pauli("z"), theta=0.4, eta=0.9)
        assert ch.kind == Channel.HOMODYNE
        assert ch.theta == 0.4 and ch.eta == 0.9

    def test_efficiency_bounds(self):
        with pytest.raises(ModelError):
            Channel.homodyne(pauli("z"), theta=0.0, eta=1.5)
        with pytest.raises(ModelError):
            Channel.homodyne(pauli("z"), theta=0.0, eta=-0.1)

    def test_photodetect_and_unmonitored(self):
        assert Channel.photodetect(pauli("x")).kind == Channel.PHOTODETECT
        assert Channel.unmonitored(pauli("minus")).kind == Channel.UNMONITORED

    def test_non_square_coupling(self):
        with pytest.raises(DimensionError):
            Channel.homodyne(np.ones((2, 3)), theta=0.0)


class TestMonitoredModel:
    def test_requires_hermitian_hamiltonian(self):
        with pytest.raises(ModelError):
            MonitoredModel(H=pauli("minus"), channels=(Channel.unmonitored(pauli("z")),))

    def test_dimension_mismatch(self):
        big = Channel.unmonitored(np.eye(4, dtype=complex))
        with pytest.raises(DimensionError):
            MonitoredModel(H=pauli("x"), channels=(big,))

    def test_channel_index_sets(self):
        m = MonitoredModel(
            H=pauli("x"),
            channels=(
                Channel.homodyne(pauli("z"), theta=0.0),
                Channel.unmonitored(pauli("minus")),
                Channel.photodetect(pauli("x")),
            ),
        )
        assert m.homodyne_indices() == (0,)
        assert m.photodetect_indices() == (2,)


def test_homodyne_signal_oracle():
    ch = Channel.homodyne(2.0 * pauli("z"), theta=0.0, eta=0.25)
    rho = np.diag([0.8, 0.2]).astype(complex)
    # sqrt(eta) <L e^{i0} + L' e^{-i0}> = 0.5 * 2 * 2 * 0.6
    assert homodyne_signal(rho, ch, xi=0.3) == pytest.approx(0.5 * 4.0 * 0.6 + 0.3)
    with pytest.raises(ModelError):
        homodyne_signal(rho, Channel.photodetect(pauli("x")), xi=0.0)


class TestSmeRhs:
    def test_zero_efficiency_reduces_to_master_equation(self):
        rng = np.random.default_rng(50)
        H = random_hermitian(rng, 2)
        L = 1.3 * pauli("z")
        m = MonitoredModel(H=H, channels=(Channel.homodyne(L, theta=0.7, eta=0.0),))
        rho = random_density(rng, 2)
        drift, diffs = sme_rhs(m, rho, [0.4])
        assert np.allclose(drift, lindblad_rhs(H, [L], rho), atol=1e-13)
        assert np.allclose(diffs[0], 0.0)

    @pytest.mark.parametrize("y", [-2.0, 0.0, 3.7])
    def test_perfect_cancellation_is_pathwise(self, y):
        # theta=pi/2, eta=1, Hermitian L, gain sqrt(eta) L:
        # drift + diffusion*y collapses to the bare commutator for every y
        m = dephasing_qubit(DephasingQubitParams(omega=0.8, gamma=1.3), with_feedback=True)
        rng = np.random.default_rng(51)
        rho = random_density(rng, 2)
        drift, diffs = sme_rhs(m, rho, [y])
        total = drift + diffs[0] * y
        want = -1j * (m.H @ rho - rho @ m.H)
        assert np.allclose(total, want, atol=1e-12)

    @pytest.mark.parametrize("y", [-1.0, 0.5])
    def test_partial_efficiency_leaves_scaled_dissipator(self, y):
        eta, gamma = 0.5, 1.0
        m = dephasing_qubit(DephasingQubitParams(gamma=gamma, eta=eta), with_feedback=True)
        rng = np.random.default_rng(52)
        rho = random_density(rng, 2)
        drift, diffs = sme_rhs(m, rho, [y])
        total = drift + diffs[0] * y
        L = np.sqrt((1 - eta) * gamma) * pauli("z")
        assert np.allclose(total, lindblad_rhs(m.H, [L], rho), atol=1e-12)

    def test_signal_count_checked(self):
        m = dephasing_qubit(DephasingQubitParams())
        with pytest.raises(DimensionError):
            sme_rhs(m, RHO0, [0.1, 0.2])


class TestPropagateHomodyne:
    def test_pure_state_stays_pure_at_unit_efficiency(self):
        m = dephasing_qubit(DephasingQubitParams(theta=4 * np.pi / 5))
        cfg = IntegratorConfig(dt=1e-3, t_final=5.0)
        res = propagate_homodyne(m, RHO0, cfg, NoiseStream(1, 0, cfg.dt))
        assert np.all(np.abs(res.purity - 1.0) < 1e-5)

    def test_replay_is_bitwise(self):
        m = dephasing_qubit(DephasingQubitParams(theta=4 * np.pi / 5, eta=0.8))
        cfg = IntegratorConfig(dt=1e-3, t_final=0.5)
        res = propagate_homodyne(
            m, RHO0, cfg, NoiseStream(2, 0, cfg.dt), keep_states=True,
            observables={"sx": pauli("x")},
        )
        rerun = propagate_filter(
            m, RHO0, res.record, cfg, keep_states=True, observables={"sx": pauli("x")}
        )
        assert np.array_equal(res.states, rerun.states)
        assert np.array_equal(res.observables["sx"], rerun.observables["sx"])
        assert np.array_equal(res.trace, rerun.trace)

    def test_unmonitored_limit_matches_dense_oracle(self):
        m = dephasing_qubit(DephasingQubitParams(eta=0.0, theta=0.0))
        cfg = IntegratorConfig(dt=1e-3, t_final=2.0)
        res = propagate_homodyne(m, RHO0, cfg, NoiseStream(3, 0, cfg.dt), keep_states=True)
        refs = lindblad_evolution(m.H, [c.L for c in m.channels], RHO0, res.times)
        worst = max(frobenius_distance(s, r) for s, r in zip(res.states, refs))
        assert worst < 1e-6

    def test_record_keeps_every_step_despite_stride(self):
        m = dephasing_qubit(DephasingQubitParams())
        cfg = IntegratorConfig(dt=1e-2, t_final=1.0, record_stride=7)
        res = propagate_homodyne(m, RHO0, cfg, NoiseStream(4, 0, cfg.dt))
        assert res.record.signals.shape == (100, 1)
        assert res.times.shape == (cfg.recorded_indices().size,)

    def test_ito_scheme_rejected_by_split_stepper(self):
        m = dephasing_qubit(DephasingQubitParams())
        cfg = IntegratorConfig(dt=1e-3, t_final=0.1, scheme="ito_euler")
        with pytest.raises(ConfigError):
            propagate_homodyne(m, RHO0, cfg, NoiseStream(0, 0, cfg.dt))

    def test_batch_matches_single_runs(self):
        m = dephasing_qubit(DephasingQubitParams(theta=4 * np.pi / 5, eta=0.6))
        cfg = IntegratorConfig(dt=1e-3, t_final=0.5)
        streams = [NoiseStream(10, i, cfg.dt) for i in range(4)]
        batch = propagate_homodyne_batch(m, RHO0, cfg, streams, keep_states=True)
        for i in range(4):
            single = propagate_homodyne(
                m, RHO0, cfg, NoiseStream(10, i, cfg.dt), keep_states=True
            )
            worst = max(
                frobenius_distance(a, b) for a, b in zip(batch[i].states, single.states)
            )
            assert worst < 1e-11

    def test_observables_real_for_hermitian(self):
        m = dephasing_qubit(DephasingQubitParams(theta=0.0))
        cfg = IntegratorConfig(dt=1e-3, t_final=0.2)
        res = propagate_homodyne(
            m, RHO0, cfg, NoiseStream(5, 0, cfg.dt), observables={"sy": pauli("y")}
        )
        assert res.observables["sy"].dtype == np.float64
        assert np.all(np.abs(res.observables["sy"]) <= 1.0 + 1e-9)


class TestFilterRuns:
    def test_identical_initials_never_separate(self):
        m = dephasing_qubit(DephasingQubitParams(theta=4 * np.pi / 5))
        cfg = IntegratorConfig(dt=1e-3, t_final=0.5)
        run = propagate_with_filter(m, RHO0, RHO0, cfg, NoiseStream(6, 0, cfg.dt))
        assert np.all(run.distances == 0.0)

    def test_initial_distance_recorded(self):
        m = dephasing_qubit(DephasingQubitParams(theta=4 * np.pi / 5))
        cfg = IntegratorConfig(dt=1e-3, t_final=0.2)
        run = propagate_with_filter(m, RHO0, PI0, cfg, NoiseStream(7, 0, cfg.dt))
        assert run.distances[0] == pytest.approx(1.0)

    def test_norm_constancy_at_no_knowledge_angle(self):
        # theta=pi/2, eta=1: the Frobenius distance is a pathwise constant
        m = dephasing_qubit(DephasingQubitParams(theta=np.pi / 2))
        cfg = IntegratorConfig(dt=1e-3, t_final=5.0)
        streams = [NoiseStream(8, i, cfg.dt) for i in range(3)]
        _, dists = propagate_with_filter_batch(m, RHO0, PI0, cfg, streams)
        assert np.abs(dists - 1.0).max() < 5e-3

    def test_filter_validates_record(self):
        m = dephasing_qubit(DephasingQubitParams())
        cfg = IntegratorConfig(dt=1e-3, t_final=0.1)
        res = propagate_homodyne(m, RHO0, cfg, NoiseStream(9, 0, cfg.dt))
        other = IntegratorConfig(dt=2e-3, t_final=0.1)
        with pytest.raises(RecordError):
            propagate_filter(m, RHO0, res.record, other)
        bad = MeasurementRecord(
            dt=cfg.dt,
            n_steps=cfg.n_steps,
            channel_indices=(0,),
            signals=res.record.signals,
            jump_channel=0,
            jump_flags=np.zeros(cfg.n_steps, dtype=bool),
        )
        with pytest.raises(RecordError):
            propagate_filter(m, RHO0, bad, cfg)


class TestEnsemble:
    def test_thread_count_never_changes_results(self):
        m = dephasing_qubit(DephasingQubitParams(theta=0.0))
        cfg = IntegratorConfig(dt=2e-3, t_final=0.4)
        one = ensemble_average(m, RHO0, cfg, 40, 77, observables={"sx": pauli("x")}, threads=1)
        four = ensemble_average(m, RHO0, cfg, 40, 77, observables={"sx": pauli("x")}, threads=4)
        assert np.array_equal(
            [s.matrix for s in one.mean_states], [s.matrix for s in four.mean_states]
        )
        assert np.array_equal(one.observable_mean["sx"], four.observable_mean["sx"])
        assert np.array_equal(one.observable_sem["sx"], four.observable_sem["sx"])

    def test_mean_states_are_physical(self):
        m = dephasing_qubit(DephasingQubitParams(theta=0.0, eta=0.5))
        cfg = IntegratorConfig(dt=2e-3, t_final=0.4)
        ens = ensemble_average(m, RHO0, cfg, 24, 5)
        for state in ens.mean_states:
            rho = state.normalized()
            assert np.allclose(rho, rho.conj().T)
            assert np.linalg.eigvalsh(rho).min() > -1e-12

    def test_average_recovers_master_equation(self):
        # conditioning averages out: <sigma_x> follows exp(-2 gamma t)/sqrt(2)
        m = dephasing_qubit(DephasingQubitParams(omega=1.0, gamma=1.0, theta=0.0))
        cfg = IntegratorConfig(dt=1e-3, t_final=1.0)
        ens = ensemble_average(m, RHO0, cfg, 192, 13, observables={"sx": pauli("x")})
        k = ens.times.size - 1
        want = np.exp(-2.0 * ens.times[k]) * INV_SQRT2
        got = ens.observable_mean["sx"][k]
        sem = ens.observable_sem["sx"][k]
        assert abs(got - want) < 4.0 * sem
        assert ens.n_traj == 192


class TestEngineCrossCheck:
    def test_engine_tracks_production_stepper(self):
        m = dephasing_qubit(DephasingQubitParams(theta=4 * np.pi / 5))
        dists = []
        for dt in (1e-3, 5e-4):
            cfg = IntegratorConfig(dt=dt, t_final=1.0)
            worst = 0.0
            for seed in range(3):
                dW = NoiseStream(seed, 0, dt).wiener_increments(cfg.n_steps)
                eng = integrate_sme_engine(m, RHO0, cfg, dW)
                prod = propagate_homodyne(m, RHO0, cfg, NoiseStream(seed, 0, dt))
                worst = max(worst, frobenius_distance(eng, prod.final_state))
            dists.append(worst)
        assert dists[0] < 2e-2
        assert dists[1] < dists[0]

    def test_schemes_agree_on_shared_path(self):
        m = dephasing_qubit(DephasingQubitParams(theta=4 * np.pi / 5))
        gaps = []
        for dt in (2e-3, 1e-3):
            cfg_s = IntegratorConfig(dt=dt, t_final=0.5, scheme="stratonovich_heun")
            cfg_i = IntegratorConfig(dt=dt, t_final=0.5, scheme="ito_euler")
            dW = NoiseStream(21, 0, dt).wiener_increments(cfg_s.n_steps)
            gaps.append(
                frobenius_distance(
                    integrate_sme_engine(m, RHO0, cfg_s, dW),
                    integrate_sme_engine(m, RHO0, cfg_i, dW),
                )
            )
        assert gaps[1] < gaps[0]

    def test_engine_rejects_bad_inputs(self):
        m = dephasing_qubit(DephasingQubitParams())
        cfg = IntegratorConfig(dt=1e-3, t_final=0.1)
        with pytest.raises(ConfigError):
            integrate_sme_engine(m, RHO0, cfg, np.zeros(7))
        fb = dephasing_qubit(DephasingQubitParams(), with_feedback=True)
        with pytest.raises(ModelError):
            integrate_sme_engine(fb, RHO0, cfg, np.zeros(cfg.n_steps))


def _detector_model(omega=1.0, correct=True):
    U = pauli("x")
    fb = jump_correction(U) if correct else None
    return MonitoredModel(H=omega * pauli("z"), channels=(Channel.photodetect(U),), feedback=fb)


class TestJumpUnraveling:
    def test_rate_guard(self):
        cfg = IntegratorConfig(dt=0.2, t_final=5.0)
        with pytest.raises(ConfigError):
            propagate_jump(_detector_model(), RHO0, cfg, NoiseStream(0, 0, cfg.dt))

    def test_parity_oracle_without_hamiltonian(self):
        # H=0, no correction: the state is rho0 flipped once per click
        m = MonitoredModel(H=np.zeros((2, 2)), channels=(Channel.photodetect(pauli("x")),))
        cfg = IntegratorConfig(dt=1e-2, t_final=3.0)
        rho0 = QuantumState(np.diag([1.0, 0.0]).astype(complex))
        for seed in range(5):
            res = propagate_jump(m, rho0, cfg, NoiseStream(seed, 0, cfg.dt))
            n = int(res.record.jump_flags.sum())
            want = np.diag([1.0, 0.0]) if n % 2 == 0 else np.diag([0.0, 1.0])
            assert np.allclose(res.final_state.normalized(), want, atol=1e-12)

    def test_correction_reproduces_stepwise_deterministic_evolution(self):
        m = _detector_model()
        cfg = IntegratorConfig(dt=1e-3, t_final=2.0)
        res = propagate_jump(m, RHO0, cfg, NoiseStream(30, 0, cfg.dt))
        assert int(res.record.jump_flags.sum()) > 0  # clicks did happen
        P = sla.expm(
            (-1j * (np.kron(m.H, np.eye(2)) - np.kron(np.eye(2), m.H.T))
             - np.kron(np.eye(2), np.eye(2))) * cfg.dt
        )
        v = RHO0.matrix.reshape(1, -1).astype(complex)
        for _ in range(cfg.n_steps):
            v = v @ P.T
        ref = v.reshape(2, 2)
        ref = (ref + ref.conj().T) / 2
        ref /= np.trace(ref).real
        assert frobenius_distance(res.final_state, ref) < 1e-13

    def test_unit_rate_counts(self):
        # L'L = 1: clicks are Bernoulli(dt) per step regardless of the state
        m = _detector_model()
        cfg = IntegratorConfig(dt=2e-3, t_final=2.0)
        ens = jump_ensemble(m, RHO0, cfg, 600, 17)
        assert ens.counts.mean() == pytest.approx(2.0, abs=4 * np.sqrt(2.0 / 600))

    def test_ensemble_thread_invariance(self):
        m = _detector_model()
        cfg = IntegratorConfig(dt=2e-3, t_final=1.0)
        a = jump_ensemble(m, RHO0, cfg, 100, 3, threads=1)
        b = jump_ensemble(m, RHO0, cfg, 100, 3, threads=3)
        assert np.array_equal(a.counts, b.counts)
        assert np.array_equal(a.final_states, b.final_states)

    def test_flags_match_counts(self):
        m = _detector_model(correct=False)
        cfg = IntegratorConfig(dt=5e-3, t_final=2.0)
        res = propagate_jump(m, RHO0, cfg, NoiseStream(12, 0, cfg.dt))
        assert res.record.jump_channel == 0
        assert res.record.jump_flags.shape == (cfg.n_steps,)

    def test_homodyne_model_rejected(self):
        m = dephasing_qubit(DephasingQubitParams())
        cfg = IntegratorConfig(dt=1e-3, t_final=0.1)
        with pytest.raises(ModelError):
            propagate_jump(m, RHO0, cfg, NoiseStream(0, 0, cfg.dt))
