"""Liouvillian vectorization, steady-state solvers, and the fidelity scan."""

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import random_hermitian, random_density, random_operator

from noknow import (
    DimensionError,
    DqcChainParams,
    ModelError,
    QuantumState,
    ResourceError,
    cluster_state,
    dqc_chain,
    expectation,
    fidelity_scan,
    lindblad_evolution,
    lindblad_rhs,
    overlap_fidelity,
    pauli,
    steady_state,
    vectorize,
)


class TestVectorize:
    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_matches_direct_rhs(self, d):
        # Lhat vec(rho) must equal vec of the generator applied to rho
        rng = np.random.default_rng(70 + d)
        H = random_hermitian(rng, d)
        Ls = [random_operator(rng, d) for _ in range(2)]
        rho = random_density(rng, d)
        liouv = vectorize(H, Ls)
        direct = lindblad_rhs(H, Ls, rho).reshape(-1)
        assert np.allclose(liouv.matrix @ rho.reshape(-1), direct, atol=1e-12)

    def test_requires_hermitian_hamiltonian(self):
        with pytest.raises(ModelError):
            vectorize(np.array([[0.0, 1.0], [0.0, 0.0]]), [])

    def test_collapse_shape_mismatch(self):
        with pytest.raises(DimensionError):
            vectorize(np.eye(2), [np.eye(3)])

    def test_dense_superoperator_cap(self):
        with pytest.raises(ResourceError):
            vectorize(np.zeros((70, 70)), [])


class TestSteadyState:
    def test_pure_dephasing_is_degenerate(self):
        gamma = 0.8
        liouv = vectorize(np.zeros((2, 2)), [np.sqrt(gamma) * pauli("z")])
        res = steady_state(liouv)
        assert res.degenerate
        assert not res.degraded
        assert res.spectral_gap == pytest.approx(2 * gamma, rel=1e-9)
        assert res.residual < 1e-10

    def test_amplitude_damping(self):
        gamma = 1.3
        liouv = vectorize(np.zeros((2, 2)), [np.sqrt(gamma) * pauli("minus")])
        res = steady_state(liouv)
        assert not res.degenerate
        assert res.spectral_gap == pytest.approx(gamma / 2, rel=1e-9)
        assert np.allclose(res.state.normalized(), np.diag([0.0, 1.0]), atol=1e-10)

    def test_agrees_with_long_time_evolution(self):
        rng = np.random.default_rng(71)
        H = random_hermitian(rng, 3)
        Ls = [random_operator(rng, 3), random_operator(rng, 3)]
        res = steady_state(vectorize(H, Ls))
        (late,) = lindblad_evolution(H, Ls, QuantumState(np.eye(3) / 3), [80.0 / res.spectral_gap])
        assert np.abs(res.state.normalized() - late.normalized()).max() < 1e-6

    def test_large_problem_uses_iterative_path(self):
        # d = 33 puts the superoperator just past the full-spectrum cutoff
        d = 33
        rng = np.random.default_rng(72)
        H = random_hermitian(rng, d)
        L = random_operator(rng, d)
        liouv = vectorize(H, [L])
        res = steady_state(liouv)
        assert not res.degraded
        assert res.residual < 1e-8

        null = sla.null_space(liouv.matrix, rcond=1e-10)
        assert null.shape[1] == 1
        ref = null[:, 0].reshape(d, d)
        ref = ref / np.trace(ref)
        ref = 0.5 * (ref + ref.conj().T)
        assert np.abs(res.state.normalized() - ref).max() < 1e-8

    def test_lossless_chain_reaches_cluster_state(self):
        for n in (2, 3):
            m = dqc_chain(DqcChainParams(n_sites=n, alpha=1.0, gamma=0.0))
            res = steady_state(vectorize(m.H, [ch.L for ch in m.channels]))
            assert not res.degraded
            f = overlap_fidelity(res.state, cluster_state(n))
            assert abs(f - 1.0) < 1e-8


class TestLindbladEvolution:
    def test_dephasing_closed_form(self):
        gamma, x0 = 0.6, 0.9
        rho0 = 0.5 * (np.eye(2) + x0 * pauli("x"))
        times = [0.0, 0.3, 1.0, 2.5]
        states = lindblad_evolution(np.zeros((2, 2)), [np.sqrt(gamma) * pauli("z")], rho0, times)
        for t, st in zip(times, states):
            got = expectation(pauli("x"), st).real
            assert abs(got - x0 * np.exp(-2 * gamma * t)) < 1e-12

    def test_unitary_limit(self):
        H = 0.5 * pauli("x")
        rho0 = np.diag([1.0, 0.0])
        (st,) = lindblad_evolution(H, [], rho0, [np.pi])
        assert np.allclose(st.normalized(), np.diag([0.0, 1.0]), atol=1e-12)


class TestFidelityScan:
    def test_row_structure_and_ordering(self):
        rows = fidelity_scan((2, 3), 10.0, (0.9, 1.0))
        assert len(rows) == 6
        keys = {
            "n_sites", "config", "eta", "fidelity",
            "residual", "spectral_gap", "degenerate", "degraded",
        }
        assert all(set(r) == keys for r in rows)
        for n in (2, 3):
            sub = {r["config"] if r["config"] == "no_feedback" else r["eta"]: r["fidelity"]
                   for r in rows if r["n_sites"] == n}
            assert np.isnan([r["eta"] for r in rows if r["n_sites"] == n][0])
            assert abs(sub[1.0] - 1.0) < 1e-8
            assert sub["no_feedback"] < sub[0.9] < sub[1.0]

    def test_no_feedback_rows_optional(self):
        rows = fidelity_scan((2,), 10.0, (1.0,), include_no_feedback=False)
        assert [r["config"] for r in rows] == ["feedback"]
