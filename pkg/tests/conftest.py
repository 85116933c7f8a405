"""Shared helpers: seeded random operators and the matched SME/Bloch integrator."""

import numpy as np

from noknow import (
    DephasingQubitParams,
    NoiseStream,
    bloch_rhs,
    innovation_action,
    pauli,
    stratonovich_step,
)


def random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


def random_density(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def random_unitary(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(a)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_operator(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def heun_driven_bloch(params, b0, signals, dt):
    """Heun integration of the Bloch equations along a frozen signal path."""
    b = np.asarray(b0, dtype=float).copy()
    out = [b.copy()]
    for y in signals:
        k1 = bloch_rhs(b, params, float(y))
        k2 = bloch_rhs(b + dt * k1, params, float(y))
        b = b + 0.5 * dt * (k1 + k2)
        out.append(b.copy())
    return np.array(out)


def sme_bloch_pair(omega, gamma, theta, b0, dt, n_steps, stream):
    """Integrate the normalized 2x2 measurement equation and its
    Bloch-coordinate form through the same Heun engine on one noise path.

    ``omega`` is the precession rate (the matrix Hamiltonian is
    ``(omega/2) sigma_x``).  Returns two ``(n_steps+1, 3)`` arrays of Bloch
    coordinates: the matrix-side trajectory and the direct Bloch trajectory.
    """
    params = DephasingQubitParams(omega=omega, gamma=gamma, theta=theta, eta=1.0)
    H = 0.5 * omega * pauli("x")
    Z = np.sqrt(gamma) * np.exp(1j * theta) * pauli("z")
    X = Z + Z.conj().T
    paulis = [pauli(k) for k in ("x", "y", "z")]

    def unflat(x):
        return np.ascontiguousarray(x).view(np.complex128).reshape(2, 2)

    def flat(m):
        return np.ascontiguousarray(m).view(np.float64).ravel()

    def g_matrix(m):
        # normalized innovation: back-action minus the signal mean times rho
        mean = np.trace(X @ m).real
        return innovation_action(Z, m) - mean * m

    def drift_m(x):
        m = unflat(x)
        mean = np.trace(X @ m).real
        return flat(-1j * (H @ m - m @ H) + mean * g_matrix(m))

    def diff_m(x):
        return flat(g_matrix(unflat(x)))

    def g_bloch(b):
        return bloch_rhs(b, params, 1.0) - bloch_rhs(b, params, 0.0)

    def drift_b(b):
        mean = 2.0 * np.sqrt(gamma) * np.cos(theta) * b[2]
        return bloch_rhs(b, params, mean)

    rho = np.asarray(
        0.5 * (np.eye(2) + b0[0] * paulis[0] + b0[1] * paulis[1] + b0[2] * paulis[2]),
        dtype=complex,
    )
    x = flat(rho)
    b = np.asarray(b0, dtype=float).copy()
    out_m = [np.array([np.trace(p @ rho).real for p in paulis])]
    out_b = [b.copy()]
    dW = stream.wiener_increments(n_steps)
    for k in range(n_steps):
        x = stratonovich_step(x, drift_m, diff_m, float(dW[k]), dt)
        b = stratonovich_step(b, drift_b, g_bloch, float(dW[k]), dt)
        m = unflat(x)
        out_m.append(np.array([np.trace(p @ m).real for p in paulis]))
        out_b.append(b.copy())
    return np.array(out_m), np.array(out_b)
