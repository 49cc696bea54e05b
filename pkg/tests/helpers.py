"""Shared generators for tests."""

import numpy as np

from ethlab.hilbert import random_hermitian


def leakage_instance(rng, max_dim=64):
    """Random ``(A1, A2, lam, delta1, delta2, rho)`` with rho inside the
    ``delta2`` shell of ``A2`` around ``lam``."""
    n = int(rng.integers(2, max_dim + 1))
    A2 = random_hermitian(n, rng)
    w, v = np.linalg.eigh(A2)
    lam = float(w[rng.integers(n)] + rng.uniform(-0.05, 0.05))
    delta2 = float(abs(lam - w[np.argmin(np.abs(w - lam))]) + rng.uniform(0, 1.0))
    sel = v[:, np.abs(w - lam) <= delta2]
    k = sel.shape[1]
    g = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    if rng.random() < 0.5:
        g = g[:, :1]  # pure state
    inner = g @ g.conj().T
    rho = sel @ (inner / np.trace(inner).real) @ sel.conj().T
    # perturbation norm stays O(1) at every dimension
    A1 = A2 + random_hermitian(n, rng, scale=float(rng.uniform(0, 0.5)) / np.sqrt(n))
    delta1 = float(rng.uniform(0.05, 3.0))
    return A1, A2, lam, delta1, delta2, (rho + rho.conj().T) / 2


def exact_time_average(psi, sd, T):
    """``(1/T) int_0^T Tr_B |psi(t)><psi(t)| dt`` in closed form."""
    from ethlab.hilbert import partial_trace_bath

    a = sd.eigenvectors.conj().T @ psi
    w = sd.energies[:, None] - sd.energies[None, :]
    wt = w * T
    small = np.abs(wt) < 1e-12
    f = np.where(small, 1.0, (1 - np.exp(-1j * wt)) / np.where(small, 1.0, 1j * wt))
    rho = sd.eigenvectors @ (np.outer(a, a.conj()) * f) @ sd.eigenvectors.conj().T
    return partial_trace_bath(rho, sd.shape)
