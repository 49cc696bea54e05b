"""Dense linear algebra on a bipartite system (x) bath Hilbert space.

Global basis index is ``i = s * d_B + b``: the system index runs slowest, so
reshaping a global vector to ``(d_S, d_B)`` separates the two factors.

Density matrices and pure states are plain complex ``ndarray`` objects; the
``check_*`` helpers validate them against the tolerances in :data:`TOL`.
"""

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Operator or state dimensions do not match the declared space."""


class ContractError(ValueError):
    """Input violates a numerical contract (hermiticity, trace, positivity)."""


@dataclass(frozen=True)
class Tolerances:
    hermiticity: float = 1e-12
    trace: float = 1e-10
    positivity: float = -1e-10
    norm: float = 1e-12


TOL = Tolerances()


@dataclass(frozen=True)
class SpaceShape:
    d_S: int
    d_B: int

    def __post_init__(self):
        if int(self.d_S) < 2 or int(self.d_B) < 2:
            raise DimensionError(f"need d_S >= 2 and d_B >= 2, got {self.d_S}, {self.d_B}")

    @property
    def dim(self):
        return self.d_S * self.d_B


def _hermiticity_residual(x):
    scale = max(np.abs(x).max(initial=0.0), 1.0)
    return np.abs(x - x.conj().T).max(initial=0.0) / scale


def check_hermitian(x, tol=None):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {x.shape}")
    tol = TOL.hermiticity if tol is None else tol
    res = _hermiticity_residual(x)
    if res > tol:
        raise ContractError(f"matrix is not Hermitian (residual {res:.3e} > {tol:.1e})")
    return x


def check_density_matrix(rho, dim=None):
    """Validate ``rho`` as a density matrix and return it as a complex array."""
    rho = np.asarray(rho, dtype=complex)
    if dim is not None and rho.shape != (dim, dim):
        raise DimensionError(f"expected a {dim}x{dim} density matrix, got {rho.shape}")
    check_hermitian(rho)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TOL.trace:
        raise ContractError(f"trace is {tr!r}, not 1")
    lam_min = np.linalg.eigvalsh(rho)[0]
    if lam_min < TOL.positivity:
        raise ContractError(f"negative eigenvalue {lam_min:.3e}")
    return rho


def check_pure_state(psi, dim=None):
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise DimensionError(f"pure state must be a vector, got shape {psi.shape}")
    if dim is not None and psi.shape[0] != dim:
        raise DimensionError(f"expected dimension {dim}, got {psi.shape[0]}")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > TOL.norm * max(1.0, np.sqrt(psi.shape[0])):
        raise ContractError(f"state norm is {nrm!r}, not 1")
    return psi


def _split_dims(n, shape, d_S, d_B):
    if shape is not None:
        d_S, d_B = shape.d_S, shape.d_B
    if d_S is None and d_B is None:
        raise DimensionError("give a SpaceShape or one of d_S, d_B")
    if d_S is None:
        d_S = n // d_B
    if d_B is None:
        d_B = n // d_S
    if d_S * d_B != n:
        raise DimensionError(f"global dimension {n} != d_S*d_B = {d_S}*{d_B}")
    return d_S, d_B


def partial_trace_bath(rho, shape=None, d_S=None, d_B=None):
    """Trace out the bath factor of a global operator.

    ``sigma[s, s'] = sum_b rho[s*d_B + b, s'*d_B + b]``. Works on any square
    operator, not only states; a stack ``(..., d, d)`` is traced elementwise.
    """
    rho = np.asarray(rho)
    n = rho.shape[-1]
    if rho.ndim < 2 or rho.shape[-2] != n:
        raise DimensionError(f"expected square matrix, got {rho.shape}")
    d_S, d_B = _split_dims(n, shape, d_S, d_B)
    r = rho.reshape(rho.shape[:-2] + (d_S, d_B, d_S, d_B))
    return np.einsum("...ibjb->...ij", r)


def partial_trace_system(rho, shape=None, d_S=None, d_B=None):
    rho = np.asarray(rho)
    n = rho.shape[-1]
    d_S, d_B = _split_dims(n, shape, d_S, d_B)
    r = rho.reshape(rho.shape[:-2] + (d_S, d_B, d_S, d_B))
    return np.einsum("...sisj->...ij", r)


def reduce_pure(psi, d_S):
    """``Tr_B |psi><psi|`` for a global vector (or a stack of them, last axis)."""
    psi = np.asarray(psi)
    m = psi.reshape(psi.shape[:-1] + (d_S, -1))
    return np.einsum("...sb,...tb->...st", m, m.conj())


def tensor_product(a, b):
    """``(A (x) B)[s*d_B + b, s'*d_B + b'] = A[s, s'] * B[b, b']``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("tensor_product expects two matrices")
    return np.kron(a, b)


def embed_system(a, d_B):
    return np.kron(a, np.eye(d_B))


def embed_bath(b, d_S):
    return np.kron(np.eye(d_S), b)


def trace_norm(x, check=True):
    """Sum of absolute eigenvalues of a Hermitian matrix (no 1/2 factor).

    Accepts a stack ``(..., d, d)``; each slice must be Hermitian.
    """
    x = np.asarray(x)
    if check:
        if x.ndim == 2:
            check_hermitian(x)
        else:
            scale = np.maximum(np.abs(x).max(axis=(-2, -1)), 1.0)
            res = np.abs(x - np.swapaxes(x.conj(), -1, -2)).max(axis=(-2, -1)) / scale
            if np.any(res > TOL.hermiticity):
                raise ContractError(f"matrix is not Hermitian (residual {res.max():.3e})")
    return np.abs(np.linalg.eigvalsh(x)).sum(axis=-1)


def operator_norm(x, check=True):
    """Spectral norm ``max_k |lambda_k|`` of a Hermitian matrix."""
    x = np.asarray(x)
    if check:
        check_hermitian(x)
    lam = np.linalg.eigvalsh(x)
    return float(max(abs(lam[0]), abs(lam[-1])))


def trace_distance(rho, sigma):
    """``||rho - sigma||_1`` under the same convention as :func:`trace_norm`."""
    return float(trace_norm(np.asarray(rho) - np.asarray(sigma), check=False))


def random_density_matrix(dim, rng, rank=None):
    """Random mixed state from the induced (Ginibre) measure."""
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_pure_state(dim, rng):
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_hermitian(dim, rng, scale=1.0):
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * (g + g.conj().T) / 2
