import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethlab.hilbert import (
    ContractError,
    DimensionError,
    SpaceShape,
    check_density_matrix,
    check_hermitian,
    embed_bath,
    embed_system,
    operator_norm,
    partial_trace_bath,
    partial_trace_system,
    random_density_matrix,
    random_hermitian,
    random_pure_state,
    reduce_pure,
    tensor_product,
    trace_distance,
    trace_norm,
)


def loop_partial_trace(rho, d_S, d_B):
    out = np.zeros((d_S, d_S), dtype=complex)
    for i in range(d_S):
        for j in range(d_S):
            for b in range(d_B):
                out[i, j] += rho[i * d_B + b, j * d_B + b]
    return out


def test_partial_trace_matches_index_loop(rng):
    for d_S, d_B in [(2, 2), (2, 8), (3, 5), (4, 4)]:
        rho = random_density_matrix(d_S * d_B, rng)
        got = partial_trace_bath(rho, d_S=d_S, d_B=d_B)
        assert np.abs(got - loop_partial_trace(rho, d_S, d_B)).max() < 1e-13


def test_partial_trace_of_product():
    a = np.diag([0.25, 0.75])
    b = np.diag([0.5, 0.3, 0.2])
    rho = tensor_product(a, b)
    assert np.allclose(partial_trace_bath(rho, SpaceShape(2, 3)), a)
    assert np.allclose(partial_trace_system(rho, SpaceShape(2, 3)), b)


def test_bell_state_reduces_to_maximally_mixed():
    psi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    assert np.allclose(partial_trace_bath(np.outer(psi, psi), d_S=2, d_B=2), np.eye(2) / 2)
    assert np.allclose(reduce_pure(psi, 2), np.eye(2) / 2)


def test_partial_trace_batched(rng):
    stack = np.stack([random_density_matrix(8, rng) for _ in range(3)])
    got = partial_trace_bath(stack, d_S=2, d_B=4)
    for k in range(3):
        assert np.allclose(got[k], loop_partial_trace(stack[k], 2, 4))


def test_partial_trace_rejects_bad_dimension():
    with pytest.raises(DimensionError):
        partial_trace_bath(np.eye(6) / 6, d_S=4, d_B=2)


def test_space_shape_needs_two_levels():
    with pytest.raises(DimensionError):
        SpaceShape(1, 4)


def test_trace_norm_examples():
    # orthogonal pure states are at distance 2 without the 1/2 factor
    assert trace_norm(np.diag([1.0, -1.0])) == pytest.approx(2.0)
    rho = random_density_matrix(6, np.random.default_rng(1))
    assert trace_norm(rho) == pytest.approx(1.0, abs=1e-12)
    assert trace_distance(rho, rho) == pytest.approx(0.0, abs=1e-12)


def test_trace_norm_rejects_non_hermitian():
    with pytest.raises(ContractError):
        trace_norm(np.array([[0, 1], [0, 0]], dtype=complex))


def test_operator_norm_examples():
    assert operator_norm(np.diag([0.5, -3.0, 2.0])) == pytest.approx(3.0)
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    assert operator_norm(np.kron(x, x)) == pytest.approx(1.0)


def test_tensor_product_index_convention():
    a = np.arange(4).reshape(2, 2)
    b = np.arange(9).reshape(3, 3)
    ab = tensor_product(a, b)
    for s, t, c, d in np.ndindex(2, 2, 3, 3):
        assert ab[s * 3 + c, t * 3 + d] == a[s, t] * b[c, d]


def test_embeddings_commute(rng):
    a = random_hermitian(2, rng)
    b = random_hermitian(5, rng)
    A, B = embed_system(a, 5), embed_bath(b, 2)
    assert np.allclose(A @ B, B @ A)
    assert np.allclose(A @ B, tensor_product(a, b))


def test_density_matrix_validation():
    with pytest.raises(ContractError):
        check_density_matrix(np.diag([1.2, -0.2]))
    with pytest.raises(ContractError):
        check_density_matrix(np.eye(2))
    with pytest.raises(DimensionError):
        check_density_matrix(np.eye(2) / 2, dim=4)
    with pytest.raises(ContractError):
        check_hermitian(np.array([[1, 1j], [1j, 1]]))


dims = st.sampled_from([(2, 2), (2, 3), (3, 4), (2, 8), (4, 8)])
seeds = st.integers(0, 2 ** 32 - 1)


@settings(max_examples=60, deadline=None)
@given(dims, seeds)
def test_partial_trace_preserves_positivity_and_trace(d, seed):
    rng = np.random.default_rng(seed)
    rho = random_density_matrix(d[0] * d[1], rng)
    red = partial_trace_bath(rho, d_S=d[0], d_B=d[1])
    check_density_matrix(red, d[0])


@settings(max_examples=60, deadline=None)
@given(dims, seeds)
def test_trace_distance_contracts_under_partial_trace(d, seed):
    rng = np.random.default_rng(seed)
    r1 = random_density_matrix(d[0] * d[1], rng)
    r2 = random_density_matrix(d[0] * d[1], rng)
    full = trace_distance(r1, r2)
    red = trace_distance(partial_trace_bath(r1, d_S=d[0], d_B=d[1]),
                         partial_trace_bath(r2, d_S=d[0], d_B=d[1]))
    assert red <= full + 1e-12
    assert 0 <= full <= 2 + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 16), seeds)
def test_norm_inequalities(dim, seed):
    rng = np.random.default_rng(seed)
    x, y = random_hermitian(dim, rng), random_hermitian(dim, rng)
    assert trace_norm(x + y) <= trace_norm(x) + trace_norm(y) + 1e-12
    assert operator_norm(x) <= trace_norm(x) + 1e-12
    assert trace_norm(x) <= dim * operator_norm(x) + 1e-12
    # multiplicativity on tensor products
    assert trace_norm(np.kron(x, y)) == pytest.approx(trace_norm(x) * trace_norm(y))


def test_random_pure_state_normalized(rng):
    psi = random_pure_state(10, rng)
    assert np.linalg.norm(psi) == pytest.approx(1.0)
