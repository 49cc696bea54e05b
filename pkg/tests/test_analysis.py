import numpy as np
import pytest

from ethlab import analysis
from ethlab.analysis import (
    InsufficientDataError,
    SamplerConfig,
    ThermReport,
    bounds_grid,
    canonical_reduced,
    eigenstate_bound_check,
    eth_scan,
    lemma1_check,
    omega_builder,
    peaking_weight,
    prop1_check,
    random_peaked_states,
    theorem1_audit,
    therm_scan,
)
from ethlab.hilbert import random_hermitian, trace_norm
from ethlab.models import build_hamiltonian, custom_spec
from ethlab.reports import INCONCLUSIVE, SKIPPED
from ethlab.shells import make_shell
from ethlab.spectral import diagonalize, diagonalize_bath, reduced_from_amplitudes
from ethlab.thermo import thermo_profile

SMALL = SamplerConfig(n_random=40, n_entangled=40, n_refine=2, max_iter=20, seed=3)


def decoupled(rng, d_B=6, h_s=0.37):
    """H = H_S (x) 1 + 1 (x) H_B with generic, nondegenerate sums."""
    H_S = np.diag([0.0, h_s])
    H_B = np.diag(np.sort(rng.uniform(-1, 1, d_B)))
    h = build_hamiltonian(custom_spec(H_B, np.kron(H_S, np.eye(d_B)), 2))
    return h, diagonalize(h), diagonalize_bath(h)


# --- eth_scan ---

def test_decoupled_eigenstates_reduce_to_system_levels(rng):
    h, sd, _ = decoupled(rng)
    assert not sd.is_degenerate
    for n in range(sd.dim):
        t = sd.taus[n]
        assert np.allclose(t, np.diag(np.diag(t))) and np.isclose(np.trace(t @ t), 1)
    rep = eth_scan(sd, (sd.energies[0], sd.energies[-1]), 10.0)
    # every pair in range; pairs with different system level are orthogonal
    assert rep.eps_measured == pytest.approx(2.0)
    assert rep.pair_count == sd.dim * (sd.dim - 1) // 2


def test_scale_below_gap_gives_no_pairs(rng):
    _, sd, _ = decoupled(rng)
    gap = np.diff(sd.energies).min()
    rep = eth_scan(sd, (sd.energies[0], sd.energies[-1]), gap / 3)
    assert rep.eps_measured == 0.0 and rep.pair_count == 0 and rep.worst_pair is None


def test_worst_pair_recomputes(small_model):
    _, sd, _ = small_model
    rep = eth_scan(sd, (-3, 3), 0.3)
    n, m = rep.worst_pair
    assert abs(sd.energies[m] - sd.energies[n]) <= 0.6
    d = trace_norm(sd.taus[n] - sd.taus[m], check=False)
    assert abs(d - rep.eps_measured) <= 1e-12
    assert 0 <= rep.eps_measured <= 2
    assert sum(rep.histogram["counts"]) == rep.pair_count


def test_pairs_match_brute_force(small_model):
    _, sd, _ = small_model
    region, delta = (-2.0, 2.0), 0.25
    idx = np.flatnonzero((sd.energies >= region[0]) & (sd.energies <= region[1]))
    best = 0.0
    count = 0
    for a in idx:
        for b in idx:
            if a < b and abs(sd.energies[a] - sd.energies[b]) <= 2 * delta:
                count += 1
                best = max(best, trace_norm(sd.taus[a] - sd.taus[b], check=False))
    rep = eth_scan(sd, region, delta)
    assert rep.pair_count == count
    assert rep.eps_measured == pytest.approx(best, abs=1e-12)


def test_monotone_in_scale_and_region(small_model):
    _, sd, _ = small_model
    vals = [eth_scan(sd, (-3, 3), d).eps_measured for d in (0.05, 0.1, 0.2, 0.4, 0.8)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert eth_scan(sd, (-1, 1), 0.3).eps_measured <= eth_scan(sd, (-3, 3), 0.3).eps_measured


def test_insufficient_data(small_model):
    _, sd, _ = small_model
    with pytest.raises(InsufficientDataError):
        eth_scan(sd, (100, 101), 0.1)
    with pytest.raises(ValueError):
        eth_scan(sd, (-1, 1), 0.0)


# --- therm_scan ---

def test_decoupled_degenerate_shell_reaches_basis_maximum(rng):
    # H = 1 (x) H_B: Phi_S(rho_S (x) rho_B) = rho_S, so the sup against 1/2 is 1
    H_B = random_hermitian(8, rng)
    h = build_hamiltonian(custom_spec(H_B, np.zeros((16, 16)), 2))
    sd, bath = diagonalize(h), diagonalize_bath(h)
    shell = make_shell(bath.energies, 0.0, 100.0, "bath")
    rep = therm_scan(sd, bath, shell, np.eye(2) / 2, SMALL)
    assert rep.eps_product == pytest.approx(1.0, abs=1e-12)
    assert rep.eps_entangled >= rep.eps_product - 1e-10
    assert rep.eps_entangled <= 2 + 1e-12


def test_target_equal_to_sampled_state_scores_zero(small_model, rng):
    _, sd, bath = small_model
    shell = make_shell(bath.energies, 0.0, 1.0, "bath")
    prob = analysis._ShellProblem(sd, bath, shell, np.eye(2) / 2)
    psi = np.array([0.6, 0.8j])
    c = rng.standard_normal(shell.count) + 0j
    c /= np.linalg.norm(c)
    vec = np.kron(psi, c)
    omega = reduced_from_amplitudes(sd, vec @ prob.G)
    prob0 = analysis._ShellProblem(sd, bath, shell, omega)
    assert prob0.distances(vec)[0] == pytest.approx(0.0, abs=1e-13)


def test_distances_match_explicit_states(small_model, rng):
    from ethlab.spectral import equilibrium_state

    _, sd, bath = small_model
    shell = make_shell(bath.energies, -1.0, 1.0, "bath")
    omega = np.diag([0.3, 0.7])
    prob = analysis._ShellProblem(sd, bath, shell, omega)
    U = bath.eigenvectors[:, shell.indices]
    c = rng.standard_normal(shell.count) + 1j * rng.standard_normal(shell.count)
    c /= np.linalg.norm(c)
    psi = np.array([1.0, 1.0j]) / np.sqrt(2)
    glob = np.kron(psi, U @ c)
    want = trace_norm(equilibrium_state(glob, sd) - omega, check=False)
    assert prob.distances(np.kron(psi, c))[0] == pytest.approx(want, abs=1e-12)


def test_optimizer_beats_monte_carlo(rng):
    # 2 (x) 16 random model, full bath shell
    h = build_hamiltonian(custom_spec(random_hermitian(16, rng), random_hermitian(32, rng, 0.3), 2))
    sd, bath = diagonalize(h), diagonalize_bath(h)
    shell = make_shell(bath.energies, 0.0, 100.0, "bath")
    omega = np.diag([0.5, 0.5])
    rep = therm_scan(sd, bath, shell, omega, SamplerConfig(seed=11))
    prob = analysis._ShellProblem(sd, bath, shell, omega)
    mc_rng = np.random.default_rng(12)
    best = 0.0
    for _ in range(10):
        p = analysis._haar(mc_rng, 10_000, 2)
        c = analysis._haar(mc_rng, 10_000, shell.count)
        v = np.einsum("rs,rk->rsk", p, c).reshape(10_000, -1)
        best = max(best, prob.distances(v).max())
    assert rep.eps_product >= best - 1e-12


def test_therm_scan_is_seeded(small_model):
    _, sd, bath = small_model
    shell = make_shell(bath.energies, 0.0, 1.0, "bath")
    a = therm_scan(sd, bath, shell, np.eye(2) / 2, SMALL)
    b = therm_scan(sd, bath, shell, np.eye(2) / 2, SMALL)
    assert a.eps_product == b.eps_product and a.eps_entangled == b.eps_entangled
    assert a.summary()["lower_bound"] is True


def test_therm_scan_needs_nonempty_bath_shell(small_model):
    from ethlab.shells import EmptyShellError

    _, sd, bath = small_model
    with pytest.raises(EmptyShellError):
        therm_scan(sd, bath, make_shell(bath.energies, 1e3, 0.1, "bath"), np.eye(2) / 2)
    with pytest.raises(ValueError):
        therm_scan(sd, bath, make_shell(sd.energies, 0.0, 1.0), np.eye(2) / 2)


# --- lemma 1 ---

def fake_report(eps_p, eps_e):
    shell = make_shell(np.zeros(1), 0.0, 1.0, "bath")
    return ThermReport(shell, np.eye(2) / 2, eps_p, eps_e, {}, {})


def test_lemma1_check_statuses():
    assert lemma1_check(fake_report(0.3, 0.3), 2).holds
    r = lemma1_check(fake_report(0.01, 0.5), 2)
    assert not r.holds and r.status == INCONCLUSIVE and not r.conclusive_violation
    assert r.rhs == pytest.approx(0.08)


@pytest.mark.slow
def test_lemma1_holds_on_fifty_cells():
    from ethlab.models import default_spec

    h = build_hamiltonian(default_spec(1, 8))
    sd, bath = diagonalize(h), diagonalize_bath(h)
    prof = thermo_profile(bath.energies)
    lo, hi = prof.valid_range
    mid, span = (lo + hi) / 2, (hi - lo) / 4
    E = np.linspace(mid - span, mid + span, 10)
    dB = np.linspace(0.5, 2.5, 5)
    budget = SamplerConfig(n_random=60, n_entangled=60, n_refine=2, max_iter=30, seed=5)
    cells = bounds_grid(sd, h, bath, prof, E, dB, budget, escalate=10)
    assert len(cells) == 50
    assert all(c.lemma1.holds for c in cells)


# --- proposition 1 ---

def test_prop1_microcanonical_state_and_eigenstates(small_model):
    _, sd, _ = small_model
    shell = make_shell(sd.energies, 0.0, 0.6)
    eps = eth_scan(sd, (-0.6, 0.6), 0.6).eps_measured
    P = sd.eigenvectors[:, shell.indices]
    rho_mc = P @ P.conj().T / shell.count
    states = [rho_mc] + [sd.eigenvectors[:, n] for n in shell.indices]
    reps = prop1_check(sd, shell, eps, states)
    assert reps[0].lhs == pytest.approx(0.0, abs=1e-12)
    assert all(r.holds and r.status != SKIPPED for r in reps)
    assert max(r.lhs for r in reps[1:]) <= eps + 1e-12


def test_prop1_gate_skips_unpeaked_states(small_model, rng):
    _, sd, _ = small_model
    shell = make_shell(sd.energies, 0.0, 0.6)
    states = random_peaked_states(sd, shell, 0.2, 30, rng)
    reps = prop1_check(sd, shell, 0.2, states)
    for s, r in zip(states, reps):
        w = peaking_weight(s, sd, shell)
        assert (r.status == SKIPPED) == (w > 0.2)
    assert any(r.status == SKIPPED for r in reps)
    assert any(r.status != SKIPPED for r in reps)


def test_peaking_weight_vector_and_matrix(small_model, rng):
    _, sd, _ = small_model
    shell = make_shell(sd.energies, 0.0, 0.6)
    v = random_peaked_states(sd, shell, 0.3, 1, rng)[0]
    assert peaking_weight(v, sd, shell) == pytest.approx(
        peaking_weight(np.outer(v, v.conj()), sd, shell), abs=1e-12)


# --- eigenstate bounds ---

def test_eigenstate_bound_decoupled_zero_lhs(rng):
    h, sd, bath = decoupled(rng)
    n = 3
    shell = make_shell(bath.energies, sd.energies[n], 10.0, "bath")
    reps = eigenstate_bound_check(sd, h, bath, shell, sd.taus[n], 0.0)
    mine = [r for r in reps if r.inputs["n"] == n]
    assert len(mine) == 4
    assert all(r.lhs == pytest.approx(0.0, abs=1e-12) for r in mine if r.name != "eq8_chain")
    # all eigenstates lie inside the full shell: no leakage
    assert all(r.inputs["leakage"] == pytest.approx(0.0, abs=1e-12) for r in reps)


def test_eigenstate_bound_rows(small_model):
    h, sd, bath = small_model
    shell = make_shell(bath.energies, -0.5, 2.0, "bath")
    omega = omega_builder(sd, h, None, -0.5, delta=2.0)
    reps = eigenstate_bound_check(sd, h, bath, shell, omega, 0.1)
    window = np.flatnonzero(np.abs(sd.energies + 0.5) <= 1.0)
    assert len(reps) == 4 * len(window)
    for r in reps:
        if r.name == "eq8":
            assert r.rhs == pytest.approx(8 * h.norm_HC ** 2 / 4.0 + 8 * 0.1)
        if r.name in ("eq7_exact", "eq8_chain"):
            assert r.holds


def test_empty_window(small_model):
    h, sd, bath = small_model
    shell = make_shell(bath.energies, 0.0, 1.0, "bath")
    far = make_shell(bath.energies, 0.0, 1.0, "bath")
    object.__setattr__(far, "E", 1e3)
    assert eigenstate_bound_check(sd, h, bath, far, np.eye(2) / 2, 0.1) == []
    assert eigenstate_bound_check(sd, h, bath, shell, np.eye(2) / 2, 0.1)


# --- omega ---

def test_canonical_infinite_temperature(small_model):
    _, sd, _ = small_model
    assert np.allclose(canonical_reduced(sd, 0.0), np.eye(2) / 2)


def test_canonical_factorizes_when_decoupled(rng):
    h, sd, _ = decoupled(rng, h_s=0.8)
    beta = 1.3
    w = np.exp(-beta * np.array([0.0, 0.8]))
    assert np.allclose(canonical_reduced(sd, beta), np.diag(w / w.sum()))


def test_omega_variants(mid_model):
    h, sd, bath = mid_model
    prof = thermo_profile(bath.energies)
    E = float(np.mean(prof.valid_range))
    mc = omega_builder(sd, h, prof, E, "microcanonical_reduced", delta=1.0)
    can = omega_builder(sd, h, prof, E, "canonical_reduced")
    for w in (mc, can):
        assert np.trace(w).real == pytest.approx(1.0)
        assert np.linalg.eigvalsh(w).min() > -1e-12
    with pytest.raises(ValueError):
        omega_builder(sd, h, prof, E, "grand_canonical")


# --- grids and audit ---

def test_grid_independent_of_worker_count(small_model, monkeypatch):
    h, sd, bath = small_model
    prof = None
    E, dB = [-1.0, 0.0], [1.0, 2.0]
    monkeypatch.setenv("ETHLAB_THREADS", "1")
    a = bounds_grid(sd, h, bath, prof, E, dB, SMALL)
    monkeypatch.setenv("ETHLAB_THREADS", "3")
    b = bounds_grid(sd, h, bath, prof, E, dB, SMALL)
    for x, y in zip(a, b):
        assert x.therm.eps_product == y.therm.eps_product
        assert [r.lhs for r in x.bounds] == [r.lhs for r in y.bounds]


def test_theorem1_audit_small(mid_model):
    h, sd, bath = mid_model
    prof = thermo_profile(bath.energies)
    lo, hi = prof.valid_range
    region = (lo + (hi - lo) / 3, hi - (hi - lo) / 3)
    res = theorem1_audit(sd, h, bath, prof, region, 3, 2, SMALL)
    v = res["verdict"]
    assert {"bath_ideal", "eth_pred", "eth_measured"} <= set(v)
    assert v["triangle_holds"] and v["implication_holds"]
    assert v["delta_B"] == pytest.approx(2 * v["delta"])
    assert len(res["cells"]) == 6
