import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy import linalg, stats

from nelsonsim import oracles
from nelsonsim.pphi1 import (
    JumpTable, PPhiPath, RateOverflowError, StationaryLaw, TestReport, block_generators, chi2_against_law,
    ctmc_sample, cycle_generator, ensemble_to_csv, expected_jump_rate, finite_dim_check,
    fourth_moment_displacement, jump_size_histogram, jump_sizes, reversibility_check, semigroup_product,
    simulate_ensemble, stationary_ensemble, stationary_start, two_sided_ensemble, two_sided_pphi1,
)

TWO_STATE = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))


def small_reversible_chain():
    # birth-death chain on 4 states, reversible w.r.t. pi
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    L = np.zeros((4, 4))
    for a in range(3):
        L[a, a + 1] = -1.0
        L[a + 1, a] = -pi[a] / pi[a + 1]
    L[np.diag_indices(4)] = -L.sum(axis=1)
    return sp.csr_matrix(L), StationaryLaw(pi)


# --- stationary law and starts -----------------------------------------------------

def test_law_validation():
    with pytest.raises(ValueError):
        StationaryLaw(np.array([0.5, -0.1]))
    with pytest.raises(ValueError):
        StationaryLaw(np.zeros(3))
    assert StationaryLaw(np.array([2.0, 2.0])).weights.tolist() == [0.5, 0.5]


def test_uniform_two_state_draws(rng):
    s = stationary_start(StationaryLaw(np.ones(2)), rng, size=40_000)
    assert abs(s.mean() - 0.5) < 3 * 0.5 / math.sqrt(s.size)
    assert isinstance(stationary_start(StationaryLaw(np.ones(2)), rng), int)


def test_oscillator_start_histogram(oscillator, rng):
    x = oscillator.model.grid.x
    w = np.exp(-x ** 2)
    s = stationary_start(oscillator.law, rng, size=20_000)
    assert chi2_against_law(s, w / w.sum()) > 0.01


def test_start_mean_matches_quadrature(classical, rng):
    s = stationary_start(classical.law, rng, size=50_000)
    x = classical.x[s]
    exact = float(np.sum(classical.gs.vector ** 2 * classical.x))
    assert abs(x.mean() - exact) < 3 * x.std(ddof=1) / math.sqrt(x.size)


# --- jump tables and single paths --------------------------------------------------

def test_jump_table_guards():
    with pytest.raises(RateOverflowError):
        JumpTable.from_generator(TWO_STATE * 10, max_rate=5.0)
    with pytest.raises(ValueError):
        JumpTable.from_generator(sp.csr_matrix(np.array([[-1.0, 1.0], [1.0, -1.0]])))


def test_jump_table_neighbour_probabilities(rng):
    L, _ = small_reversible_chain()
    tab = JumpTable.from_generator(L)
    nxt = tab.jump(np.full(60_000, 1), rng)
    # from state 1: rates 0.5 (to 0) and 1 (to 2)
    assert set(np.unique(nxt)) == {0, 2}
    p0 = np.mean(nxt == 0)
    assert abs(p0 - 1 / 3) < 3 * math.sqrt(2 / 9 / nxt.size)


def test_two_state_occupation(rng):
    fracs = []
    for _ in range(2000):
        p = ctmc_sample(TWO_STATE, stationary_start(StationaryLaw(np.ones(2)), rng), 10.0, rng)
        fracs.append(p.integral(np.array([1.0, 0.0]), 10.0) / 10.0)
    fracs = np.array(fracs)
    assert abs(fracs.mean() - 0.5) < 3 * fracs.std(ddof=1) / math.sqrt(fracs.size)


def test_mean_jump_count(classical):
    T = 2.0
    ens = stationary_ensemble(classical.table, classical.law, [T], 5000, master_seed=3)
    rate = expected_jump_rate(classical.L, classical.law)
    n = ens.n_jumps
    assert abs(n.mean() - T * rate) < 3 * n.std(ddof=1) / math.sqrt(n.size)


def test_transition_frequencies_match_matrix_exponential(rng):
    L, law = small_reversible_chain()
    t = 0.7
    ens = simulate_ensemble(JumpTable.from_generator(L), np.zeros(20_000, dtype=int), [t], rng)
    row = linalg.expm(-t * L.toarray())[0]
    assert chi2_against_law(ens.states[0], row) > 0.01


def test_single_path_matches_ensemble_law(rng):
    L, law = small_reversible_chain()
    ends = [ctmc_sample(L, 3, 0.5, rng).state_at(0.5) for _ in range(5000)]
    row = linalg.expm(-0.5 * L.toarray())[3]
    assert chi2_against_law(np.array(ends), row) > 0.01


def test_path_structure_and_exact_integral():
    p = PPhiPath(np.array([0.5, 1.5]), np.array([0, 1, 0]), 3.0)
    assert p.start == 0 and p.n_jumps == 2
    assert p.state_at([0.0, 0.5, 1.0, 2.9]).tolist() == [0, 1, 1, 0]
    assert p.integral(np.array([2.0, 10.0]), 3.0) == pytest.approx(2 * 0.5 + 10 * 1.0 + 2 * 1.5)
    assert p.integral(np.array([2.0, 10.0]), 1.0) == pytest.approx(1.0 + 5.0)
    with pytest.raises(ValueError):
        PPhiPath(np.array([1.0, 0.5]), np.array([0, 1, 0]), 3.0)
    with pytest.raises(ValueError):
        PPhiPath(np.array([1.0]), np.array([0]), 3.0)


def test_path_csv(tmp_path, classical, rng):
    p = ctmc_sample(classical.table, 100, 0.05, rng)
    p.to_csv(tmp_path / "p.csv", classical.model.coords())
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "jump_time,state_index,x,q_1"
    assert len(lines) == p.n_jumps + 2


def test_ensemble_integrals_match_single_paths(rng):
    L, law = small_reversible_chain()
    tab = JumpTable.from_generator(L)
    g = np.array([1.0, -2.0, 0.5, 3.0])
    ens = simulate_ensemble(tab, np.zeros(20_000, dtype=int), [0.3, 1.0], rng, integrands=g)
    singles = np.array([ctmc_sample(tab, 0, 1.0, rng).integral(g, 1.0) for _ in range(20_000)])
    a = ens.integrals[0, 1]
    assert abs(a.mean() - singles.mean()) < 3 * math.hypot(a.std() / math.sqrt(a.size),
                                                           singles.std() / math.sqrt(singles.size))


def test_ensemble_rejects_unsorted_checkpoints(rng):
    L, _ = small_reversible_chain()
    with pytest.raises(ValueError):
        simulate_ensemble(JumpTable.from_generator(L), np.zeros(3, dtype=int), [1.0, 0.5], rng)


# --- reproducibility ------------------------------------------------------------------

def test_ensemble_independent_of_worker_count(classical):
    kw = dict(checkpoints=[0.5, 1.0], n_paths=6000, master_seed=11, stream=4, integrands=classical.x)
    a = stationary_ensemble(classical.table, classical.law, workers=1, **kw)
    b = stationary_ensemble(classical.table, classical.law, workers=3, **kw)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.integrals, b.integrals)


def test_block_generators_are_distinct():
    g = block_generators(1, 2, 3)
    draws = [r.random() for r in g]
    assert len(set(draws)) == 3
    assert block_generators(1, 2, 3)[1].random() == draws[1]


# --- finite-dimensional distributions ---------------------------------------------------

def test_one_time_expectation_is_stationary(classical):
    rep = finite_dim_check(classical.L, classical.law, [0.0], [classical.x ** 2], 10_000, 5, table=classical.table)
    assert rep.details["exact"] == pytest.approx(classical.law.expectation(classical.x ** 2))
    assert rep.verdict


def test_three_time_products(classical):
    f = [classical.x ** 2, classical.x, classical.xi * classical.x]
    rep = finite_dim_check(classical.L, classical.law, [0.0, 0.3, 0.8], f, 10_000, 6, table=classical.table)
    assert rep.verdict, rep.details


def test_shift_invariance(classical):
    f = [classical.x ** 2, classical.x, classical.x]
    a = finite_dim_check(classical.L, classical.law, [0.0, 0.3, 0.8], f, 10_000, 7, table=classical.table)
    b = finite_dim_check(classical.L, classical.law, [2.0, 2.3, 2.8], f, 10_000, 8, table=classical.table)
    assert a.details["exact"] == pytest.approx(b.details["exact"], rel=1e-8)
    se = abs(a.details["mc"] - a.details["exact"]) / max(abs(a.z_or_p), 1e-12)
    se_b = abs(b.details["mc"] - b.details["exact"]) / max(abs(b.z_or_p), 1e-12)
    assert abs(a.details["mc"] - b.details["mc"]) < 3 * math.hypot(se, se_b)


def test_oscillator_autocovariance(oscillator):
    x = oscillator.x
    for t in (0.5, 1.0):
        exact = semigroup_product(oscillator.L, oscillator.law, [0.0, t], [x, x])
        assert exact == pytest.approx(oracles.oscillator_position_autocovariance(t), rel=5e-3)
        rep = finite_dim_check(oscillator.L, oscillator.law, [0.0, t], [x, x], 10_000, 9, table=oscillator.table)
        assert rep.verdict


# --- two-sided paths ------------------------------------------------------------------------

def test_two_sided_marginals_and_conditional_independence(oscillator):
    x = oscillator.x
    edges = np.array([-np.inf, -0.6, -0.2, 0.2, 0.6, np.inf])
    fwd, bwd = two_sided_ensemble(oscillator.table, oscillator.law, [0.5], 8000, master_seed=13)
    assert np.array_equal(fwd.starts, bwd.starts)
    assert chi2_against_law(fwd.starts, oscillator.law.weights) > 0.01
    bins = lambda e: np.digitize(x[e.states[0]], edges[1:-1])
    table = np.array([np.bincount(bins(fwd), minlength=5), np.bincount(bins(bwd), minlength=5)])
    assert stats.chi2_contingency(table).pvalue > 0.01
    # from a fixed start the two halves are independent
    start = int(np.argmin(np.abs(x - 0.3)))
    fwd, bwd = two_sided_ensemble(oscillator.table, oscillator.law, [0.5], 8000, master_seed=14, start=start)
    joint = np.zeros((5, 5))
    np.add.at(joint, (bins(fwd), bins(bwd)), 1)
    joint = joint[joint.sum(1) > 0][:, joint.sum(0) > 0]
    assert stats.chi2_contingency(joint).pvalue > 0.01


def test_two_sided_single_paths(oscillator, rng):
    f, b = two_sided_pphi1(oscillator.L, oscillator.law, 1.0, rng)
    assert f.start == b.start
    f, b = two_sided_pphi1(oscillator.table, oscillator.law, 1.0, rng, start=5)
    assert f.start == 5 == b.start


# --- reversibility ---------------------------------------------------------------------------

def test_reversibility_symmetric_case_is_structurally_zero(oscillator):
    rep = reversibility_check(oscillator.L, oscillator.law, 0.5, oscillator.x, oscillator.x, 2000, 1)
    assert rep.z_or_p == 0.0 and rep.verdict


def test_reversibility_oscillator(oscillator):
    x = oscillator.x
    rep = reversibility_check(oscillator.L, oscillator.law, 0.5, x, x ** 2, 10_000, 15, table=oscillator.table)
    assert rep.verdict


def test_reversibility_negative_control():
    L = cycle_generator()
    e = np.eye(3)
    rep = reversibility_check(L, StationaryLaw(np.ones(3)), 0.3, e[0], e[1], 10_000, 16)
    assert not rep.verdict and abs(rep.z_or_p) > 5


def test_report_json():
    rep = TestReport("z", 1.5, 100, True, {"a": np.float64(1.0)})
    assert json.loads(rep.to_json())["verdict"] is True


# --- long-run and path diagnostics ---------------------------------------------------------

def test_stationarity_from_point_mass(classical):
    start = int(np.argmax(classical.law.weights))
    ens = stationary_ensemble(classical.table, classical.law, [200.0], 2000, master_seed=17, starts=start)
    assert chi2_against_law(ens.states[0], classical.law.weights) > 0.01


def test_chi2_pooling_and_detection(rng):
    probs = np.array([0.5, 0.3, 0.2, 1e-6])
    good = rng.choice(4, size=5000, p=probs / probs.sum())
    assert chi2_against_law(good, probs) > 0.01
    bad = rng.choice(4, size=5000, p=[0.3, 0.3, 0.4, 0.0])
    assert chi2_against_law(bad, probs) < 1e-6
    assert chi2_against_law(np.zeros(3, dtype=int), np.array([1.0, 0.0])) == 1.0


def test_fourth_moment_diffusive_scaling(classical):
    ens = stationary_ensemble(classical.table, classical.law, [0.0, 0.1, 0.2, 0.5, 1.0], 10_000, 18)
    out = fourth_moment_displacement(ens, classical.model.coords())
    ratio = np.array(out["moments"]) / np.array(out["lags"]) ** 2
    assert np.all(ratio <= out["D"] + 1e-12)
    assert ratio[0] / ratio[1] < 1.5  # moments scale like lag^2 for small lags
    with pytest.raises(ValueError):
        fourth_moment_displacement(stationary_ensemble(classical.table, classical.law, [0.1], 10, 1),
                                   classical.model.coords())


def test_jump_sizes_classical_vs_relativistic(classical, relativistic, rng):
    dx = classical.model.grid.dx
    p = ctmc_sample(classical.table, stationary_start(classical.law, rng), 1.0, rng)
    assert np.all(np.isclose(jump_sizes(p, classical.x), 0) | np.isclose(jump_sizes(p, classical.x), dx))
    bins = np.array([0.5, 1.5, 5.5, 100]) * dx
    hc, _ = jump_size_histogram(classical.L, classical.law, classical.x, bins)
    hr, _ = jump_size_histogram(relativistic.L, relativistic.law, relativistic.x, bins)
    assert hc[1:].sum() < 1e-9 * hc.sum()
    assert hr[2] > 0.01 * hr.sum()


def test_ensemble_csv(tmp_path, oscillator):
    ens = stationary_ensemble(oscillator.table, oscillator.law, [0.0, 1.0], 3, 1)
    ensemble_to_csv(ens, tmp_path / "e.csv", oscillator.model.coords())
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "checkpoint,path,state_index,x" and len(lines) == 7
