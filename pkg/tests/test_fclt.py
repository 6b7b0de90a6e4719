import math

import numpy as np
import pytest
import scipy.sparse as sp

from nelsonsim import oracles
from nelsonsim.fclt import (
    TraceEnsemble, VarianceEstimate, build_traces, default_probes, fclt_test, kv_residual, martingale_test,
    martingale_trace, spectral_gap, stationary_increment_test, traces_from_ensemble, variance_estimate,
    variance_rows_dict, variance_table_csv,
)
from nelsonsim.field_modes import sqrt_omega_norm2
from nelsonsim.operators import dirichlet_form, stationary_weights
from nelsonsim.pphi1 import StationaryLaw, ctmc_sample, stationary_ensemble, stationary_start

TWO_STATE = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))


def dirichlet(chain, f):
    return dirichlet_form(chain.L, stationary_weights(chain.gs), f)


@pytest.fixture(scope="module")
def osc_traces(oscillator):
    ck = [0.5, 1.0, 1.5, 2.0, 2.5, 5.0, 10.0]
    return build_traces(oscillator.table, oscillator.law, oscillator.L, {"x": oscillator.x,
                        "one": np.ones_like(oscillator.x), "bounded": np.tanh(oscillator.x)}, ck, 10_000, 21)


# --- traces ----------------------------------------------------------------------------

def test_constant_function_gives_zero_martingale(oscillator, rng):
    p = ctmc_sample(oscillator.table, 40, 2.0, rng)
    tr = martingale_trace(p, np.ones(oscillator.law.n_states), oscillator.L, [0.5, 2.0])
    assert np.allclose(tr.M_values, 0, atol=1e-9) and np.allclose(tr.L_values, 0, atol=1e-9)


def test_two_state_indicator_martingale(rng):
    f = np.array([1.0, 0.0])
    Ms = []
    for _ in range(4000):
        p = ctmc_sample(TWO_STATE, stationary_start(StationaryLaw(np.ones(2)), rng), 3.0, rng)
        tr = martingale_trace(p, f, TWO_STATE, [3.0])
        # compensated jumps: (# entries to 0) - (# exits from 0) + int (1{X=0} - 1{X=1}) ds
        jumps = np.diff(np.concatenate([[p.start], p.states[1:]]))
        assert tr.M_values[0] == pytest.approx(-np.sum(jumps) + p.integral(np.array([1.0, -1.0]), 3.0))
        Ms.append(tr.M_values[0])
    Ms = np.array(Ms)
    assert abs(Ms.mean()) < 3 * Ms.std(ddof=1) / math.sqrt(Ms.size)


def test_checkpoints_outside_path_rejected(oscillator, rng):
    p = ctmc_sample(oscillator.table, 40, 1.0, rng)
    with pytest.raises(ValueError):
        martingale_trace(p, oscillator.x, oscillator.L, [2.0])


def test_compensator_exact_under_refinement(oscillator, rng):
    p = ctmc_sample(oscillator.table, 40, 1.0, rng)
    g = np.asarray(oscillator.L @ oscillator.x)
    for n in (10, 1000):
        grid = np.union1d(np.linspace(0, 1.0, n + 1), p.jump_times)
        riemann = np.sum(g[p.state_at(grid[:-1])] * np.diff(grid))
        assert riemann == pytest.approx(p.integral(g, 1.0), abs=1e-12)


def test_single_path_traces_match_ensemble(oscillator, rng):
    x = oscillator.x
    ends = [martingale_trace(ctmc_sample(oscillator.table, stationary_start(oscillator.law, rng), 3.0, rng),
                             x, oscillator.L, [3.0]).M_values[0] for _ in range(1500)]
    ends = np.array(ends)
    assert abs(ends.mean()) < 3 * ends.std(ddof=1) / math.sqrt(ends.size)


def test_trace_accessors(osc_traces):
    tr = osc_traces["x"]
    assert tr.index_of(1.0) == 1
    with pytest.raises(ValueError):
        tr.index_of(0.7)
    one = tr.trace(3)
    assert np.array_equal(one.M_values, tr.M[:, 3])


# --- martingale tests ------------------------------------------------------------------------

def test_mean_zero_at_T10(osc_traces):
    M = osc_traces["x"].M[-1]
    assert abs(M.mean()) < 3 * M.std(ddof=1) / math.sqrt(M.size)


def test_martingale_probes_pass(oscillator, osc_traces):
    probes = default_probes(oscillator.x, None, oscillator.law)
    for s, t in [(0.5, 1.0), (1.0, 2.5)]:
        assert martingale_test(osc_traces["x"], s, t, probes).verdict


def test_uncompensated_negative_control_fails(oscillator):
    probes = default_probes(oscillator.x, None, oscillator.law)
    tr = build_traces(oscillator.table, oscillator.law, oscillator.L, {"x": oscillator.x}, [0.5, 1.0],
                      10_000, 22, compensate=False)["x"]
    rep = martingale_test(tr, 0.5, 1.0, probes)
    assert not rep.verdict and rep.z_or_p > 10


def test_martingale_test_needs_many_traces(oscillator):
    tr = build_traces(oscillator.table, oscillator.law, oscillator.L, {"x": oscillator.x}, [0.5, 1.0], 500, 23)["x"]
    with pytest.raises(ValueError):
        martingale_test(tr, 0.5, 1.0, {})


def test_stationary_increments(osc_traces):
    assert stationary_increment_test(osc_traces["x"], [0.5, 1.0, 1.5], 1.0).verdict


def test_default_probes(classical):
    pr = default_probes(classical.x, classical.xi, classical.law)
    assert set(pr) == {"one", "x", "x2", "sign", "xi_h"}
    assert abs(classical.law.expectation(pr["sign"])) < 0.1


# --- variance -----------------------------------------------------------------------------

def test_oscillator_variance_is_one(oscillator, osc_traces):
    est = variance_estimate(osc_traces["x"], 10.0, dirichlet(oscillator, oscillator.x), closed_form=1.0)
    assert abs(est.sigma2_hat - 1.0) < 3 * est.std_error
    assert abs(est.z_dirichlet()) < 3
    assert est.rel_gap() < 2e-2


def test_constant_function_variance_is_zero(osc_traces):
    est = variance_estimate(osc_traces["one"], 10.0, 0.0)
    # row sums of the generator vanish up to roundoff
    assert est.sigma2_hat < 1e-20


def test_field_variance_one_mode(classical):
    tr = build_traces(classical.table, classical.law, classical.L, {"xi": classical.xi}, [5.0], 10_000, 24)["xi"]
    closed = sqrt_omega_norm2(1.0, classical.model.ms)
    est = variance_estimate(tr, 5.0, dirichlet(classical, classical.xi), closed_form=closed)
    assert abs(est.sigma2_hat - closed) < 3 * est.std_error
    assert est.rel_gap() < 2e-2
    assert est.sigma2_hat > 0


def test_short_horizon_warns(oscillator, osc_traces):
    gap = spectral_gap(oscillator.model.H, oscillator.gs)
    assert gap == pytest.approx(1.0, abs=1e-2)
    with pytest.warns(UserWarning):
        est = variance_estimate(osc_traces["x"], 1.0, 1.0, gap=gap)
    assert est.warnings


def test_spectral_gap_large_operator(classical):
    assert 0 < spectral_gap(classical.model.H, classical.gs) < 1.5


def test_variance_table_csv(tmp_path):
    rows = [VarianceEstimate(1.0, 0.01, 10.0, 0.99, 1.0, "C1"), VarianceEstimate(2.0, 0.02, 10.0, 2.0, None, "x")]
    variance_table_csv(rows, tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "f_id,sigma2_hat,stderr,dirichlet,closed_form,rel_gap"
    assert lines[2].endswith(",,")
    assert variance_rows_dict(rows)[0]["f_id"] == "C1"


# --- FCLT and Kipnis-Varadhan ----------------------------------------------------------------

def test_fclt_scaling_oscillator(oscillator):
    sig2 = dirichlet(oscillator, oscillator.x)
    by_scale = {}
    for i, s in enumerate((1, 4, 16, 64)):
        by_scale[s] = build_traces(oscillator.table, oscillator.law, oscillator.L, {"x": oscillator.x},
                                   [s / 2, s], 10_000, 30 + i)["x"]
    rep = fclt_test(by_scale, sig2)
    assert rep.verdict
    top = rep.details["scales"]["64"]
    assert abs(top["increment_corr_z"]) < 3
    assert top["variance_ratio"] == pytest.approx(2.0, rel=0.1)


def test_kv_residual_oscillator_curve(osc_traces):
    out = kv_residual(osc_traces["x"])
    for t, r, e in zip(out["t"], out["residual"], out["stderr"]):
        assert abs(r - oracles.kv_residual_oscillator(t)) < 3 * e + 5e-3
    assert out["monotone"]


def test_kv_residual_bounded_function(osc_traces):
    out = kv_residual(osc_traces["bounded"])
    for t, r in zip(out["t"], out["residual"]):
        assert r <= 4.0 / t


def test_negative_control_trace_from_ensemble(oscillator):
    ens = stationary_ensemble(oscillator.table, oscillator.law, [1.0], 100, 1)
    tr = traces_from_ensemble(ens, oscillator.x, None, "x")
    assert isinstance(tr, TraceEnsemble) and np.all(tr.Lt == 0)
