import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from nelsonsim.field_modes import (
    STATIONARY_VARIANCE, Dispersion, FieldPath, FieldState, FormFactor, ModeSet, ModeSetError, build_mode_set,
    covariance_exact, empirical_covariance, interaction_bound, interaction_value, interaction_variance, omega,
    ou_step, pair, sample_field_path, smeared_field, sqrt_omega_norm2, stationary_sample,
)

N = 100_000


def z(samples, target):
    return (np.mean(samples) - target) / (np.std(samples, ddof=1) / math.sqrt(len(samples)))


@pytest.fixture
def one_mode():
    return build_mode_set(1, 1.0, Dispersion(1.0), FormFactor(1.0, 1.0))


@pytest.fixture
def four_modes():
    return build_mode_set(4, 2.0, Dispersion(1.0), FormFactor(0.7, 1.5))


# --- omega ---------------------------------------------------------------------

@pytest.mark.parametrize("k, nu, expected", [(0.0, 1.0, 1.0), (3.0, 4.0, 5.0), (1.0, 0.0, 1.0)])
def test_omega_examples(k, nu, expected):
    assert omega(k, Dispersion(nu)) == pytest.approx(expected)


@given(st.floats(-50, 50), st.floats(1e-6, 10))
def test_omega_even_and_bounded_below(k, nu):
    d = Dispersion(nu)
    assert omega(k, d) == omega(-k, d)
    assert omega(k, d) >= nu


def test_negative_mass_rejected():
    with pytest.raises(ValueError):
        Dispersion(-1.0)


# --- build_mode_set ----------------------------------------------------------------

def test_single_mode_values(one_mode):
    assert one_mode.momenta.tolist() == [1.0]
    assert one_mode.omegas[0] == pytest.approx(math.sqrt(2))
    assert one_mode.lambdas[0] == pytest.approx(math.exp(-0.5) / 2 ** 0.25)


def test_uniform_momentum_grid():
    ms = build_mode_set(4, 2.0)
    assert ms.momenta.tolist() == [0.5, 1.0, 1.5, 2.0]
    assert ms.delta_k == 0.5
    assert np.all(np.diff(ms.momenta) > 0)


def test_massless_zero_momentum_rejected():
    with pytest.raises(ModeSetError):
        build_mode_set(1, 0.0, Dispersion(0.0))
    with pytest.raises(ModeSetError):
        build_mode_set(3, 1.0, Dispersion(0.0), include_zero=True)


def test_bad_counts_rejected():
    with pytest.raises(ModeSetError):
        build_mode_set(0, 1.0)


def test_tabulated_form_factor_accepted():
    ff = FormFactor(1.0, 1.0, table=([0.0, 1.0, 2.0], [1.0, 0.5, 0.0]))
    ms = build_mode_set(2, 2.0, ff=ff)
    assert ms.form_values.tolist() == [0.5, 0.0]


def test_json_roundtrip(four_modes):
    back = ModeSet.from_json(four_modes.to_json())
    assert np.array_equal(back.lambdas, four_modes.lambdas)
    assert back.quadratures == four_modes.quadratures


def test_truncation_validation(one_mode):
    assert one_mode.truncated([(0, "c")]).n_quadratures == 1
    with pytest.raises(ValueError):
        one_mode.truncated([(3, "c")])
    with pytest.raises(ValueError):
        one_mode.truncated([(0, "c"), (0, "c")])


# --- stationary_sample -----------------------------------------------------------

def test_stationary_variance_covariance_mean(one_mode, rng):
    s = stationary_sample(one_mode, rng, N)
    c, sn = s.xi_c[:, 0], s.xi_s[:, 0]
    assert abs(z(c * c, STATIONARY_VARIANCE)) < 3
    assert abs(z(c * sn, 0.0)) < 3
    assert abs(z(c, 0.0)) < 3


# --- ou_step ---------------------------------------------------------------------

def test_zero_step_is_identity(one_mode, rng):
    s = stationary_sample(one_mode, rng, 10)
    assert ou_step(s, 0.0, one_mode, rng) is s


def test_negative_step_rejected(one_mode, rng):
    with pytest.raises(ValueError):
        ou_step(FieldState.zeros(1), -1.0, one_mode, rng)


@pytest.mark.parametrize("tau", [0.3, 1.0])
def test_lag_correlation(one_mode, rng, tau):
    s0 = stationary_sample(one_mode, rng, N)
    s1 = ou_step(s0, tau, one_mode, rng)
    prod = s0.xi_c[:, 0] * s1.xi_c[:, 0]
    target = STATIONARY_VARIANCE * math.exp(-one_mode.omegas[0] * tau)
    assert abs(z(prod, target)) < 3


def test_long_step_matches_stationary_law(one_mode, rng):
    far = ou_step(FieldState(np.full((20000, 1), 3.0), np.zeros((20000, 1))), 50.0, one_mode, rng)
    ref = stationary_sample(one_mode, rng, 20000)
    assert stats.ks_2samp(far.xi_c[:, 0], ref.xi_c[:, 0]).pvalue > 0.01


@pytest.mark.parametrize("dt", [0.01, 0.1, 1.0, 10.0])
def test_stationary_law_invariant_under_step(four_modes, rng, dt):
    s = ou_step(stationary_sample(four_modes, rng, 50000), dt, four_modes, rng)
    for j in range(4):
        assert abs(z(s.xi_c[:, j], 0.0)) < 3
        assert abs(z(s.xi_s[:, j] ** 2, STATIONARY_VARIANCE)) < 3


def test_semigroup_property_in_law(one_mode, rng):
    start = FieldState(np.full((50000, 1), 1.5), np.zeros((50000, 1)))
    two = ou_step(ou_step(start, 0.4, one_mode, rng), 0.6, one_mode, rng)
    one = ou_step(start, 1.0, one_mode, rng)
    assert stats.ks_2samp(two.xi_c[:, 0], one.xi_c[:, 0]).pvalue > 0.01


# --- pair / interaction ----------------------------------------------------------------

def test_pair_of_zero_function(four_modes, rng):
    s = stationary_sample(four_modes, rng, 5)
    assert np.all(pair(s, 0.0, four_modes) == 0)


@given(st.floats(-5, 5), st.integers(0, 2 ** 31))
@settings(max_examples=25)
def test_pair_linear_in_state(alpha, seed):
    ms = build_mode_set(3, 1.5)
    s = stationary_sample(ms, np.random.default_rng(seed))
    f = lambda k: np.exp(-k)
    assert pair(alpha * s, f, ms) == pytest.approx(alpha * pair(s, f, ms), abs=1e-12)


def test_pair_variance_is_covariance_quadrature(four_modes, rng):
    f = lambda k: 1.0 / (1.0 + k * k)
    v = pair(stationary_sample(four_modes, rng, N), f, four_modes)
    exact = np.sum(four_modes.delta_k * f(four_modes.momenta) ** 2 / (2 * four_modes.omegas))
    assert exact == pytest.approx(covariance_exact(f, f, 0.0, four_modes))
    assert abs(z(v * v, exact)) < 3


def test_interaction_at_origin_uses_cos_only(four_modes, rng):
    s = stationary_sample(four_modes, rng, 3)
    assert np.allclose(interaction_value(s, 0.0, four_modes), s.xi_c @ four_modes.lambdas)


def test_interaction_of_zero_state(four_modes):
    assert interaction_value(FieldState.zeros(4), 1.3, four_modes) == 0.0


def test_interaction_variance_independent_of_x(four_modes, rng):
    s = stationary_sample(four_modes, rng, N)
    target = covariance_exact(four_modes.form_values, four_modes.form_values, 0.0, four_modes)
    for x in np.linspace(-3, 3, 5):
        v = interaction_value(s, x, four_modes)
        assert abs(z(v * v, target)) < 3
        assert interaction_variance(four_modes, x) == pytest.approx(target)


def test_interaction_bound_holds(four_modes, rng):
    s = stationary_sample(four_modes, rng, 200)
    xs = np.linspace(-5, 5, 41)
    vals = np.abs(interaction_value(s, xs[:, None], four_modes))
    assert np.all(vals <= interaction_bound(s, four_modes)[None, :] + 1e-12)


def test_smeared_field_is_sqrt_omega_pairing(four_modes, rng):
    s = stationary_sample(four_modes, rng, N)
    h = lambda k: np.exp(-k * k)
    v = smeared_field(s, h, four_modes)
    assert np.allclose(v, pair(s, lambda k: np.sqrt(omega(k, Dispersion(1.0))) * h(k), four_modes))
    # Fock normalisation: Var = sum dk h^2 / 2
    assert abs(z(v * v, np.sum(four_modes.delta_k * h(four_modes.momenta) ** 2) / 2)) < 3
    assert sqrt_omega_norm2(h, four_modes) == pytest.approx(
        np.sum(four_modes.delta_k * four_modes.omegas * h(four_modes.momenta) ** 2))


# --- covariance_exact ----------------------------------------------------------------

def test_covariance_single_mode_closed_form(one_mode):
    w = one_mode.omegas[0]
    assert covariance_exact(1.0, 1.0, 1 / w, one_mode) == pytest.approx(math.exp(-1) / (2 * w))


def test_covariance_decays_monotonically(four_modes):
    vals = [covariance_exact(1.0, 1.0, lag, four_modes) for lag in np.linspace(0, 20, 21)]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 1e-8
    assert covariance_exact(1.0, 1.0, -2.0, four_modes) == covariance_exact(1.0, 1.0, 2.0, four_modes)


def test_empirical_covariance_across_lags(four_modes, rng):
    rows = empirical_covariance(four_modes, four_modes.form_values, [0.0, 0.5, 1.0, 2.0], N, rng)
    for r in rows:
        assert abs(r["empirical"] - r["exact"]) < 3 * r["stderr"]


# --- paths -----------------------------------------------------------------------------

def test_field_path_csv(tmp_path, one_mode, rng):
    path = sample_field_path(one_mode, np.linspace(0, 1, 5), rng)
    path.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "time,xi_c[0],xi_s[0]" and len(lines) == 6


def test_field_path_rejects_bad_times():
    with pytest.raises(ValueError):
        FieldPath(np.array([0.0, 0.0]), FieldState(np.zeros((2, 1)), np.zeros((2, 1))))
