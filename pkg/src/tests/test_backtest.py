import numpy as np
import pytest

from internal.backtest import (acerbi_szekely_test, bootstrap_means, direct_tests, dm_test,
                               encompassing_test, loss_difference_test, mnf_test,
                               nadeau_bengio_test, violation_set)
from internal.core import ForecastPath
from internal.exceptions import DomainError, InputError
from internal.models import ZVariant
from internal.schemas import GarchParams
from internal.simulate import garch_simulate, true_var_es_normal


def centred_draws(mean: float, size: int, seed: int) -> np.ndarray:
    z = np.random.default_rng(seed).standard_normal(size)
    return mean + (z - z.mean())


def test_violation_set_is_strict() -> None:
    assert violation_set([-2.0, 0.0, -3.0, -1.0], [-1.0, -1.0, -1.0, -1.0]).tolist() == [0, 2]


def test_bootstrap_means_are_seeded() -> None:
    x = np.arange(10.0)

    a = bootstrap_means(x, 2500, seed=4)

    assert np.array_equal(a, bootstrap_means(x, 2500, seed=4))
    assert a.shape == (2500,)
    with pytest.raises(InputError):
        bootstrap_means(x, 0, seed=4)


def test_mnf_exact_es_does_not_reject() -> None:
    # Given: Every violation lands exactly on the ES
    y = np.full(40, -2.0)
    q = np.full(40, -1.0)

    # When: Testing with e = y
    report = mnf_test(y, q, y, n_boot=500, seed=1)

    # Then: The residual mean is zero and the null stands
    assert report.statistic == 0.0
    assert report.p_value == 1.0
    assert not report.reject_at_5pct


def test_mnf_detects_underestimated_risk() -> None:
    # Given: Fifty violations whose residuals average -0.5
    y = np.full(50, -3.0)
    q = np.zeros(50)
    x = centred_draws(-0.5, 50, seed=2)

    # When: Testing
    report = mnf_test(y, q, y - x, n_boot=2000, seed=3)

    # Then: The one-sided test rejects
    assert report.statistic == pytest.approx(-0.5)
    assert report.p_value < 0.05
    assert report.diagnostics["n_violations"] == 50


def test_mnf_accepts_conservative_es() -> None:
    y = np.full(50, -3.0)
    x = centred_draws(0.5, 50, seed=2)

    report = mnf_test(y, np.zeros(50), y - x, n_boot=2000, seed=3)

    assert report.p_value > 0.5


def test_mnf_with_few_violations_is_inconclusive() -> None:
    y = np.array([-2.0, 1.0, 1.0, -2.0, 0.5])

    report = mnf_test(y, np.full(5, -1.0), np.full(5, -1.5), n_boot=100)

    assert report.diagnostics["inconclusive"]
    assert report.p_value == 1.0


def test_z1_equals_one_when_violations_hit_the_es() -> None:
    y = np.array([-2.0, 0.5, -3.0, 1.0] * 10)
    e = np.where(y < 0, y, -2.5)

    report = acerbi_szekely_test(y, np.full(40, -1.0), e, ZVariant.Z1, 0.05, n_boot=500)

    assert report.name == "AS-Z1"
    assert report.statistic == pytest.approx(1.0)
    assert not report.reject_at_5pct


def test_z2_with_the_expected_violation_count() -> None:
    # Given: One violation in 20 observations at theta = 0.05, landing on the ES
    y = np.zeros(20)
    y[7] = -2.0
    e = np.full(20, -2.0)

    # When: Testing Z2
    report = acerbi_szekely_test(y, np.full(20, -1.0), e, ZVariant.Z2, 0.05, n_boot=500)

    # Then: The statistic is exactly one
    assert report.statistic == pytest.approx(1.0)


def test_z2_without_violations_rejects() -> None:
    report = acerbi_szekely_test(np.zeros(30), np.full(30, -1.0), np.full(30, -2.0), ZVariant.Z2,
                                 0.05, n_boot=200)

    assert report.statistic == 0.0
    assert report.p_value == 0.0
    assert report.reject_at_5pct


def test_z1_without_violations_is_inconclusive() -> None:
    report = acerbi_szekely_test(np.zeros(30), np.full(30, -1.0), np.full(30, -2.0), ZVariant.Z1)

    assert report.diagnostics["inconclusive"]


def test_zero_es_on_a_violation_is_a_domain_error() -> None:
    with pytest.raises(DomainError):
        acerbi_szekely_test([-2.0, 0.0], [-1.0, -1.0], [0.0, -2.0], ZVariant.Z1)


def test_direct_tests_order() -> None:
    y = np.full(20, -2.0)

    reports = direct_tests(y, np.full(20, -1.0), y, 0.05, n_boot=100)

    assert [r.name for r in reports] == ["MNF", "AS-Z1", "AS-Z2"]


def test_dm_identical_losses_are_degenerate() -> None:
    loss = np.linspace(0.0, 1.0, 30)

    report = dm_test(loss, loss)

    assert report.diagnostics["degenerate"]
    assert report.p_value == 1.0


def test_dm_clear_difference() -> None:
    # Given: Differences drawn from N(1, 0.01)
    d = centred_draws(0.0, 100, seed=11) * 0.1 + 1.0

    # When: Comparing
    report = dm_test(d, np.zeros(100))

    # Then: Overwhelming evidence that B is better
    assert report.p_value < 1e-10
    assert report.statistic > 0
    assert report.diagnostics["better"] == "B"


def test_dm_rejects_short_samples() -> None:
    with pytest.raises(InputError):
        dm_test(np.zeros(9), np.ones(9))
    with pytest.raises(InputError):
        dm_test(np.zeros(20), np.ones(20), h=0)


def test_dm_long_horizon_runs() -> None:
    rng = np.random.default_rng(12)

    report = dm_test(rng.standard_normal(200), rng.standard_normal(200), h=3)

    assert 0.0 <= report.p_value <= 1.0
    assert report.diagnostics["h"] == 3


def test_nadeau_bengio_constant_difference_is_degenerate() -> None:
    report = nadeau_bengio_test([1.0, 2.0, 3.0], [0.5, 1.5, 2.5], n_train=100, n_test=20)

    assert report.diagnostics["degenerate"]


def test_nadeau_bengio_is_scale_invariant() -> None:
    a = np.array([1.0, 1.4, 0.9, 1.2, 1.1])
    b = np.array([1.3, 1.5, 1.2, 1.6, 1.0])

    first = nadeau_bengio_test(a, b, 1512, 252)
    second = nadeau_bengio_test(7.0 * a, 7.0 * b, 1512, 252)

    assert first.statistic == pytest.approx(second.statistic)
    assert first.diagnostics["correction"] == pytest.approx(1 / 5 + 252 / 1512)
    assert first.diagnostics["better"] == "A"


def test_nadeau_bengio_needs_two_folds() -> None:
    with pytest.raises(InputError):
        nadeau_bengio_test([1.0], [2.0], 10, 2)


def test_loss_difference_favours_the_smaller_loss() -> None:
    rng = np.random.default_rng(8)
    small = rng.uniform(0.0, 1.0, 200)
    large = small + 0.5

    assert loss_difference_test(small, large, n_boot=1000, seed=1).reject_at_5pct
    assert not loss_difference_test(large, small, n_boot=1000, seed=1).reject_at_5pct
    assert loss_difference_test(small, small).diagnostics["degenerate"]


def test_encompassing_identical_paths_are_degenerate() -> None:
    rng = np.random.default_rng(0)
    path = ForecastPath(-1.0 - rng.uniform(size=40), -2.0 - rng.uniform(size=40), 0.05)

    report = encompassing_test(path, path, rng.standard_normal(40), n_boot=100)

    assert report.diagnostics["degenerate"]
    assert report.p_value == 1.0


def test_encompassing_weights_are_nonnegative(garch_series) -> None:
    # Given: The true normal VaR/ES and a flat competitor
    series, sigma = garch_series
    q, e = true_var_es_normal(sigma, 0.05)
    truth = ForecastPath(q, e, 0.05)
    var = np.quantile(series.values, 0.05)
    es = np.mean(series.values[series.values <= var])
    flat = ForecastPath(np.full(len(q), var), np.full(len(q), es), 0.05)

    # When: Testing whether the flat forecast adds to the truth
    report = encompassing_test(truth, flat, series, n_boot=500, seed=2)

    # Then: The fitted combinations never short either model
    assert report.name == "ENC"
    assert all(w >= 0 for w in report.diagnostics["es_weights"])
    assert all(w >= -1e-9 for w in report.diagnostics["var_weights"])


def test_encompassing_needs_twenty_points() -> None:
    path = ForecastPath(np.full(10, -1.0), np.full(10, -2.0), 0.05)

    with pytest.raises(InputError):
        encompassing_test(path, path, np.zeros(10))


@pytest.mark.slow
def test_mnf_size_and_power() -> None:
    # Given: Standard normal returns with the true VaR and ES
    q, e = true_var_es_normal(1.0, 0.05)
    rejections_true, rejections_biased = 0, 0

    # When: Testing 100 samples with the true ES and with an ES shrunk by 20 percent
    for seed in range(100):
        y = np.random.default_rng(seed).standard_normal(1000)
        qs, es = np.full(1000, q), np.full(1000, e)
        rejections_true += mnf_test(y, qs, es, n_boot=500, seed=seed).reject_at_5pct
        rejections_biased += mnf_test(y, qs, 0.8 * es, n_boot=500, seed=seed).reject_at_5pct

    # Then: The size stays near 5 percent and the shrunk ES is caught
    assert rejections_true <= 15
    assert rejections_biased >= 90


def test_dm_constant_difference_with_rounding_noise_is_infinite() -> None:
    # Given: Losses that differ by 0.1 up to floating-point rounding
    b = np.random.default_rng(3).uniform(0.0, 5.0, 250)
    a = b + 0.1

    # When: Comparing
    report = dm_test(a, b)

    # Then: The spread is treated as zero
    assert report.statistic == np.inf
    assert report.p_value == 0.0
    assert report.diagnostics["better"] == "B"


def test_nadeau_bengio_rounding_noise_is_degenerate() -> None:
    b = np.array([0.3, 1.7, 2.9, 0.11])

    report = nadeau_bengio_test(b + 0.1, b, n_train=100, n_test=20)

    assert report.diagnostics["degenerate"]


def test_direct_test_p_values_are_stable_in_n_boot() -> None:
    # Given: Normal returns with the exact VaR and ES
    q, e = true_var_es_normal(1.0, 0.05)
    y = np.random.default_rng(19).standard_normal(500)
    qs, es = np.full(500, q), np.full(500, e)

    # When: Doubling the number of replicates
    single = direct_tests(y, qs, es, 0.05, n_boot=2000, seed=6)
    double = direct_tests(y, qs, es, 0.05, n_boot=4000, seed=6)

    # Then: Every p-value moves by Monte Carlo noise only
    for first, second in zip(single, double):
        assert first.p_value == pytest.approx(second.p_value, abs=0.03)


@pytest.mark.slow
def test_direct_tests_size_on_simulated_truth() -> None:
    # Given: GARCH paths with their true VaR and ES
    params = GarchParams(omega=0.05, alpha=0.08, beta_g=0.90)
    rejections = {"MNF": 0, "AS-Z1": 0, "AS-Z2": 0}
    halved = 0

    # When: Testing 100 seeded series
    for seed in range(100):
        series, sigma = garch_simulate(params, 1000, seed=seed)
        q, e = true_var_es_normal(sigma, 0.05)
        for report in direct_tests(series.values, q, e, 0.05, n_boot=500, seed=seed):
            rejections[report.name] += report.reject_at_5pct
        halved += mnf_test(series.values, q, 0.5 * e, n_boot=500, seed=seed).reject_at_5pct

    # Then: All three stay near the nominal level and a halved ES is caught
    assert all(count <= 15 for count in rejections.values()), rejections
    assert halved >= 80
