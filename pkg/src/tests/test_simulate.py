import json

import numpy as np
import pytest
from pydantic import ValidationError

from internal.exceptions import DomainError, InputError
from internal.models import Innovation
from internal.schemas import DgpSchema, GarchParams
from internal.simulate import (NormalDist, StudentDist, default_dgps, garch_simulate, ratio_curves,
                               run_dgp_suite, student_unit_var_es, true_var_es, true_var_es_normal,
                               true_var_es_student, var_es_ratio, write_bundle)


def test_no_dynamics_gives_constant_volatility() -> None:
    # Given: alpha = beta_g = 0
    params = GarchParams(omega=0.04, alpha=0.0, beta_g=0.0)

    # When: Simulating
    series, sigma = garch_simulate(params, 50, seed=1)

    # Then: sigma_t = sqrt(omega) at every step
    assert sigma == pytest.approx(np.full(50, 0.2))
    assert len(series) == 50


def test_simulation_is_seeded(garch_params) -> None:
    a, sigma_a = garch_simulate(garch_params, 300, seed=42)
    b, sigma_b = garch_simulate(garch_params, 300, seed=42)
    c, _ = garch_simulate(garch_params, 300, seed=43)

    assert np.array_equal(a.values, b.values)
    assert np.array_equal(sigma_a, sigma_b)
    assert not np.array_equal(a.values, c.values)


def test_student_innovations_have_unit_variance() -> None:
    params = GarchParams(omega=0.5, alpha=0.0, beta_g=0.5, innovation=Innovation.STUDENT, nu=6.0)

    series, sigma = garch_simulate(params, 200_000, seed=3)

    assert np.var(series.values / sigma) == pytest.approx(1.0, abs=0.05)


def test_garch_parameters_are_validated() -> None:
    with pytest.raises(ValidationError):
        GarchParams(omega=0.1, alpha=0.5, beta_g=0.5)
    with pytest.raises(ValidationError):
        GarchParams(omega=0.1, alpha=0.1, beta_g=0.5, innovation=Innovation.STUDENT, nu=2.0)
    with pytest.raises(InputError):
        garch_simulate(GarchParams(omega=0.1, alpha=0.1, beta_g=0.5), 1)


def test_standard_normal_var_and_es() -> None:
    q, e = true_var_es_normal(1.0, 0.05)

    assert q == pytest.approx(-1.6449, abs=1e-4)
    assert e == pytest.approx(-2.0627, abs=1e-4)


def test_normal_truth_scales_with_sigma() -> None:
    q, e = true_var_es_normal(np.array([0.0, 1.0, 2.0]), 0.025)

    assert q[0] == 0.0 and e[0] == 0.0
    assert q[2] == pytest.approx(2 * q[1])
    assert e[2] == pytest.approx(2 * e[1])


def test_negative_volatility_is_rejected() -> None:
    with pytest.raises(DomainError):
        true_var_es_normal(-1.0, 0.05)
    with pytest.raises(DomainError):
        true_var_es_student(1.0, 2.0, 0.05)


def test_student_truth_approaches_the_normal() -> None:
    q_t, e_t = true_var_es_student(1.0, 1e6, 0.05)
    q_n, e_n = true_var_es_normal(1.0, 0.05)

    assert q_t == pytest.approx(q_n, abs=1e-3)
    assert e_t == pytest.approx(e_n, abs=1e-3)


def test_student_es_lies_below_var() -> None:
    for nu in (3.0, 4.0, 6.0, 30.0):
        q, e = true_var_es_student(1.0, nu, 0.01, standardized=False)
        assert e < q < 0


def test_truth_dispatches_on_the_innovation() -> None:
    student = GarchParams(omega=0.1, alpha=0.1, beta_g=0.5, innovation=Innovation.STUDENT, nu=5.0)

    assert true_var_es(student, 1.0, 0.05) == pytest.approx(true_var_es_student(1.0, 5.0, 0.05))


def test_normal_ratio() -> None:
    assert var_es_ratio(NormalDist(), 0.05) == pytest.approx(0.7975, abs=1e-4)


def test_student_ratio_increases_with_nu() -> None:
    ratios = [var_es_ratio(StudentDist(float(nu)), 0.05) for nu in range(3, 101)]

    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < var_es_ratio(NormalDist(), 0.05)


def test_ratio_curves_layout() -> None:
    frame = ratio_curves(0.05, sigmas=[0.5, 1.0], nus=[3, 10])

    assert list(frame.columns) == ["family", "parameter", "ratio"]
    assert frame["family"].tolist() == ["NORMAL", "NORMAL", "STUDENT", "STUDENT"]
    assert frame["ratio"].between(0, 1).all()


def test_default_dgps() -> None:
    dgps = default_dgps()

    assert len(dgps) == 6
    assert {d.name for d in dgps} == {"NORMAL-I", "NORMAL-II", "NORMAL-III",
                                      "STUDENT-I", "STUDENT-II", "STUDENT-III"}
    assert all(d.stand_in for d in dgps)


def test_suite_is_reproducible_across_thread_counts() -> None:
    # Given: The same seed with one and three workers
    kwargs = dict(n_series=2, T=60, split=50, thetas=(0.05,), seed=9)

    # When: Running the suite twice
    a = run_dgp_suite(n_jobs=1, **kwargs)
    b = run_dgp_suite(n_jobs=3, **kwargs)

    # Then: Twelve series with identical draws and aligned truths
    assert len(a.series) == 12
    assert len(a.by_dgp("STUDENT-II")) == 2
    for first, second in zip(a.series, b.series):
        assert np.array_equal(first.y.values, second.y.values)
        q, e = first.truth[0.05]
        assert len(q) == len(e) == 60
    assert a.series[0].test_range == range(50, 60)


def test_suite_rejects_bad_split() -> None:
    with pytest.raises(InputError):
        run_dgp_suite(n_series=1, T=60, split=60)


def test_write_bundle(tmp_path) -> None:
    dgp = DgpSchema(name="flat", params=GarchParams(omega=0.01, alpha=0.0, beta_g=0.0))
    bundle = run_dgp_suite([dgp], n_series=2, T=30, split=20, thetas=(0.05, 0.01), seed=1)

    manifest_path = write_bundle(bundle, tmp_path / "series")

    manifest = json.loads(manifest_path.read_text())
    assert manifest["split"] == {"train": 20, "test": 10}
    assert [s["file"] for s in manifest["series"]] == ["flat_000.csv", "flat_001.csv"]
    assert (tmp_path / "series" / "flat_001.csv").exists()


@pytest.mark.slow
@pytest.mark.parametrize("nu", [5.0, 8.0, 12.0])
def test_student_truth_matches_monte_carlo(nu) -> None:
    # Given: Ten million unit-variance Student-t draws
    rng = np.random.default_rng(int(nu))
    draws = rng.standard_t(nu, 10_000_000) * np.sqrt((nu - 2.0) / nu)

    # When: Taking the empirical 5 percent quantile and tail mean
    n_tail = int(0.05 * len(draws))
    tail = np.partition(draws, n_tail - 1)[:n_tail]
    q_mc, e_mc = tail.max(), tail.mean()

    # Then: The closed form agrees within half a percent
    q, e = true_var_es_student(1.0, nu, 0.05)
    assert q == pytest.approx(q_mc, rel=5e-3)
    assert e == pytest.approx(e_mc, rel=5e-3)


def test_plain_student_es_exists_below_two_degrees_of_freedom() -> None:
    # Given: nu = 1.5, where the tail mean exists but the variance does not
    q, e = true_var_es_student(1.0, 1.5, 0.05, standardized=False)

    # Then: The plain values and the ratio are defined, the unit-variance ones are not
    assert e < q < 0
    assert 0 < var_es_ratio(StudentDist(1.5), 0.05) < 1
    with pytest.raises(DomainError):
        true_var_es_student(1.0, 1.5, 0.05)
    with pytest.raises(DomainError):
        student_unit_var_es(1.0, 0.05)


def test_long_run_variance_matches_the_stationary_level() -> None:
    # Given: A moderately persistent GARCH(1,1)
    params = GarchParams(omega=0.3, alpha=0.1, beta_g=0.6)

    # When: Simulating a hundred thousand returns
    series, _ = garch_simulate(params, 100_000, seed=17)

    # Then: The sample variance is within 3 percent of omega / (1 - alpha - beta)
    assert np.var(series.values) == pytest.approx(0.3 / (1.0 - 0.1 - 0.6), rel=0.03)
