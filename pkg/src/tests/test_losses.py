import math

import numpy as np
import pytest
from scipy.stats import norm

from internal.exceptions import DomainError, InputError
from internal.losses import (barrera_loss, patton_loss, penalized_joint_loss, penalized_r_loss,
                             pinball_loss, safe_joint_objective)


def brute_pinball(q, y, theta):
    total = 0.0
    for qt, yt in zip(q, y):
        total += (yt - qt) * (theta - (1.0 if yt < qt else 0.0))
    return total / len(y)


def brute_barrera(r, y, q, theta):
    total = 0.0
    for rt, yt, qt in zip(r, y, q):
        total += (rt + max(qt - yt, 0.0) / theta) ** 2
    return total / len(y)


def brute_patton(e, q, y, theta):
    total = 0.0
    for et, qt, yt in zip(e, q, y):
        hit = 1.0 if yt <= qt else 0.0
        total += qt / et - hit * (qt - yt) / (theta * et) + math.log(-et)
    return total / len(y)


@pytest.fixture
def random_instances():
    rng = np.random.default_rng(1234)
    instances = []
    for _ in range(1000):
        T = int(rng.integers(1, 51))
        y = rng.standard_normal(T)
        q = -np.abs(rng.standard_normal(T)) - 0.1
        e = q - np.abs(rng.standard_normal(T))
        theta = float(rng.uniform(0.01, 0.2))
        instances.append((y, q, e, theta))
    return instances


def test_pinball_examples() -> None:
    assert pinball_loss([0.5, -1.0], [0.5, -1.0], 0.05).value == 0.0
    assert pinball_loss([0.0], [1.0], 0.05).value == pytest.approx(0.05)


def test_barrera_examples() -> None:
    assert barrera_loss([0.0, 0.0], [1.0, 2.0], [0.0, 0.0], 0.05).value == 0.0
    assert barrera_loss([-1.0], [1.0], [0.0], 0.05).value == pytest.approx(1.0)
    assert barrera_loss([-1.0], [-0.5], [0.0], 0.5).value == pytest.approx(0.0)


def test_patton_examples() -> None:
    assert patton_loss([-1.0], [-1.0], [0.0], 0.05).value == pytest.approx(1.0)
    assert patton_loss([-2.0], [-1.0], [-2.0], 0.5).value == pytest.approx(1.5 + math.log(2.0))
    assert patton_loss([-2.0], [-1.0], [-2.0], 0.5).value == pytest.approx(2.1931, abs=1e-4)


def test_patton_requires_negative_es() -> None:
    with pytest.raises(DomainError):
        patton_loss([-1.0, 0.0], [-1.0, -1.0], [0.0, 0.0], 0.05)


def test_penalized_r_examples() -> None:
    # Given: A positive residual with weight 10
    loss = penalized_r_loss([2.0], [1.0], [0.0], 0.05, 10.0)

    # Then: The squared term plus the penalty
    assert loss.value == pytest.approx(24.0)
    assert loss.per_time.mean() == pytest.approx(loss.value)


def test_penalized_joint_example() -> None:
    # Given: A positive VaR with weight 10
    base = patton_loss([-1.0], [0.5], [1.0], 0.05).value

    # When: Adding the penalty
    loss = penalized_joint_loss([-1.0], [0.5], [1.0], 0.05, 0.0, 10.0)

    # Then: The penalty adds 10 * 0.5
    assert loss.value == pytest.approx(base + 5.0)


def test_losses_match_brute_force(random_instances) -> None:
    for y, q, e, theta in random_instances:
        r = e - q
        assert pinball_loss(q, y, theta).value == pytest.approx(brute_pinball(q, y, theta), abs=1e-12)
        assert barrera_loss(r, y, q, theta).value == pytest.approx(
            brute_barrera(r, y, q, theta), rel=1e-12, abs=1e-12)
        assert patton_loss(e, q, y, theta).value == pytest.approx(
            brute_patton(e, q, y, theta), rel=1e-12, abs=1e-12)


def test_inactive_penalties_leave_losses_unchanged(random_instances) -> None:
    for y, q, e, theta in random_instances:
        r = e - q
        # r <= 0 and e <= q <= 0 by construction
        assert penalized_r_loss(r, y, q, theta, 10.0).value == pytest.approx(
            barrera_loss(r, y, q, theta).value, abs=1e-12)
        assert penalized_joint_loss(e, q, y, theta, 10.0, 10.0).value == pytest.approx(
            patton_loss(e, q, y, theta).value, abs=1e-12)


def test_zero_weights_leave_losses_unchanged() -> None:
    rng = np.random.default_rng(9)
    y, q = rng.standard_normal(30), rng.standard_normal(30)
    r = rng.standard_normal(30)
    assert penalized_r_loss(r, y, q, 0.05, 0.0).value == barrera_loss(r, y, q, 0.05).value


def test_length_mismatch_and_negative_weight() -> None:
    with pytest.raises(InputError):
        pinball_loss([0.0, 1.0], [0.0], 0.05)
    with pytest.raises(InputError):
        penalized_r_loss([0.0], [0.0], [0.0], 0.05, -1.0)


def test_safe_objective_is_infinite_outside_the_domain() -> None:
    e = np.array([-1.0, 0.0])
    q = np.array([-0.5, -0.5])
    y = np.array([0.0, 0.0])
    assert safe_joint_objective(e, q, y, 0.05, 0.1, 0.1) == np.inf


def test_penalized_losses_match_brute_force() -> None:
    # Given: Paths where both penalties are active
    rng = np.random.default_rng(77)
    for _ in range(1000):
        T = int(rng.integers(1, 51))
        y = rng.standard_normal(T)
        q = rng.standard_normal(T)
        e = -np.abs(rng.standard_normal(T)) - 0.1
        r = rng.standard_normal(T)
        theta = float(rng.uniform(0.01, 0.2))
        lambda_r, lambda_e, lambda_q = rng.uniform(0.0, 5.0, size=3)

        # When: Comparing with a loop over the sums
        expected_r = brute_barrera(r, y, q, theta) + lambda_r * sum(max(v, 0.0) for v in r)
        expected_joint = (brute_patton(e, q, y, theta)
                          + lambda_e * sum(max(et - qt, 0.0) for et, qt in zip(e, q))
                          + lambda_q * sum(max(qt, 0.0) for qt in q))

        # Then: Both agree to rounding
        assert penalized_r_loss(r, y, q, theta, lambda_r).value == pytest.approx(
            expected_r, rel=1e-12, abs=1e-12)
        assert penalized_joint_loss(e, q, y, theta, lambda_e, lambda_q).value == pytest.approx(
            expected_joint, rel=1e-12, abs=1e-12)


def test_patton_loss_prefers_the_true_pair() -> None:
    # Given: Standard normal samples and their exact VaR/ES at 5 percent
    theta = 0.05
    q_true = float(norm.ppf(theta))
    e_true = -float(norm.pdf(q_true)) / theta
    rng = np.random.default_rng(2024)
    T = 10_000

    wins = 0
    for _ in range(100):
        y = rng.standard_normal(T)
        best = patton_loss(np.full(T, e_true), np.full(T, q_true), y, theta).value

        # When: Scoring 50 ordered pairs moved at least 0.3 away in each coordinate
        beaten = False
        for _ in range(50):
            while True:
                shift_q, shift_e = rng.uniform(0.3, 0.8, size=2) * rng.choice([-1.0, 1.0], size=2)
                q, e = q_true + shift_q, e_true + shift_e
                if e < q < 0.0:
                    break
            if patton_loss(np.full(T, e), np.full(T, q), y, theta).value < best:
                beaten = True
                break
        wins += not beaten

    # Then: The true pair scores best in nearly every trial
    assert wins >= 95


def test_barrera_loss_is_minimized_at_the_true_gap() -> None:
    # Given: A large normal sample with the exact VaR in place of q
    theta = 0.05
    q_true = float(norm.ppf(theta))
    gap = -float(norm.pdf(q_true)) / theta - q_true
    y = np.random.default_rng(31).standard_normal(200_000)
    q = np.full(len(y), q_true)

    # When: Searching a grid of constant gaps
    grid = np.arange(-1.5, 0.0, 0.01)
    losses = [barrera_loss(np.full(len(y), r), y, q, theta).value for r in grid]

    # Then: The minimizer sits at the true ES - VaR gap
    assert grid[int(np.argmin(losses))] == pytest.approx(gap, abs=0.05)
