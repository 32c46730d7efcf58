import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from discrete import (
    DiscreteError,
    compare_discrete,
    iterate,
    run_discrete,
    sample_schedule,
    step_sequence,
    write_discrete_csv,
)
from dynamics import lipschitz_bound
from problems import BUILTIN_IDS, builtin


def test_schedule_sampling(canonical):
    lam, beta = sample_schedule(canonical, 4)
    assert_allclose(lam, [1.0, 0.5, 1 / 3, 0.25])
    assert_allclose(beta, [1.0, 2.0, 3.0, 4.0])
    shifted, _ = sample_schedule(canonical, 2, offset=1)
    assert_allclose(shifted, [0.5, 1 / 3])


def test_relaxed_steps(p1, canonical):
    h = step_sequence(p1.instance, canonical, 10, use_h1=False)
    assert np.all(h <= 1.0)
    for n, step in enumerate(h):
        assert step * lipschitz_bound(p1.instance, canonical, float(n)) <= 1.0 + 1e-15
    assert_allclose(step_sequence(p1.instance, canonical, 10), np.ones(10))


def test_unit_step_euler_is_the_discrete_scheme(p1, canonical):
    result = compare_discrete(p1.instance, canonical, p1.default_x0, 100)
    assert result.passed
    assert result.max_discrepancy <= 1e-15 * 100
    assert result.per_step.shape == (101,)


@pytest.mark.parametrize("name", ["p2", "p3"])
def test_identity_on_other_instances(name, canonical, request):
    named = request.getfixturevalue(name)
    assert compare_discrete(named.instance, canonical, named.default_x0, 50).passed


@pytest.mark.parametrize("instance_id", BUILTIN_IDS)
def test_identity_over_a_thousand_steps(instance_id, canonical):
    named = builtin(instance_id)
    result = compare_discrete(named.instance, canonical, named.default_x0, 1000)
    assert result.passed
    assert result.max_discrepancy <= 1e-15
    assert len(result.per_step) == 1001


def test_shifted_sampling_is_detected(p1, canonical):
    result = compare_discrete(p1.instance, canonical, np.zeros(4), 20, sample_offset=1)
    assert not result.passed
    assert result.to_dict()["passed"] is False
    assert result.to_dict()["sample_offset"] == 1


def test_discrete_scheme_approaches_solution(p1, canonical):
    run = run_discrete(p1.instance, canonical, np.zeros(4), 2000)
    assert run.steps == 2000
    assert run.iterates.shape == (2001, 4)
    assert np.linalg.norm(run.final - p1.solution_point) < 0.05
    assert run.residuals[-1] < run.residuals[0]


def test_relaxed_scheme_runs(p3, canonical):
    run = run_discrete(p3.instance, canonical, p3.default_x0, 200, use_h1=False)
    assert np.all(run.h_seq < 1.0)
    assert np.all(np.isfinite(run.iterates))


class TestIterateValidation:
    def test_n_must_be_positive(self, p1):
        with pytest.raises(DiscreteError):
            iterate(p1.instance, [1.0], [1.0], [1.0], np.zeros(4), 0)

    def test_sequences_too_short(self, p1):
        with pytest.raises(DiscreteError):
            iterate(p1.instance, [1.0, 0.5], [1.0], [1.0, 1.0], np.zeros(4), 2)

    def test_non_positive_entries(self, p1):
        with pytest.raises(DiscreteError):
            iterate(p1.instance, [1.0, -0.5], [1.0, 2.0], [1.0, 1.0], np.zeros(4), 2)
        with pytest.raises(DiscreteError):
            iterate(p1.instance, [1.0, 0.5], [1.0, 2.0], [1.0, 0.0], np.zeros(4), 2)

    def test_compare_requires_integer_n(self, p1, canonical):
        with pytest.raises(DiscreteError):
            compare_discrete(p1.instance, canonical, np.zeros(4), 2.5)


def test_discrete_csv(p1, canonical, tmp_path):
    run = run_discrete(p1.instance, canonical, np.zeros(4), 5)
    path = tmp_path / "discrete.csv"
    write_discrete_csv(run, str(path))
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["n", "x_0", "x_1", "x_2", "x_3", "residual", "lambda_n", "beta_n"]
    assert len(rows) == 7
    assert rows[1][0] == "0"
    assert float(rows[2][-1]) == 2.0
    assert rows[-1][-3:] == ["", "", ""]
    assert np.array_equal([float(v) for v in rows[-1][1:5]], run.final)
