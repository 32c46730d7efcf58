import json
import math

import pytest

from schedules import (
    HypothesisError,
    Schedule,
    ScheduleError,
    classify,
    eval_beta,
    eval_lambda,
    lambda_beta_limsup_bound_time,
    lambda_level_time,
)


class TestSchedule:
    def test_canonical_values(self, canonical):
        assert eval_lambda(canonical, 0.0) == 1.0
        assert eval_lambda(canonical, 9.0) == pytest.approx(0.1)
        assert eval_beta(canonical, 9.0) == pytest.approx(10.0)

    def test_vectorized(self, canonical):
        assert list(canonical.lam([0.0, 1.0, 3.0])) == pytest.approx([1.0, 0.5, 0.25])
        assert list(canonical.beta([0.0, 1.0, 3.0])) == pytest.approx([1.0, 2.0, 4.0])

    def test_negative_time_rejected(self, canonical):
        with pytest.raises(ScheduleError):
            eval_lambda(canonical, -1.0)
        with pytest.raises(ScheduleError):
            eval_beta(canonical, -1e-9)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"p": 0.0},
            {"q": -1.0},
            {"c_lambda": 0.0},
            {"c_beta": -2.0},
            {"p": math.nan},
            {"q": math.inf},
        ],
    )
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ScheduleError):
            Schedule(**kwargs)

    def test_dict_form(self):
        s = Schedule(2.0, 0.75, 0.5, 0.25)
        assert s.to_dict() == {"lambda": {"c": 2.0, "p": 0.75}, "beta": {"c": 0.5, "q": 0.25}}
        assert Schedule.from_dict(s.to_dict()) == s

    def test_from_dict_missing_field(self):
        with pytest.raises(ScheduleError):
            Schedule.from_dict({"lambda": {"c": 1.0}, "beta": {"c": 1.0, "q": 1.0}})


class TestClassify:
    def test_canonical_satisfies_everything(self, canonical):
        report = classify(canonical, 1.0)
        assert report.h3_l2 and report.h3_not_l1
        assert report.product_limsup == 1.0
        assert report.product_ok
        assert report.hfitz_distsq_ok is True
        assert report.liminf_lambda_zero
        assert report.all_ok
        assert report.numerics_consistent

    def test_lambda_not_square_integrable(self):
        report = classify(Schedule(1.0, 0.4, 1.0, 0.4), 1.0)
        assert not report.h3_l2
        assert "H3 violated: λ ∉ L²" in report.failures()

    def test_lambda_integrable(self):
        report = classify(Schedule(1.0, 1.5, 1.0, 1.0), 1.0)
        assert not report.h3_not_l1
        assert "H3 violated: λ ∈ L¹" in report.failures()

    def test_product_unbounded(self):
        report = classify(Schedule(1.0, 1.0, 1.0, 2.0), 1.0)
        assert report.product_limsup == math.inf
        assert not report.product_ok

    def test_product_limsup_at_the_boundary(self):
        report = classify(Schedule(2.0, 1.0, 1.0, 1.0), 1.0)
        assert report.product_limsup == 2.0
        assert not report.product_ok
        assert classify(Schedule(2.0, 1.0, 1.0, 1.0), 1.5, numeric=False).product_ok

    def test_product_vanishes_when_beta_grows_slower(self):
        report = classify(Schedule(5.0, 0.8, 5.0, 0.5), 0.1, numeric=False)
        assert report.product_limsup == 0.0
        assert report.product_ok

    def test_hfitz_violated(self):
        report = classify(Schedule(1.0, 0.6, 1.0, 0.3), 1.0)
        assert report.hfitz_distsq_ok is False
        assert "H_fitz violated: ∫ λ/β diverges" in report.failures()

    def test_hfitz_unverified_for_linear_penalty(self, canonical):
        report = classify(canonical, 1.0, penalty_kind="linear_psd", numeric=False)
        assert report.hfitz_unverified
        assert report.failures() == []

    def test_mu_must_be_positive(self, canonical):
        with pytest.raises(HypothesisError):
            classify(canonical, 0.0)

    def test_report_is_json_serializable(self):
        data = classify(Schedule(1.0, 1.0, 1.0, 2.0), 1.0).to_dict()
        text = json.dumps(data, allow_nan=False)
        assert json.loads(text)["product_limsup"] == "inf"
        assert data["h1"] is True


class TestQuadrature:
    def test_integrable_lambda_value(self):
        # p = 2: integral of (t+1)^-2 over [0, 1e6] is 1 - 1/(1e6+1)
        report = classify(Schedule(1.0, 2.0, 1.0, 0.0), 1.0)
        check = next(c for c in report.numeric_cross_checks if c.name == "lambda")
        assert check.value == pytest.approx(1.0, abs=1e-5)
        assert check.numeric_convergent and check.analytic_convergent

    def test_harmonic_lambda_diverges(self, canonical):
        check = next(c for c in classify(canonical, 1.0).numeric_cross_checks if c.name == "lambda")
        assert check.growth_ratio == pytest.approx(1.0, abs=1e-3)
        assert check.value == pytest.approx(math.log1p(1e6), rel=1e-6)
        assert not check.numeric_convergent
        assert check.consistent

    @pytest.mark.parametrize("p", [0.6, 0.7, 0.9])
    def test_slow_decay_is_divergent(self, p):
        report = classify(Schedule(1.0, p, 1.0, p), 1.0)
        check = next(c for c in report.numeric_cross_checks if c.name == "lambda")
        assert not check.numeric_convergent
        assert report.numerics_consistent

    def test_all_checks_present(self, canonical):
        names = [c.name for c in classify(canonical, 1.0).numeric_cross_checks]
        assert names == ["lambda_sq", "lambda", "lambda_over_beta"]

    @pytest.mark.parametrize("q", [0.0, 0.5, 1.0, 2.0])
    @pytest.mark.parametrize("p", [0.25, 0.5, 0.75, 1.0, 1.5])
    def test_quadrature_agrees_with_closed_form(self, p, q):
        report = classify(Schedule(1.0, p, 1.0, q), 1.0)
        assert len(report.numeric_cross_checks) == 3
        assert report.numerics_consistent


class TestCrossingTimes:
    def test_level_time(self, canonical):
        assert lambda_level_time(canonical, 0.01) == pytest.approx(99.0)
        assert lambda_level_time(canonical, 0.01, t_start=200.0) == 200.0
        assert lambda_level_time(canonical, 5.0) == 0.0

    def test_level_must_be_positive(self, canonical):
        with pytest.raises(ScheduleError):
            lambda_level_time(canonical, 0.0)

    def test_limsup_bound_time_when_exponents_match(self, canonical):
        assert lambda_beta_limsup_bound_time(canonical, 1.0) == 0.0

    def test_limsup_bound_time_when_product_decays(self):
        s = Schedule(4.0, 1.0, 1.0, 0.5)
        t0 = lambda_beta_limsup_bound_time(s, 1.0)
        assert t0 == pytest.approx(15.0)
        assert float(s.lam(t0) * s.beta(t0)) == pytest.approx(1.0)

    def test_limsup_bound_time_requires_product_hypothesis(self):
        with pytest.raises(HypothesisError):
            lambda_beta_limsup_bound_time(Schedule(1.0, 1.0, 1.0, 2.0), 1.0)
