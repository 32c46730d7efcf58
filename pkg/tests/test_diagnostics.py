import json
import math

import numpy as np
import pytest

from diagnostics import (
    LemmaConstants,
    LemmaPremiseError,
    TrajectoryTooShortError,
    build_report,
    check_lemma_fej1,
    check_lemma_fej4,
    check_strong_monotone,
    choose_lemma_constants,
    constants_from_eps,
    convergence_report,
    derivative_identity_errors,
    t1_threshold,
)
from dynamics import IntegratorOptions, Trajectory, integrate
from operators import GraphPoint, validate_graph_point
from problems import sample_graph_points
from schedules import Schedule, classify


@pytest.fixture(scope="module")
def p3_short(p3):
    opts = IntegratorOptions(record_every=10, reference=p3.certificate)
    return integrate(p3.instance, Schedule.canonical(), p3.default_x0, 200.0, opts)


def line_certificate(p2, z1=1.0):
    """(z, v, p, 0) with z = (z1, 0) on C, v = Mz and p = -v normal to C."""
    z = np.array([z1, 0.0])
    v = p2.instance.A.M @ z
    return GraphPoint.build(z, v, -v, p2.instance.D)


@pytest.fixture(scope="module")
def p2_short(p2):
    opts = IntegratorOptions(record_every=10, reference=line_certificate(p2))
    return integrate(p2.instance, Schedule.canonical(), p2.default_x0, 200.0, opts)


class TestLemmaConstants:
    def test_from_eps(self):
        a, b = constants_from_eps(0.2)
        assert a == pytest.approx(1 / 12)
        assert b == pytest.approx(24.0)

    def test_canonical_choice(self, canonical):
        c = choose_lemma_constants(canonical, 1.0)
        # alpha = (1 + 2)/2 and the boundary of g < 0 solves 1.5 e^2 + 4 e - 0.5 = 0
        assert c.alpha == pytest.approx(1.5)
        assert c.eps0 == pytest.approx((-4.0 + math.sqrt(19.0)) / 6.0, rel=1e-9)
        assert (c.a, c.b) == pytest.approx(constants_from_eps(c.eps0))
        assert c.t0 == 0.0
        g = (1 + c.eps0) * c.alpha - 2.0 / (1 + c.eps0) + c.eps0 / (1 + c.eps0)
        assert g < 0

    def test_large_mu_limit(self, canonical):
        c = choose_lemma_constants(canonical, 1e6)
        assert c.eps0 == pytest.approx((math.sqrt(2.0) - 1.0) / 2.0, abs=1e-4)

    def test_decaying_product_needs_a_start_time(self):
        c = choose_lemma_constants(Schedule(1.0, 1.0, 1.0, 0.5), 0.1)
        assert 0 < c.eps0 < 0.5
        assert c.t0 > 0

    def test_premise(self):
        with pytest.raises(LemmaPremiseError):
            choose_lemma_constants(Schedule(2.0, 1.0, 1.0, 1.0), 1.0)

    def test_t1_threshold(self, canonical):
        assert t1_threshold(canonical, 1.0, 24.0, 0.0) == pytest.approx(11.0)
        assert t1_threshold(Schedule(2.0, 1.0, 1.0, 1.0), 0.5, 4.0, 0.0) == pytest.approx(7.0)
        assert t1_threshold(canonical, 1.0, 24.0, 50.0) == 50.0
        with pytest.raises(ValueError):
            t1_threshold(canonical, 0.0, 24.0, 0.0)


class TestLyapunovChecks:
    def test_fej1_holds_for_the_certificate(self, p1, p1_short, canonical):
        report = check_lemma_fej1(p1_short, p1.certificate, p1.instance, canonical)
        assert report.passed
        assert report.checked.all()

    def test_fej1_holds_for_sampled_graph_points(self, p1, p1_short, canonical, rng):
        for gp in sample_graph_points(p1, rng, 8):
            assert check_lemma_fej1(p1_short, gp, p1.instance, canonical).passed

    def test_fej1_on_l1_problem(self, p3, p3_short, canonical):
        assert check_lemma_fej1(p3_short, p3.certificate, p3.instance, canonical).passed

    def test_fej4_holds_after_t1(self, p1, p1_short, canonical):
        report = check_lemma_fej4(p1_short, p1.certificate, p1.instance, canonical)
        constants = choose_lemma_constants(canonical, 1.0)
        assert report.passed
        assert report.t1_used == pytest.approx(t1_threshold(canonical, 1.0, constants.b, 0.0))
        assert np.array_equal(report.checked, p1_short.times >= report.t1_used)
        assert report.to_dict()["nodes_checked"] == int(np.count_nonzero(report.checked))

    def test_fej4_with_explicit_constants(self, p3, p3_short, canonical):
        a, b = constants_from_eps(0.05)
        constants = LemmaConstants(eps0=0.05, a=a, b=b, t0=0.0, alpha=1.5)
        report = check_lemma_fej4(p3_short, p3.certificate, p3.instance, canonical, constants=constants, t1=100.0)
        assert report.passed
        assert report.eps0_used == 0.05
        assert report.t1_used == 100.0

    def test_strong_monotone_inequality(self, p1, p1_short, canonical):
        report = check_strong_monotone(p1_short, p1.certificate, p1.instance, canonical)
        assert report.passed
        assert report.t1_used == pytest.approx(0.5)

    def test_negated_rhs_is_caught(self, p1, p1_short, canonical):
        report = check_lemma_fej1(p1_short, p1.certificate, p1.instance, canonical, mutation="negate_rhs")
        assert not report.passed
        assert report.violation_fraction > 0.1
        assert report.max_violation > 0
        assert report.to_dict()["mutation"] == "negate_rhs"

    def test_negated_rhs_is_caught_by_fej4(self, p1, p1_short, canonical):
        report = check_lemma_fej4(p1_short, p1.certificate, p1.instance, canonical, mutation="negate_rhs")
        assert not report.passed

    def test_unknown_mutation(self, p1, p1_short, canonical):
        with pytest.raises(ValueError):
            check_lemma_fej1(p1_short, p1.certificate, p1.instance, canonical, mutation="drop_gap")

    def test_strong_check_premises(self, p1, p1_short, p2, canonical, rng):
        with pytest.raises(LemmaPremiseError):
            check_strong_monotone(p1_short, p2.certificate, p2.instance, canonical)
        gp = p1.certificate
        shifted = GraphPoint(gp.z, gp.v, gp.p, np.ones(4))
        with pytest.raises(LemmaPremiseError):
            check_strong_monotone(p1_short, shifted, p1.instance, canonical)

    def test_fej4_premise(self, p1, p1_short):
        with pytest.raises(LemmaPremiseError):
            check_lemma_fej4(p1_short, p1.certificate, p1.instance, Schedule(1.0, 1.0, 1.0, 2.0))


class TestLemmaChecksOnTheLine:
    def test_line_certificate_is_a_graph_point(self, p2, rng):
        gp = line_certificate(p2)
        pr = p2.instance
        assert validate_graph_point(gp, pr.A, pr.D, pr.C, rng) <= 1e-10
        assert np.array_equal(gp.w, np.zeros(2))
        assert np.linalg.norm(gp.p) == 1.0

    @pytest.mark.parametrize("certificate", ["builtin", "line"])
    def test_both_checks_hold(self, p2, p2_short, canonical, certificate):
        gp = p2.certificate if certificate == "builtin" else line_certificate(p2)
        assert check_lemma_fej1(p2_short, gp, p2.instance, canonical).passed
        assert check_lemma_fej4(p2_short, gp, p2.instance, canonical).passed

    def test_fej4_with_chosen_constants_on_l1_problem(self, p3, p3_short, canonical):
        report = check_lemma_fej4(p3_short, p3.certificate, p3.instance, canonical)
        constants = choose_lemma_constants(canonical, p3.instance.mu)
        assert report.passed
        assert report.eps0_used == constants.eps0
        assert report.t1_used == pytest.approx(t1_threshold(canonical, p3.instance.eta, constants.b, constants.t0))


def solved_case(request, name):
    """Trajectory plus a solution certificate with p != 0, so the right-hand side stays positive."""
    named = request.getfixturevalue(name)
    if name == "p2":
        return named, request.getfixturevalue("p2_short"), line_certificate(named)
    return named, request.getfixturevalue(f"{name}_short"), named.certificate


class TestMutationPower:
    @pytest.mark.parametrize("name", ["p1", "p2", "p3"])
    @pytest.mark.parametrize("check", [check_lemma_fej1, check_lemma_fej4])
    def test_negated_rhs(self, request, canonical, name, check):
        named, tr, gp = solved_case(request, name)
        assert np.linalg.norm(gp.p) > 0
        report = check(tr, gp, named.instance, canonical, mutation="negate_rhs")
        assert report.violation_fraction >= 0.5

    def test_penalty_flip_moves_rhs_by_the_penalty_term(self, p1, p1_short, canonical):
        # the flip only shifts the bound by 6 lambda^2 beta^2 ||Bx||^2, which vanishes as x approaches C
        plain = check_lemma_fej1(p1_short, p1.certificate, p1.instance, canonical)
        flipped = check_lemma_fej1(p1_short, p1.certificate, p1.instance, canonical, mutation="negate_penalty_term")
        lam, beta = canonical.lam(p1_short.times), canonical.beta(p1_short.times)
        term = 3.0 * lam**2 * beta**2 * p1_short.penalty_norms**2
        np.testing.assert_allclose(plain.rhs_values - flipped.rhs_values, 2.0 * term, rtol=1e-9, atol=1e-14)
        np.testing.assert_array_equal(plain.lhs_values, flipped.lhs_values)

    def test_penalty_flip_is_inert_without_a_penalty(self, p0, canonical):
        tr = integrate(p0.instance, canonical, p0.default_x0, 20.0, IntegratorOptions(record_every=10))
        plain = check_lemma_fej1(tr, p0.certificate, p0.instance, canonical)
        flipped = check_lemma_fej1(tr, p0.certificate, p0.instance, canonical, mutation="negate_penalty_term")
        np.testing.assert_array_equal(plain.rhs_values, flipped.rhs_values)


class TestConvergenceReport:
    def test_strongly_monotone_problem(self, p1, p1_short, canonical, rng):
        points = sample_graph_points(p1, rng, 32)
        report = convergence_report(p1_short, p1.solution, canonical, strong_expected=True, graph_points=points)
        assert report.final_dist_to_solution < 0.05
        assert report.strong_dist_final == report.final_dist_to_solution
        assert report.t_end == 200.0
        assert set(report.integral_tails) == {"xdot_sq", "lambda_beta_B_sq", "lambda_beta_B_dot", "lambda_dist_sq"}
        for name in ("xdot_sq", "lambda_beta_B_sq", "lambda_dist_sq"):
            assert 0.0 <= report.integral_tails[name] <= 1.0
        assert report.ergodic_characterization_gap is not None

    def test_solution_set(self, p2, canonical):
        tr = integrate(p2.instance, canonical, p2.default_x0, 200.0, IntegratorOptions(record_every=10))
        report = convergence_report(tr, p2.solution, canonical)
        assert report.strong_dist_final is None
        assert report.final_dist_to_solution < 0.05
        assert "lambda_dist_sq" not in report.integral_tails

    def test_too_short(self, p1, canonical):
        tr = integrate(p1.instance, canonical, np.zeros(4), 10.0, IntegratorOptions(record_every=10))
        with pytest.raises(TrajectoryTooShortError):
            convergence_report(tr, p1.solution, canonical)

    def test_derivative_identity_needs_nodes(self, p1, p1_short, rng):
        short = Trajectory.from_samples([0.0, 1.0], np.zeros((2, 4)), [1.0, 0.5])
        with pytest.raises(TrajectoryTooShortError):
            derivative_identity_errors(short, p1.solution_point, rng)


def test_report_is_strict_json(p1, p1_short):
    s = Schedule(1.0, 1.0, 1.0, 2.0)
    fej1 = check_lemma_fej1(p1_short, p1.certificate, p1.instance, Schedule.canonical())
    report = build_report([fej1], hypotheses=classify(s, 1.0), extra={"nodes": np.int64(3), "flag": np.bool_(True)})
    text = json.dumps(report, allow_nan=False)
    data = json.loads(text)
    assert data["hypotheses"]["product_limsup"] == "inf"
    assert data["lemma_checks"]["fej1"]["violation_fraction"] == 0.0
    assert data["nodes"] == 3 and data["flag"] is True
