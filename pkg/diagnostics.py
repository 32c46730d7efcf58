"""
Pointwise verification of the Lyapunov inequalities along computed
trajectories, and the convergence report (integral tails, distance
oscillation, ergodic and strong limits).

Derivatives of ||x - z||^2 are taken exactly as 2 <x - z, f(t, x)> from the
recorded right-hand side, never by finite differences.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy import optimize

from dynamics import ergodic_average
from logging_setup import get_logger
from operators import ConvexSet, _forward, _project, characterization_gap, fitzpatrick_gap_bound
from schedules import classify, lambda_beta_limsup_bound_time, lambda_level_time
from settings import get_tolerances
from utils import json_real

logger = get_logger(__name__)

ROOT_XTOL = 1e-15
MUTATIONS = (None, "negate_penalty_term", "negate_rhs")
TAIL_INTEGRALS = ("xdot_sq", "lambda_beta_B_sq", "lambda_beta_B_dot", "lambda_dist_sq")


class LemmaPremiseError(ValueError):
    pass


class TrajectoryTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class LemmaConstants:
    eps0: float
    a: float
    b: float
    t0: float
    alpha: float


def constants_from_eps(eps):
    """a = eps/(2(1+eps)), b = 4(1+eps)/eps."""
    return eps / (2.0 * (1.0 + eps)), 4.0 * (1.0 + eps) / eps


def choose_lemma_constants(s, mu):
    """
    Pick alpha strictly between limsup(lambda*beta) and 2 mu, then eps0 as the
    midpoint of the feasible interval of

        g(eps) = (1+eps) alpha - 2 mu/(1+eps) + eps/(1+eps) < 0

    within (0, 1].

    Raises:
        LemmaPremiseError: limsup lambda*beta is not below 2 mu
    """
    report = classify(s, mu, numeric=False)
    if not report.product_ok:
        raise LemmaPremiseError(
            f"limsup λβ = {report.product_limsup:g} must be below 2μ = {2 * mu:g}"
        )
    alpha = (report.product_limsup + 2.0 * mu) / 2.0

    def g(eps):
        return (1.0 + eps) * alpha - 2.0 * mu / (1.0 + eps) + eps / (1.0 + eps)

    eps0 = None
    for hi in (1.0, 1e-3):
        # g is increasing with g(0) = alpha - 2 mu < 0
        upper = hi if g(hi) < 0 else optimize.brentq(g, 0.0, hi, xtol=ROOT_XTOL)
        candidate = 0.5 * upper
        if candidate > 0 and g(candidate) < 0:
            eps0 = candidate
            break
        logger.warning(f"No feasible eps0 found in (0, {hi}]")
    if eps0 is None:
        raise LemmaPremiseError("no feasible eps0 for the lemma constants")

    a, b = constants_from_eps(eps0)
    t0 = lambda_beta_limsup_bound_time(s, mu)
    return LemmaConstants(eps0=eps0, a=a, b=b, t0=t0, alpha=alpha)


def t1_threshold(s, eta, b, t0):
    """Smallest t >= t0 with b lambda(t)^2 - 2 eta lambda(t) <= 0."""
    if not (eta > 0 and b > 0):
        raise ValueError("eta and b must be positive")
    return lambda_level_time(s, 2.0 * eta / b, t0)


@dataclass
class LyapunovReport:
    lemma_id: str
    grid_times: np.ndarray
    lhs_values: np.ndarray
    rhs_values: np.ndarray
    checked: np.ndarray  # nodes entering the statistic
    violation_fraction: float
    max_violation: float
    t1_used: float = 0.0
    a_used: Optional[float] = None
    b_used: Optional[float] = None
    eps0_used: Optional[float] = None
    mutation: Optional[str] = None

    @property
    def passed(self):
        return self.violation_fraction == 0.0

    def to_dict(self):
        return {
            "lemma_id": self.lemma_id,
            "violation_fraction": self.violation_fraction,
            "max_violation": self.max_violation,
            "t1": self.t1_used,
            "a": self.a_used,
            "b": self.b_used,
            "eps0": self.eps0_used,
            "nodes_checked": int(np.count_nonzero(self.checked)),
            "mutation": self.mutation,
        }


def _node_data(tr, gp, pr, s):
    lam = s.lam(tr.times)
    beta = s.beta(tr.times)
    x = tr.states
    f = tr.derivs
    z = np.asarray(gp.z, dtype=float)
    dx = np.array([_forward(pr.D, xi) for xi in x])
    bx = np.array([_forward(pr.B, xi) for xi in x])
    dz = _forward(pr.D, z)
    return lam, beta, x, f, z, dx, bx, dz


def _summarize(lemma_id, tr, lhs, rhs, checked, **extra):
    tol = get_tolerances().lyapunov_relative
    excess = lhs - rhs
    violated = (excess > tol * (1.0 + np.abs(rhs))) & checked
    n_checked = int(np.count_nonzero(checked))
    if n_checked == 0:
        logger.warning(f"{lemma_id}: no nodes inside the checked time range")
    fraction = float(np.count_nonzero(violated)) / n_checked if n_checked else 0.0
    worst = float(np.max(excess[checked])) if n_checked else 0.0
    report = LyapunovReport(
        lemma_id=lemma_id,
        grid_times=tr.times,
        lhs_values=lhs,
        rhs_values=rhs,
        checked=checked,
        violation_fraction=fraction,
        max_violation=max(worst, 0.0),
        **extra,
    )
    logger.info(f"{lemma_id}: violation fraction {fraction:.4g} over {n_checked} nodes")
    return report


def _check_mutation(mutation):
    if mutation not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutation!r}; expected one of {MUTATIONS}")


def check_lemma_fej1(tr, gp, pr, s, mutation=None):
    """
    At every node:

        2<x - z, x'> + lambda (2 eta - 3 lambda) ||Dx - Dz||^2
            <= 2 lambda beta gap(p, beta) + 3 lambda^2 beta^2 ||Bx||^2
               + 3 lambda^2 ||Dz + v||^2 + 2 lambda <z - x, w>

    with the gap term replaced by its upper bound ||p||^2 / (2 beta^2).
    """
    _check_mutation(mutation)
    lam, beta, x, f, z, dx, bx, dz = _node_data(tr, gp, pr, s)
    offset = x - z

    lhs = 2.0 * np.einsum("ij,ij->i", offset, f) + lam * (2.0 * pr.eta - 3.0 * lam) * np.sum((dx - dz) ** 2, axis=1)
    gap = fitzpatrick_gap_bound(pr.B, gp.p, beta)
    penalty = 3.0 * lam**2 * beta**2 * np.sum(bx**2, axis=1)
    if mutation == "negate_penalty_term":
        penalty = -penalty
    rhs = (
        2.0 * lam * beta * gap
        + penalty
        + 3.0 * lam**2 * float(np.sum((dz + gp.v) ** 2))
        - 2.0 * lam * (offset @ gp.w)
    )
    if mutation == "negate_rhs":
        rhs = -rhs
    return _summarize("fej1", tr, lhs, rhs, np.ones(len(tr), dtype=bool), mutation=mutation)


def check_lemma_fej4(tr, gp, pr, s, constants=None, t1=None, mutation=None):
    """
    For t >= t1:

        2<x - z, x'> + a (||x'||^2 + lambda beta/2 <x - z, Bx> + lambda beta ||Bx||^2)
            <= (a lambda beta / 2) gap(4p/a, beta) + 2 lambda <z - x, w> + b lambda^2 ||Dz + v||^2

    Nodes before t1 are evaluated but excluded from the statistic.
    """
    _check_mutation(mutation)
    constants = constants or choose_lemma_constants(s, pr.mu)
    if t1 is None:
        t1 = t1_threshold(s, pr.eta, constants.b, constants.t0)
    a, b = constants.a, constants.b
    lam, beta, x, f, z, dx, bx, dz = _node_data(tr, gp, pr, s)
    offset = x - z

    penalty = lam * beta * np.sum(bx**2, axis=1)
    if mutation == "negate_penalty_term":
        penalty = -penalty
    lhs = 2.0 * np.einsum("ij,ij->i", offset, f) + a * (
        np.sum(f**2, axis=1) + 0.5 * lam * beta * np.einsum("ij,ij->i", offset, bx) + penalty
    )
    gap = fitzpatrick_gap_bound(pr.B, 4.0 * np.asarray(gp.p) / a, beta)
    rhs = 0.5 * a * lam * beta * gap - 2.0 * lam * (offset @ gp.w) + b * lam**2 * float(np.sum((dz + gp.v) ** 2))
    if mutation == "negate_rhs":
        rhs = -rhs
    return _summarize(
        "fej4",
        tr,
        lhs,
        rhs,
        tr.times >= t1,
        t1_used=float(t1),
        a_used=a,
        b_used=b,
        eps0_used=constants.eps0,
        mutation=mutation,
    )


def check_strong_monotone(tr, gp, pr, s, mutation=None):
    """
    For a gamma-strongly monotone A and a solution certificate (w = 0), where
    lambda <= 2 eta / 3:

        gamma lambda ||x - z||^2 + 2<x - z, x'>
            <= 2 gamma lambda ||x'||^2 + 2 lambda beta gap(p, beta)
               + 3 lambda^2 beta^2 ||Bx||^2 + 3 lambda^2 ||Dz + v||^2
    """
    _check_mutation(mutation)
    gamma = pr.gamma
    if gamma <= 0:
        raise LemmaPremiseError("strong monotonicity check needs gamma > 0")
    if np.any(np.asarray(gp.w) != 0):
        raise LemmaPremiseError("strong monotonicity check needs a solution certificate with w = 0")
    t2 = lambda_level_time(s, 2.0 * pr.eta / 3.0)
    lam, beta, x, f, z, dx, bx, dz = _node_data(tr, gp, pr, s)
    offset = x - z

    lhs = gamma * lam * np.sum(offset**2, axis=1) + 2.0 * np.einsum("ij,ij->i", offset, f)
    penalty = 3.0 * lam**2 * beta**2 * np.sum(bx**2, axis=1)
    if mutation == "negate_penalty_term":
        penalty = -penalty
    rhs = (
        2.0 * gamma * lam * np.sum(f**2, axis=1)
        + 2.0 * lam * beta * fitzpatrick_gap_bound(pr.B, gp.p, beta)
        + penalty
        + 3.0 * lam**2 * float(np.sum((dz + gp.v) ** 2))
    )
    if mutation == "negate_rhs":
        rhs = -rhs
    return _summarize("strong_monotone", tr, lhs, rhs, tr.times >= t2, t1_used=float(t2), mutation=mutation)


def derivative_identity_errors(tr, z, rng, samples=100):
    """
    Compare 2<x - z, x'> against the central difference of ||x - z||^2 at
    random interior nodes.

    Returns:
        tuple: (node indices, absolute errors, local squared spacings)
    """
    if len(tr) < 3:
        raise TrajectoryTooShortError("need at least three nodes")
    z = np.asarray(z, dtype=float)
    idx = rng.choice(np.arange(1, len(tr) - 1), size=min(samples, len(tr) - 2), replace=False)
    sq = np.sum((tr.states - z) ** 2, axis=1)
    central = (sq[idx + 1] - sq[idx - 1]) / (tr.times[idx + 1] - tr.times[idx - 1])
    exact = 2.0 * np.einsum("ij,ij->i", tr.states[idx] - z, tr.derivs[idx])
    spacing = np.maximum(tr.times[idx + 1] - tr.times[idx], tr.times[idx] - tr.times[idx - 1])
    return idx, np.abs(central - exact), spacing**2


@dataclass
class ConvergenceReport:
    dist_tail_oscillation: float
    integral_tails: Dict[str, float]
    ergodic_dist_to_solution: float
    strong_dist_final: Optional[float] = None
    final_dist_to_solution: float = 0.0
    ergodic_characterization_gap: Optional[float] = None
    integral_totals: Dict[str, float] = field(default_factory=dict)
    t_end: float = 0.0

    def to_dict(self):
        return {
            "dist_tail_oscillation": self.dist_tail_oscillation,
            "integral_tails": self.integral_tails,
            "integral_totals": {k: json_real(v) for k, v in self.integral_totals.items()},
            "ergodic_dist": self.ergodic_dist_to_solution,
            "strong_dist": self.strong_dist_final,
            "final_dist": self.final_dist_to_solution,
            "ergodic_characterization_gap": self.ergodic_characterization_gap,
            "t_end": self.t_end,
        }


def _distance(solution, y):
    if isinstance(solution, ConvexSet):
        return float(np.linalg.norm(y - _project(solution, y)))
    return float(np.linalg.norm(y - np.asarray(solution, dtype=float)))


def convergence_report(tr, solution, s, strong_expected=False, graph_points=None):
    """
    Summarize convergence over the last decade [t_end/10, t_end].

    Args:
        tr (Trajectory): must span at least two decades of time
        solution: the solution point, or a ConvexSet when the solution set is known
        s (Schedule): schedule the trajectory was computed with
        strong_expected (bool): report the final distance as the strong-convergence figure
        graph_points (list[GraphPoint]): optional sample of the graph of A + D + N_C;
            enables the zero-set characterization gap at the final ergodic average

    Raises:
        TrajectoryTooShortError: fewer than two decades or too few nodes in the last one
    """
    positive = tr.times[tr.times > 0]
    t_end = tr.t_end
    tail_start = t_end / 10.0
    if positive.size == 0 or t_end < 100.0 * positive[0] or np.count_nonzero(tr.times >= tail_start) < 2:
        raise TrajectoryTooShortError(
            f"trajectory to t={t_end:g} does not span two decades with nodes in the last one"
        )

    if tr.reference_z is not None:
        z = tr.reference_z
    elif isinstance(solution, ConvexSet):
        z = _project(solution, tr.final_state)
    else:
        z = np.asarray(solution, dtype=float)
    tail = tr.times >= tail_start
    dist = tr.dist_to(z)[tail]

    tails, totals = {}, {}
    for name in TAIL_INTEGRALS:
        values = tr.running_integrals.get(name)
        if values is None:
            continue
        total = float(values[-1])
        before = float(np.interp(tail_start, tr.times, values))
        totals[name] = total
        tails[name] = abs(total - before) / abs(total) if total != 0 else 0.0

    average = ergodic_average(tr)[-1]
    char_gap = characterization_gap(average, graph_points) if graph_points else None
    final_dist = _distance(solution, tr.final_state)

    report = ConvergenceReport(
        dist_tail_oscillation=float(np.max(dist) - np.min(dist)),
        integral_tails=tails,
        ergodic_dist_to_solution=_distance(solution, average),
        strong_dist_final=final_dist if strong_expected else None,
        final_dist_to_solution=final_dist,
        ergodic_characterization_gap=char_gap,
        integral_totals=totals,
        t_end=t_end,
    )
    logger.info(
        f"Convergence at t={t_end:g}: final dist {final_dist:.3e}, "
        f"ergodic dist {report.ergodic_dist_to_solution:.3e}, lambda={float(s.lam(t_end)):.3e}"
    )
    return report


def build_report(lemma_reports, convergence=None, hypotheses=None, extra=None):
    """JSON-ready report: lemma checks keyed by id, convergence, hypotheses."""
    report = {"lemma_checks": {r.lemma_id: r.to_dict() for r in lemma_reports}}
    if convergence is not None:
        report["convergence"] = convergence.to_dict()
    if hypotheses is not None:
        report["hypotheses"] = hypotheses.to_dict()
    if extra:
        report.update(extra)
    return _json_safe(report)


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.floating, float)):
        return json_real(value) if not math.isfinite(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value
