"""
Power-law parameter schedules lambda(t) = c_lambda (t+1)^-p and
beta(t) = c_beta (1+t)^q, with analytic hypothesis classification and
quadrature cross-checks.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import List, Union

import numpy as np
from scipy import integrate

from logging_setup import get_logger
from utils import json_real

logger = get_logger(__name__)

# decade boundaries of the quadrature cross-check
CHECK_TIMES = (1e3, 1e4, 1e5, 1e6)
# ratio of consecutive decade increments at or above which an integral is called divergent
DIVERGENCE_RATIO = 0.8
QUAD_EPSREL = 1e-8


class ScheduleError(ValueError):
    pass


class HypothesisError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    c_lambda: float = 1.0
    p: float = 1.0
    c_beta: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        for name in ("c_lambda", "p", "c_beta", "q"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ScheduleError(f"schedule.{name} must be a finite real, got {value!r}")
        if self.c_lambda <= 0 or self.c_beta <= 0:
            raise ScheduleError("schedule constants must be positive")
        if self.p <= 0:
            raise ScheduleError(f"lambda exponent p must be > 0 (lambda must vanish), got {self.p}")
        if self.q < 0:
            raise ScheduleError(f"beta exponent q must be >= 0, got {self.q}")

    @classmethod
    def canonical(cls):
        """lambda(t) = 1/(t+1), beta(t) = 1+t."""
        return cls(1.0, 1.0, 1.0, 1.0)

    def lam(self, t):
        """Vectorized lambda(t); no sign check."""
        return self.c_lambda * np.power(np.add(t, 1.0), -self.p)

    def beta(self, t):
        return self.c_beta * np.power(np.add(t, 1.0), self.q)

    def to_dict(self):
        return {
            "lambda": {"c": self.c_lambda, "p": self.p},
            "beta": {"c": self.c_beta, "q": self.q},
        }

    @classmethod
    def from_dict(cls, data):
        try:
            lam, beta = data["lambda"], data["beta"]
            return cls(float(lam["c"]), float(lam["p"]), float(beta["c"]), float(beta["q"]))
        except (KeyError, TypeError) as e:
            raise ScheduleError(f"schedule needs lambda.c, lambda.p, beta.c, beta.q: missing {e}")


def _check_time(t):
    if not t >= 0:
        raise ScheduleError(f"schedule evaluated at negative or invalid time {t}")


def eval_lambda(s, t):
    _check_time(t)
    return float(s.lam(float(t)))


def eval_beta(s, t):
    _check_time(t)
    return float(s.beta(float(t)))


@dataclass
class NumericCheck:
    name: str
    exponent: float
    value: float
    analytic_convergent: bool
    numeric_convergent: bool
    growth_ratio: float
    tail_fraction: float

    @property
    def consistent(self):
        return self.analytic_convergent == self.numeric_convergent


@dataclass
class HypothesisReport:
    h3_l2: bool
    h3_not_l1: bool
    product_limsup: float
    product_ok: bool
    hfitz_distsq_ok: Union[bool, str]
    mu: float
    criteria: dict = field(default_factory=dict)
    numeric_cross_checks: List[NumericCheck] = field(default_factory=list)

    @property
    def liminf_lambda_zero(self):
        # holds for every admissible power law (p > 0)
        return True

    @property
    def hfitz_unverified(self):
        return self.hfitz_distsq_ok == "unverified"

    @property
    def numerics_consistent(self):
        return all(c.consistent for c in self.numeric_cross_checks)

    def failures(self):
        messages = []
        if not self.h3_l2:
            messages.append("H3 violated: λ ∉ L²")
        if not self.h3_not_l1:
            messages.append("H3 violated: λ ∈ L¹")
        if not self.product_ok:
            messages.append(
                f"limsup λβ = {self.product_limsup:g} is not below 2μ = {2 * self.mu:g}"
            )
        if self.hfitz_distsq_ok is False:
            messages.append("H_fitz violated: ∫ λ/β diverges")
        return messages

    @property
    def all_ok(self):
        return not self.failures()

    def to_dict(self):
        return {
            "h1": True,
            "h3_l2": self.h3_l2,
            "h3_not_l1": self.h3_not_l1,
            "liminf_lambda_zero": self.liminf_lambda_zero,
            "product_limsup": json_real(self.product_limsup),
            "product_ok": self.product_ok,
            "hfitz_distsq_ok": self.hfitz_distsq_ok,
            "mu": self.mu,
            "criteria": self.criteria,
            "failures": self.failures(),
            "numeric_cross_checks": [
                {**asdict(c), "growth_ratio": json_real(c.growth_ratio), "consistent": c.consistent}
                for c in self.numeric_cross_checks
            ],
        }


def _decade_integrals(integrand):
    """∫ integrand(t) dt over [0, 1e3] and each following decade of CHECK_TIMES, in s = ln(1+t)."""

    def in_log_time(s):
        t = math.expm1(s)
        return integrand(t) * math.exp(s)

    bounds = [0.0] + [math.log1p(T) for T in CHECK_TIMES]
    pieces = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        piece, _ = integrate.quad(in_log_time, lo, hi, epsrel=QUAD_EPSREL, limit=200)
        pieces.append(piece)
    return pieces


def _numeric_check(name, exponent, integrand):
    pieces = _decade_integrals(integrand)
    total = math.fsum(pieces)
    last_decade, previous_decade = pieces[-1], pieces[-2]
    growth_ratio = last_decade / previous_decade if previous_decade > 0 else math.inf
    return NumericCheck(
        name=name,
        exponent=exponent,
        value=total,
        analytic_convergent=exponent > 1.0,
        numeric_convergent=growth_ratio < DIVERGENCE_RATIO,
        growth_ratio=growth_ratio,
        tail_fraction=last_decade / total if total > 0 else 0.0,
    )


def classify(s, mu, penalty_kind="dist_sq_gradient", numeric=True):
    """
    Classify a power-law schedule against the convergence hypotheses.

    Args:
        s (Schedule): the schedule
        mu (float): cocoercivity modulus of the penalty operator
        penalty_kind (str): only "dist_sq_gradient" admits the H_fitz check
        numeric (bool): also run the quadrature cross-checks

    Returns:
        HypothesisReport
    """
    if not mu > 0:
        raise HypothesisError(f"mu must be positive, got {mu}")

    if s.q < s.p:
        limsup = 0.0
    elif s.q == s.p:
        limsup = s.c_lambda * s.c_beta
    else:
        limsup = math.inf

    if penalty_kind == "dist_sq_gradient":
        hfitz = s.p + s.q > 1.0
    else:
        hfitz = "unverified"

    report = HypothesisReport(
        h3_l2=s.p > 0.5,
        h3_not_l1=s.p <= 1.0,
        product_limsup=limsup,
        product_ok=limsup < 2.0 * mu,
        hfitz_distsq_ok=hfitz,
        mu=float(mu),
        criteria={
            "h3_l2": "p > 1/2",
            "h3_not_l1": "p <= 1",
            "product_limsup": "0 if q < p, c_lambda*c_beta if q = p, inf if q > p",
            "product_ok": "product_limsup < 2*mu",
            "hfitz_distsq_ok": "p + q > 1 (dist_sq_gradient penalties only)",
        },
    )

    if numeric:
        report.numeric_cross_checks = [
            _numeric_check("lambda_sq", 2.0 * s.p, lambda t: float(s.lam(t)) ** 2),
            _numeric_check("lambda", s.p, lambda t: float(s.lam(t))),
            _numeric_check("lambda_over_beta", s.p + s.q, lambda t: float(s.lam(t) / s.beta(t))),
        ]
        for check in report.numeric_cross_checks:
            if not check.consistent:
                logger.warning(
                    f"Quadrature verdict for {check.name} disagrees with the analytic one "
                    f"(growth ratio {check.growth_ratio:.4g}, exponent {check.exponent})"
                )
    return report


def lambda_beta_limsup_bound_time(s, mu):
    """Time after which lambda*beta stays below (limsup + 2 mu)/2."""
    report = classify(s, mu, numeric=False)
    if not report.product_ok:
        raise HypothesisError(
            f"limsup λβ = {report.product_limsup:g} is not below 2μ = {2 * mu:g}"
        )
    if s.q == s.p:
        return 0.0
    theta = (report.product_limsup + 2.0 * mu) / 2.0
    product = s.c_lambda * s.c_beta
    return max(0.0, (product / theta) ** (1.0 / (s.p - s.q)) - 1.0)


def lambda_level_time(s, level, t_start=0.0):
    """Smallest t >= t_start with lambda(t) <= level."""
    if not level > 0:
        raise ScheduleError(f"level must be positive, got {level}")
    crossing = (s.c_lambda / level) ** (1.0 / s.p) - 1.0
    return max(float(t_start), crossing, 0.0)
