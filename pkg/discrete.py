"""
Discrete forward-backward penalty scheme

    x_{n+1} = x_n + h_n (J_{lambda_n A}(x_n - lambda_n D x_n - lambda_n beta_n B x_n) - x_n)

and its cross-check against the h = 1 Euler discretization of the dynamics.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from dynamics import IntegratorOptions, integrate, lipschitz_bound, rhs_from_params
from logging_setup import get_logger
from operators import as_point
from settings import get_tolerances
from utils import format_real

logger = get_logger(__name__)


class DiscreteError(ValueError):
    pass


@dataclass
class DiscreteRun:
    iterates: np.ndarray  # (N+1, n)
    lambda_seq: np.ndarray  # (N,)
    beta_seq: np.ndarray
    h_seq: np.ndarray
    residuals: np.ndarray  # ||x_{n+1} - x_n|| / h_n

    @property
    def steps(self):
        return len(self.h_seq)

    @property
    def final(self):
        return self.iterates[-1]


def _positive_prefix(values, N, name):
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < N:
        raise DiscreteError(f"{name} needs at least {N} entries, got {values.size}")
    values = values[:N]
    if not np.all(values > 0) or not np.all(np.isfinite(values)):
        raise DiscreteError(f"{name} entries must be finite and positive")
    return values


def iterate(pr, lambda_seq, beta_seq, h_seq, x0, N):
    """
    Run N steps of the scheme.

    Raises:
        DiscreteError: bad sequences, N < 1 or a non-finite iterate
    """
    if int(N) != N or N < 1:
        raise DiscreteError(f"N must be an integer >= 1, got {N}")
    N = int(N)
    lam = _positive_prefix(lambda_seq, N, "lambda_seq")
    beta = _positive_prefix(beta_seq, N, "beta_seq")
    h = _positive_prefix(h_seq, N, "h_seq")
    x = as_point(x0, pr.dim, "x0")

    iterates = np.empty((N + 1, pr.dim))
    residuals = np.empty(N)
    iterates[0] = x
    for n in range(N):
        x_next = x + h[n] * rhs_from_params(pr, float(lam[n]), float(beta[n]), x)
        if not np.all(np.isfinite(x_next)):
            logger.error(f"Discrete scheme produced a non-finite iterate at n={n + 1}")
            raise DiscreteError(f"non-finite iterate at n={n + 1}")
        residuals[n] = np.linalg.norm(x_next - x) / h[n]
        iterates[n + 1] = x_next
        x = x_next
    return DiscreteRun(iterates, lam, beta, h, residuals)


def sample_schedule(s, N, offset=0):
    """lambda_n = lambda(n + offset), beta_n = beta(n + offset) for n = 0..N-1."""
    if N < 1:
        raise DiscreteError(f"N must be >= 1, got {N}")
    lam = np.array([float(s.lam(float(n + offset))) for n in range(N)])
    beta = np.array([float(s.beta(float(n + offset))) for n in range(N)])
    return lam, beta


def step_sequence(pr, s, N, use_h1=True):
    """h_n = 1, or h_n = min(1, 1 / L_f(n)) for the relaxed scheme."""
    if use_h1:
        return np.ones(N)
    return np.array([min(1.0, 1.0 / lipschitz_bound(pr, s, float(n))) for n in range(N)])


def run_discrete(pr, s, x0, N, use_h1=True):
    lam, beta = sample_schedule(s, N)
    return iterate(pr, lam, beta, step_sequence(pr, s, N, use_h1), x0, N)


@dataclass
class DiscreteComparison:
    N: int
    max_discrepancy: float
    per_step: np.ndarray
    tolerance: float
    sample_offset: int = 0

    @property
    def passed(self):
        return self.max_discrepancy <= self.tolerance

    def to_dict(self):
        return {
            "N": self.N,
            "max_discrepancy": float(self.max_discrepancy),
            "tolerance": self.tolerance,
            "passed": self.passed,
            "sample_offset": self.sample_offset,
        }


def compare_discrete(pr, s, x0, N, sample_offset=0):
    """
    Run the unit-step Euler integration and the discrete scheme side by side.

    A nonzero `sample_offset` shifts the discrete schedule sampling and is
    only used to show that the comparison detects a mismatch.
    """
    if int(N) != N or N < 1:
        raise DiscreteError(f"N must be an integer >= 1, got {N}")
    N = int(N)
    euler = integrate(
        pr,
        s,
        x0,
        float(N),
        IntegratorOptions(method="euler", h_max=1.0, safety=1.0, record_every=1, force_unit_step=True),
    )
    lam, beta = sample_schedule(s, N, offset=sample_offset)
    run = iterate(pr, lam, beta, np.ones(N), x0, N)

    per_step = np.max(np.abs(euler.states - run.iterates), axis=1)
    result = DiscreteComparison(
        N=N,
        max_discrepancy=float(np.max(per_step)),
        per_step=per_step,
        tolerance=get_tolerances().euler_identity * N,
        sample_offset=sample_offset,
    )
    logger.info(f"Euler/discrete comparison over N={N}: max discrepancy {result.max_discrepancy:.3e}")
    return result


def write_discrete_csv(run, path):
    """Rows n = 0..N; the final iterate has no outgoing step, so its step fields stay empty."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    dim = run.iterates.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["n"] + [f"x_{i}" for i in range(dim)] + ["residual", "lambda_n", "beta_n"])
        for n, x in enumerate(run.iterates):
            row = [str(n)] + [format_real(v) for v in x]
            if n < run.steps:
                row += [format_real(run.residuals[n]), format_real(run.lambda_seq[n]), format_real(run.beta_seq[n])]
            else:
                row += ["", "", ""]
            writer.writerow(row)
    logger.info(f"Wrote {run.steps + 1} discrete rows to {path}")
