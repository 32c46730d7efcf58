"""
Integration of the penalty-term dynamical system

    x'(t) = J_{lambda(t) A}(x - lambda(t) D x - lambda(t) beta(t) B x) - x

with explicit one-step methods under Lipschitz-based step control.
"""

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from logging_setup import get_logger
from operators import (
    CertificateError,
    Cocoercive,
    DimensionMismatchError,
    GraphPoint,
    MaxMonotone,
    Penalty,
    _forward,
    _project,
    _resolvent,
    as_point,
    contains,
)
from settings import get_tolerances
from utils import format_real

logger = get_logger(__name__)

METHODS = ("euler", "rk4")
NONNEGATIVE_INTEGRALS = ("lambda", "xdot_sq", "lambda_beta_B_sq")


class IntegrationError(RuntimeError):
    def __init__(self, message, last_valid_time):
        super().__init__(f"{message} (last valid time {last_valid_time:.17g})")
        self.last_valid_time = last_valid_time


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Data (A, D, B) of 0 in Ax + Dx + N_C(x) with C = zer B."""

    A: MaxMonotone
    D: Cocoercive
    B: Penalty
    witness: Optional[np.ndarray] = None

    def __post_init__(self):
        dims = {self.A.dim, self.D.dim, self.B.dim}
        if len(dims) != 1:
            raise DimensionMismatchError(f"operators disagree on dimension: {sorted(dims)}")
        witness = self.witness
        if witness is None:
            witness = _project(self.C, np.zeros(self.dim))
        witness = as_point(witness, self.dim, "witness")
        if not contains(self.C, witness):
            raise CertificateError("witness point is not in the constraint set")
        witness = np.array(witness)
        witness.setflags(write=False)
        object.__setattr__(self, "witness", witness)

    @property
    def dim(self):
        return self.A.dim

    @property
    def eta(self):
        return self.D.modulus

    @property
    def mu(self):
        return self.B.modulus_mu

    @property
    def gamma(self):
        return self.A.gamma

    @property
    def C(self):
        return self.B.zero_set

    def to_dict(self):
        return {"A": self.A.to_dict(), "D": self.D.to_dict(), "B": self.B.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(
            MaxMonotone.from_dict(data["A"]),
            Cocoercive.from_dict(data["D"]),
            Penalty.from_dict(data["B"]),
        )


def rhs_from_params(pr, lam, beta, x):
    """Vector field at given schedule values; shared by the integrator and the discrete scheme."""
    argument = x - lam * _forward(pr.D, x) - (lam * beta) * _forward(pr.B, x)
    return _resolvent(pr.A, lam, argument) - x


def rhs(pr, s, t, x):
    if not t >= 0:
        raise ValueError(f"time must be >= 0, got {t}")
    x = as_point(x, pr.dim)
    return rhs_from_params(pr, float(s.lam(t)), float(s.beta(t)), x)


def lipschitz_bound(pr, s, t):
    """2 + lambda/eta + lambda*beta/mu, the Lipschitz constant of f(t, .)."""
    lam = float(s.lam(t))
    return 2.0 + lam / pr.eta + lam * float(s.beta(t)) / pr.mu


@dataclass
class IntegratorOptions:
    method: str = "rk4"
    h_max: float = 0.05
    safety: float = 0.25
    record_every: Optional[int] = None
    reference: Optional[GraphPoint] = None
    # bypasses step control with h = 1; only meaningful for euler
    force_unit_step: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.h_max > 0:
            raise ValueError("h_max must be positive")
        if not 0 < self.safety <= 1:
            raise ValueError("safety must be in (0, 1]")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    lambda_samples: np.ndarray
    beta_samples: np.ndarray
    penalty_norms: np.ndarray
    running_integrals: Dict[str, np.ndarray] = field(default_factory=dict)
    reference_z: Optional[np.ndarray] = None
    steps: int = 0
    max_step_lipschitz: float = 0.0

    def __len__(self):
        return len(self.times)

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def t_end(self):
        return float(self.times[-1])

    @property
    def final_state(self):
        return self.states[-1]

    def rhs_norms(self):
        return np.linalg.norm(self.derivs, axis=1)

    def dist_to(self, z):
        return np.linalg.norm(self.states - np.asarray(z), axis=1)

    @classmethod
    def from_samples(
        cls,
        times,
        states,
        lambda_samples,
        derivs=None,
        beta_samples=None,
        penalty_values=None,
        reference_z=None,
    ):
        """Build a trajectory from node samples; running integrals by the trapezoid rule over the nodes."""
        times = np.asarray(times, dtype=float)
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if states.shape[0] != times.size and times.size == states.shape[1]:
            states = states.T
        if states.shape[0] != times.size:
            raise TrajectoryError("states and times differ in length")
        if times.size and np.any(np.diff(times) <= 0):
            raise TrajectoryError("times must be strictly increasing")
        lam = np.asarray(lambda_samples, dtype=float)
        beta = np.ones_like(lam) if beta_samples is None else np.asarray(beta_samples, dtype=float)
        derivs = np.zeros_like(states) if derivs is None else np.asarray(derivs, dtype=float)
        bx = np.zeros_like(states) if penalty_values is None else np.asarray(penalty_values, dtype=float)

        integrands = {
            "lambda": lam,
            "lambda_x": lam[:, None] * states,
            "xdot_sq": np.sum(derivs**2, axis=1),
            "lambda_beta_B_sq": lam * beta * np.sum(bx**2, axis=1),
        }
        if reference_z is not None:
            reference_z = np.asarray(reference_z, dtype=float)
            offset = states - reference_z
            integrands["lambda_beta_B_dot"] = lam * beta * np.sum(bx * offset, axis=1)
            integrands["lambda_dist_sq"] = lam * np.sum(offset**2, axis=1)

        running = {}
        widths = np.diff(times)
        for name, values in integrands.items():
            acc = np.zeros_like(values)
            if values.ndim == 1:
                acc[1:] = np.cumsum(0.5 * widths * (values[:-1] + values[1:]))
            else:
                acc[1:] = np.cumsum(0.5 * widths[:, None] * (values[:-1] + values[1:]), axis=0)
            running[name] = acc

        return cls(
            times=times,
            states=states,
            derivs=derivs,
            lambda_samples=lam,
            beta_samples=beta,
            penalty_norms=np.linalg.norm(bx, axis=1),
            running_integrals=running,
            reference_z=reference_z,
            steps=max(times.size - 1, 0),
        )

    @classmethod
    def from_states(cls, pr, s, times, states, reference_z=None):
        """Rebuild exact derivatives and schedule samples for recorded states."""
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        lam = np.array([float(s.lam(t)) for t in times])
        beta = np.array([float(s.beta(t)) for t in times])
        derivs = np.array([rhs_from_params(pr, l, b, x) for l, b, x in zip(lam, beta, states)])
        bx = np.array([_forward(pr.B, x) for x in states])
        return cls.from_samples(times, states, lam, derivs, beta, bx, reference_z)


def _default_record_every(pr, s, opts, t_end):
    if opts.force_unit_step:
        estimate = t_end
    else:
        estimate = t_end / min(opts.h_max, opts.safety / lipschitz_bound(pr, s, 0.0))
    max_nodes = get_tolerances().max_nodes
    return max(1, int(math.ceil(estimate / (max_nodes - 1))))


def check_nonnegative(values, names, slack, t):
    """
    Raise when an integrand that is nonnegative along every exact trajectory
    drops below -slack.

    Raises:
        IntegrationError: with the offending integrand in the message
    """
    for name in names:
        if values[name] < -slack:
            logger.error(f"Integrand {name} = {values[name]:.3e} at t={t:g} is negative")
            raise IntegrationError(f"integrand {name} is negative ({values[name]:.3e})", t)


def integrate(pr, s, x0, t_end, opts=None):
    """
    Integrate the dynamical system on [0, t_end].

    Step h_k = min(h_max, safety / L_f(t_k), t_end - t_k), so h_k * L_f(t_k) <= safety.
    Running integrals are accumulated by the trapezoid rule at every step, before
    decimation to every `record_every`-th node.

    Args:
        pr (ProblemInstance): problem data
        s (Schedule): lambda/beta schedule
        x0: initial state
        t_end (float): final time (> 0)
        opts (IntegratorOptions): method, step control, decimation, reference graph point

    Returns:
        Trajectory: recorded nodes including t = 0 and t = t_end

    Raises:
        IntegrationError: the state became non-finite, or a running integral
            that is nonnegative for a reference point in C lost its sign
    """
    opts = opts or IntegratorOptions()
    x = as_point(x0, pr.dim, "x0")
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    t_end = float(t_end)
    record_every = opts.record_every or _default_record_every(pr, s, opts, t_end)
    z = None if opts.reference is None else np.asarray(opts.reference.z, dtype=float)
    if z is not None and z.size != pr.dim:
        raise DimensionMismatchError("reference point has the wrong dimension")
    rk4 = opts.method == "rk4"

    logger.info(
        f"Integrating with {opts.method} to t={t_end:g} (h_max={opts.h_max}, "
        f"safety={opts.safety}, record_every={record_every})"
    )

    def integrands(lam, beta, y, f, bx):
        values = {
            "lambda": lam,
            "lambda_x": lam * y,
            "xdot_sq": float(f @ f),
            "lambda_beta_B_sq": lam * beta * float(bx @ bx),
        }
        if z is not None:
            offset = y - z
            values["lambda_beta_B_dot"] = lam * beta * float(bx @ offset)
            values["lambda_dist_sq"] = lam * float(offset @ offset)
        return values

    def slack(lam, beta, y, bx):
        # rounding allowance for <Bx, x - z> >= 0, which is exact for z in C
        return lam * beta * float(np.linalg.norm(bx)) * (z_gap + tol * (1.0 + float(np.linalg.norm(y - z))))

    nonnegative = NONNEGATIVE_INTEGRALS
    z_gap = tol = 0.0
    certified = z is not None and contains(pr.C, z)
    if certified:
        nonnegative = nonnegative + ("lambda_beta_B_dot", "lambda_dist_sq")
        z_gap = float(np.linalg.norm(_project(pr.C, z) - z))
        tol = get_tolerances().graph_identity

    t = 0.0
    lam, beta = float(s.lam(t)), float(s.beta(t))
    f = rhs_from_params(pr, lam, beta, x)
    bx = _forward(pr.B, x)
    current = integrands(lam, beta, x, f, bx)
    check_nonnegative(current, nonnegative, slack(lam, beta, x, bx) if certified else 0.0, t)
    totals = {name: np.zeros_like(v) if isinstance(v, np.ndarray) else 0.0 for name, v in current.items()}

    rec_t, rec_x, rec_f, rec_lam, rec_beta, rec_bn = [t], [x], [f], [lam], [beta], [np.linalg.norm(bx)]
    rec_int = {name: [v] for name, v in totals.items()}

    steps = 0
    max_hl = 0.0
    while t < t_end:
        remaining = t_end - t
        if opts.force_unit_step:
            h = 1.0 if remaining >= 1.0 else remaining
        else:
            lf = 2.0 + lam / pr.eta + lam * beta / pr.mu
            h = min(opts.h_max, opts.safety / lf)
            if remaining - h < 1e-9 * h:
                h = remaining
        max_hl = max(max_hl, h * (2.0 + lam / pr.eta + lam * beta / pr.mu))

        t_new = t_end if h == remaining else t + h
        lam_new, beta_new = float(s.lam(t_new)), float(s.beta(t_new))
        if rk4:
            t_mid = t + 0.5 * h
            lam_mid, beta_mid = float(s.lam(t_mid)), float(s.beta(t_mid))
            k1 = f
            k2 = rhs_from_params(pr, lam_mid, beta_mid, x + (0.5 * h) * k1)
            k3 = rhs_from_params(pr, lam_mid, beta_mid, x + (0.5 * h) * k2)
            k4 = rhs_from_params(pr, lam_new, beta_new, x + h * k3)
            x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            x_new = x + h * f

        if not np.all(np.isfinite(x_new)):
            logger.error(f"Non-finite state after step {steps} at t={t_new:g}")
            raise IntegrationError("state became NaN/Inf", t)

        lam, beta = lam_new, beta_new
        f = rhs_from_params(pr, lam, beta, x_new)
        bx = _forward(pr.B, x_new)
        following = integrands(lam, beta, x_new, f, bx)
        check_nonnegative(following, nonnegative, slack(lam, beta, x_new, bx) if certified else 0.0, t)
        for name in totals:
            totals[name] = totals[name] + 0.5 * h * (current[name] + following[name])

        t, x, current = t_new, x_new, following
        steps += 1
        if steps % record_every == 0 or t >= t_end:
            rec_t.append(t)
            rec_x.append(x)
            rec_f.append(f)
            rec_lam.append(lam)
            rec_beta.append(beta)
            rec_bn.append(np.linalg.norm(bx))
            for name in totals:
                rec_int[name].append(totals[name])

    logger.info(f"Integration finished: {steps} steps, {len(rec_t)} nodes, max h*L_f={max_hl:.4g}")
    if len(rec_t) > get_tolerances().max_nodes:
        logger.warning(f"Recorded {len(rec_t)} nodes, above the configured cap")

    return Trajectory(
        times=np.array(rec_t),
        states=np.array(rec_x),
        derivs=np.array(rec_f),
        lambda_samples=np.array(rec_lam),
        beta_samples=np.array(rec_beta),
        penalty_norms=np.array(rec_bn),
        running_integrals={name: np.array(values) for name, values in rec_int.items()},
        reference_z=z,
        steps=steps,
        max_step_lipschitz=max_hl,
    )


def ergodic_average(tr):
    """Running lambda-weighted mean of the states; the first node is x(0)."""
    if len(tr) < 2:
        raise TrajectoryError("ergodic average needs at least two nodes")
    weight = tr.running_integrals["lambda"]
    weighted = tr.running_integrals["lambda_x"]
    if weight[-1] <= 0:
        raise TrajectoryError("integral of lambda over the recorded range is zero")
    average = np.empty_like(tr.states)
    average[0] = tr.states[0]
    average[1:] = weighted[1:] / weight[1:, None]
    return average


def trajectory_header(dim, with_reference):
    header = ["t"] + [f"x_{i}" for i in range(dim)] + ["rhs_norm", "lambda", "beta", "B_norm"]
    if with_reference:
        header.append("dist_to_z")
    return header


def write_trajectory_csv(tr, path):
    """One row per recorded node, 17 significant digits."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with_reference = tr.reference_z is not None
    rhs_norms = tr.rhs_norms()
    dists = tr.dist_to(tr.reference_z) if with_reference else None
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(trajectory_header(tr.dim, with_reference))
        for k in range(len(tr)):
            row = [tr.times[k], *tr.states[k], rhs_norms[k], tr.lambda_samples[k], tr.beta_samples[k], tr.penalty_norms[k]]
            if with_reference:
                row.append(dists[k])
            writer.writerow([format_real(v) for v in row])
    logger.info(f"Wrote {len(tr)} trajectory rows to {path}")


def read_trajectory_csv(path):
    """
    Returns:
        tuple: (times, states) as arrays
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise TrajectoryError(f"{path} is not a trajectory CSV (missing 't' header)")
        columns = [i for i, name in enumerate(header) if name.startswith("x_")]
        if not columns:
            raise TrajectoryError(f"{path} has no state columns")
        rows = [[float(row[0])] + [float(row[i]) for i in columns] for row in reader if row]
    if not rows:
        raise TrajectoryError(f"{path} has no data rows")
    data = np.array(rows)
    return data[:, 0], data[:, 1:]
