"""
Builtin test instances with independently computed solutions, the reference
solver used as ground truth, and seeded random instances.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Union

import numpy as np

from dynamics import ProblemInstance
from logging_setup import get_logger
from operators import (
    CertificateError,
    Cocoercive,
    ConvexSet,
    DescriptorError,
    GraphPoint,
    MaxMonotone,
    Penalty,
    _forward,
    _project,
    _resolvent,
    as_point,
    constrained_resolvent,
    validate_graph_point,
)
from settings import get_tolerances

logger = get_logger(__name__)

BUILTIN_IDS = ("P0_zero", "P1_strongly_monotone", "P2_monotone_line", "P3_l1_box")
RANDOM_RETRIES = 5
GRAPH_SAMPLE_ATTEMPTS = 20
GRAPH_SAMPLE_INNER_ITER = 2_000


class UnknownProblemError(KeyError):
    pass


class OracleError(RuntimeError):
    pass


class GraphSampleError(RuntimeError):
    pass


@dataclass
class OracleResult:
    z: np.ndarray
    p: np.ndarray  # normal-cone multiplier at z
    iterations: int
    step: float
    grid_distance: Optional[float] = None

    def certificate(self, pr):
        """GraphPoint (z, v, p, 0) with v = -p - Dz."""
        v = -self.p - _forward(pr.D, self.z)
        return GraphPoint(self.z, v, self.p, np.zeros_like(self.z))


@dataclass
class NamedInstance:
    id: str
    instance: ProblemInstance
    solution: Union[np.ndarray, ConvexSet]
    certificate: GraphPoint
    default_x0: np.ndarray
    description: str = ""
    oracle: Optional[OracleResult] = field(default=None, repr=False)

    @property
    def strongly_monotone(self):
        return self.instance.gamma > 0

    @property
    def solution_point(self):
        return self.certificate.z

    def distance_to_solution(self, x):
        x = np.asarray(x, dtype=float)
        if isinstance(self.solution, ConvexSet):
            return float(np.linalg.norm(x - _project(self.solution, x)))
        return float(np.linalg.norm(x - self.solution))

    def to_dict(self):
        data = {"id": self.id, "certificate": self.certificate.to_dict()}
        if isinstance(self.solution, ConvexSet):
            data["solution_set"] = self.solution.to_dict()
        else:
            data["solution"] = self.solution.tolist()
        return data


def oracle_solve(pr, tol=None, max_iter=None, x0=None, grid_check=False):
    """
    Solve 0 in Az + Dz + N_C(z) by three-operator splitting with step
    s = min(eta, 0.1)/2, without touching the penalty operator B:

        x_C = P_C(u);  x_A = J_{sA}(2 x_C - u - s D x_C);  u += x_A - x_C

    Stops when ||u_{k+1} - u_k|| <= tol * s. At the limit z = x_C and
    p = (u - z)/s lies in N_C(z).

    Args:
        pr (ProblemInstance): the instance
        tol (float): stopping tolerance (defaults to the configured oracle tolerance)
        max_iter (int): iteration cap
        x0: starting point (defaults to the instance witness)
        grid_check (bool): for n <= 2 also locate the solution by grid refinement

    Returns:
        OracleResult

    Raises:
        OracleError: the iteration cap was reached
    """
    tolerances = get_tolerances()
    tol = tolerances.oracle_tol if tol is None else tol
    max_iter = tolerances.oracle_max_iter if max_iter is None else max_iter
    s = min(pr.eta, 0.1) / 2.0
    C = pr.C
    u = np.array(pr.witness if x0 is None else as_point(x0, pr.dim, "x0"), dtype=float)

    for k in range(1, max_iter + 1):
        x_c = _project(C, u)
        x_a = _resolvent(pr.A, s, 2.0 * x_c - u - s * _forward(pr.D, x_c))
        delta = x_a - x_c
        u = u + delta
        if np.linalg.norm(delta) <= tol * s:
            z = _project(C, u)
            result = OracleResult(z=z, p=(u - z) / s, iterations=k, step=s)
            break
    else:
        logger.error(f"Oracle did not converge in {max_iter} iterations")
        raise OracleError(f"reference solver hit the iteration cap of {max_iter}")

    logger.info(f"Oracle converged in {result.iterations} iterations")
    if grid_check and pr.dim <= 2:
        result.grid_distance = grid_cross_check(pr, result.z, s)
    return result


def grid_cross_check(pr, z, s, points_per_axis=21):
    """
    Minimize ||y - J_{s(A+N_C)}(y - s Dy)|| over projected grids, zooming
    until the spacing is below the grid refinement tolerance.

    Returns:
        float or None: distance from the grid minimizer to z, None when the
        constrained resolvent has no direct formula for this instance
    """
    refinement = get_tolerances().grid_refinement
    C = pr.C

    def merit(y):
        return np.linalg.norm(y - constrained_resolvent(pr.A, C, s, y - s * _forward(pr.D, y)))

    center = _project(C, np.zeros(pr.dim))
    half_width = 4.0 * (1.0 + np.linalg.norm(z) + np.linalg.norm(center))
    try:
        while True:
            axes = [np.linspace(c - half_width, c + half_width, points_per_axis) for c in center]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, pr.dim)
            candidates = np.array([_project(C, y) for y in grid])
            values = np.array([merit(y) for y in candidates])
            center = candidates[int(np.argmin(values))]
            spacing = 2.0 * half_width / (points_per_axis - 1)
            if spacing <= refinement:
                break
            half_width = 2.0 * spacing
    except DescriptorError as e:
        logger.info(f"Grid cross-check skipped: {e}")
        return None
    distance = float(np.linalg.norm(center - z))
    logger.info(f"Grid cross-check: minimizer within {distance:.2e} of the oracle solution")
    return distance


def _finish(instance_id, pr, x0, description, solution=None, certificate=None, oracle=None):
    if certificate is None:
        oracle = oracle or oracle_solve(pr)
        certificate = oracle.certificate(pr)
    if solution is None:
        solution = certificate.z
    validate_graph_point(certificate, pr.A, pr.D, pr.C, np.random.default_rng(0))
    return NamedInstance(
        id=instance_id,
        instance=pr,
        solution=solution,
        certificate=certificate,
        default_x0=np.asarray(x0, dtype=float),
        description=description,
        oracle=oracle,
    )


def _p0():
    dim = 2
    pr = ProblemInstance(
        MaxMonotone.zero(dim),
        Cocoercive.zero(dim),
        Penalty.dist_sq_gradient(ConvexSet.whole_space(dim)),
    )
    zero = np.zeros(dim)
    return _finish(
        "P0_zero",
        pr,
        [1.0, -1.0],
        "all operators zero, C = R^2; every point is a solution",
        solution=ConvexSet.whole_space(dim),
        certificate=GraphPoint(zero, zero, zero, zero),
    )


def _p1():
    K = np.zeros((4, 4))
    K[0, 1], K[0, 2], K[1, 3] = 0.5, 3.0, 3.0
    M = 2.0 * np.eye(4) + K - K.T
    C = ConvexSet.affine_subspace(np.zeros(4), np.eye(4)[:2])
    pr = ProblemInstance(
        MaxMonotone.linear(M, gamma=2.0),
        Cocoercive.gradient_quadratic(np.eye(4), [-1.0, 0.0, 0.0, 0.0], modulus=1.0),
        Penalty.dist_sq_gradient(C, 1.0),
    )
    return _finish(
        "P1_strongly_monotone",
        pr,
        [1.0, 1.0, 1.0, 1.0],
        "strongly monotone linear A with skew coupling, quadratic D, C = {x_3 = x_4 = 0}",
    )


def _p2():
    M = np.array([[0.0, 1.0], [-1.0, 0.0]])
    C = ConvexSet.affine_subspace(np.zeros(2), [[1.0, 0.0]])
    pr = ProblemInstance(
        MaxMonotone.linear(M),
        Cocoercive.zero(2, 1.0),
        Penalty.dist_sq_gradient(C, 1.0),
    )
    zero = np.zeros(2)
    return _finish(
        "P2_monotone_line",
        pr,
        [0.05, 0.05],
        "skew A, D = 0, C = {x_2 = 0}; the skew term is absorbed by N_C on all of C",
        solution=C,
        certificate=GraphPoint(zero, zero, zero, zero),
    )


def _p3():
    pr = ProblemInstance(
        MaxMonotone.subdifferential_l1(3, 1.0),
        Cocoercive.gradient_quadratic(np.diag([2.0, 1.0, 1.0]), [-4.0, 0.5, -3.0], modulus=0.5),
        Penalty.dist_sq_gradient(ConvexSet.box(-np.ones(3), np.ones(3)), 1.0),
    )
    return _finish(
        "P3_l1_box",
        pr,
        [0.5, -0.5, 0.0],
        "l1 subdifferential, separable quadratic D, box [-1, 1]^3",
    )


_BUILDERS = {"P0_zero": _p0, "P1_strongly_monotone": _p1, "P2_monotone_line": _p2, "P3_l1_box": _p3}


@lru_cache(maxsize=None)
def builtin(instance_id):
    """Return one of BUILTIN_IDS."""
    try:
        factory = _BUILDERS[instance_id]
    except KeyError:
        raise UnknownProblemError(f"unknown builtin {instance_id!r}; expected one of {BUILTIN_IDS}")
    return factory()


def named_from_instance(instance_id, pr, x0=None):
    """Wrap a user-supplied instance, solved by the oracle."""
    return _finish(
        instance_id,
        pr,
        np.zeros(pr.dim) if x0 is None else x0,
        "inline instance",
        oracle=oracle_solve(pr, grid_check=pr.dim <= 2),
    )


def _alternate_into(S, C, x, max_iter):
    """
    Alternating projections from x until P_C(y) lies in S. Returns (y, z) with
    z = P_C(y), so y - z is normal to C at z, or None without convergence.
    """
    tol = get_tolerances().graph_identity
    y = x
    for _ in range(max_iter):
        z = _project(C, y)
        zs = _project(S, z)
        if np.linalg.norm(zs - z) <= tol * (1.0 + np.linalg.norm(z)):
            return y, z
        y = zs
    return None


def sample_graph_points(named, rng, k=64, scale=1.0):
    """
    Draw points (z, w) of gr(A + D + N_C): z = P_C(y) with p a positive
    multiple of y - z in N_C(z), and v in A(z) picked per operator kind.
    For normal-cone kinds z is driven into the operator's own set first.

    Raises:
        GraphSampleError: no point found within the attempt budget
    """
    pr = named.instance if isinstance(named, NamedInstance) else named
    A = pr.A
    points = []
    attempts = 0
    while len(points) < k:
        attempts += 1
        if attempts > GRAPH_SAMPLE_ATTEMPTS * k:
            raise GraphSampleError(
                f"only {len(points)} of {k} graph points after {attempts - 1} draws; "
                f"the operator set may not meet the constraint set"
            )
        x = pr.witness + rng.normal(scale=scale, size=pr.dim)
        if A.set is not None:
            found = _alternate_into(A.set, pr.C, x, GRAPH_SAMPLE_INNER_ITER)
            if found is None:
                continue
            y, z = found
        else:
            y, z = x, _project(pr.C, x)
        p = rng.uniform(0.0, 2.0) * (y - z)
        if A.kind == "zero":
            v = np.zeros(pr.dim)
        elif A.kind == "linear":
            v = A.M @ z
        elif A.kind == "affine":
            v = A.M @ z + A.q
        elif A.kind == "subdifferential_l1":
            v = A.weight * np.where(z != 0.0, np.sign(z), rng.uniform(-1.0, 1.0, size=pr.dim))
        else:
            v = A.M @ z if A.M is not None else np.zeros(pr.dim)
        points.append(GraphPoint.build(z, v, p, pr.D))
    return points


def random_instance(seed, dim, gamma=0.0):
    """
    Seeded random instance: A linear with PSD symmetric part plus skew, D the
    gradient of a convex quadratic, C a box or an affine subspace.

    Raises:
        ValueError: dim outside [1, 64]
        OracleError: no solvable draw within the retry budget
    """
    if not 1 <= dim <= 64:
        raise ValueError(f"dim must be in [1, 64], got {dim}")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    rng = np.random.default_rng(seed)

    for attempt in range(RANDOM_RETRIES):
        G = rng.normal(size=(dim, dim))
        S = rng.normal(size=(dim, dim))
        M = G @ G.T / dim + gamma * np.eye(dim) + 0.5 * (S - S.T)
        H = rng.normal(size=(dim, dim))
        Q = H @ H.T / dim
        c = rng.normal(size=dim)

        if dim == 1 or rng.uniform() < 0.5:
            half = rng.uniform(0.5, 2.0, size=dim)
            C = ConvexSet.box(-half, half)
        else:
            directions = np.linalg.qr(rng.normal(size=(dim, dim)))[0][:, : max(1, dim // 2)].T
            C = ConvexSet.affine_subspace(rng.normal(scale=0.5, size=dim), directions)

        try:
            pr = ProblemInstance(
                MaxMonotone.linear(M, gamma=gamma),
                Cocoercive.gradient_quadratic(Q, c),
                Penalty.dist_sq_gradient(C, 1.0),
            )
            oracle = oracle_solve(pr, max_iter=200_000, grid_check=dim <= 2)
            named = _finish(
                f"random_{seed}_{dim}",
                pr,
                rng.normal(size=dim),
                f"random instance (seed {seed}, dim {dim}, gamma {gamma})",
                oracle=oracle,
            )
            return named
        except (OracleError, DescriptorError, CertificateError) as e:
            logger.warning(f"Random instance draw {attempt} rejected: {e}")
    raise OracleError(f"no solvable random instance for seed {seed} after {RANDOM_RETRIES} draws")
