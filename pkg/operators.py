"""
Operator toolkit: convex sets and projections, maximally monotone operators
with exactly computable resolvents, Yosida approximations, cocoercive forward
maps, penalty operators, support functions and the Fitzpatrick gap bound of
the distance-squared penalty.

Points are 1-D float64 numpy arrays. Descriptors are frozen dataclasses whose
arrays are stored read-only, so they can be shared freely.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from logging_setup import get_logger
from settings import get_tolerances

logger = get_logger(__name__)

SET_KINDS = ("box", "ball", "affine_subspace", "halfspace", "singleton")
MONOTONE_KINDS = (
    "zero",
    "linear",
    "affine",
    "normal_cone",
    "subdifferential_l1",
    "sum_linear_plus_normal_cone",
)
COCOERCIVE_KINDS = ("zero", "gradient_quadratic")
PENALTY_KINDS = ("dist_sq_gradient", "linear_psd")
# eigenvector bases worse conditioned than this fall back to a dense solve
SPECTRAL_COND_LIMIT = 1e4


class DimensionMismatchError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class DescriptorError(ValueError):
    pass


class ResolventConvergenceError(RuntimeError):
    pass


class UnsupportedPenaltyError(ValueError):
    pass


class CertificateError(ValueError):
    pass


def as_point(x, dim=None, name="x"):
    """Validate and return `x` as a finite 1-D float array."""
    arr = np.array(x, dtype=float).reshape(-1) if np.ndim(x) == 0 else np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatchError(f"{name} must be a non-empty vector, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise DimensionMismatchError(f"{name} has dimension {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf: {arr}")
    return arr


def _frozen(values, ndim):
    if values is None:
        return None
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise DescriptorError(f"expected a {ndim}-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DescriptorError("descriptor arrays must be finite")
    arr.setflags(write=False)
    return arr


def _square(M, name="M"):
    arr = _frozen(M, 2)
    if arr.shape[0] != arr.shape[1]:
        raise DescriptorError(f"{name} must be square, got shape {arr.shape}")
    return arr


def _sym_eigvals(M):
    return linalg.eigvalsh(0.5 * (M + M.T))


def _list(arr):
    return None if arr is None else np.asarray(arr).tolist()


# --------------------------------------------------------------------------
# Convex sets
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConvexSet:
    """Nonempty closed convex set. Build with the classmethod factories."""

    kind: str
    dim: int
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    anchor: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None  # rows are orthonormal directions
    normal: Optional[np.ndarray] = None
    offset: Optional[float] = None
    point: Optional[np.ndarray] = None

    @classmethod
    def box(cls, lo, hi):
        lo, hi = _frozen(lo, 1), _frozen(hi, 1)
        if lo.shape != hi.shape:
            raise DescriptorError("box bounds must share a dimension")
        if np.any(lo > hi):
            raise DescriptorError(f"box requires lo <= hi componentwise: lo={lo}, hi={hi}")
        return cls("box", lo.size, lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius):
        center = _frozen(center, 1)
        radius = float(radius)
        if radius < 0 or not np.isfinite(radius):
            raise DescriptorError(f"ball radius must be finite and >= 0, got {radius}")
        if radius == 0.0:
            logger.warning("Zero-radius ball treated as a singleton")
            return cls.singleton(center)
        return cls("ball", center.size, center=center, radius=radius)

    @classmethod
    def affine_subspace(cls, anchor, basis):
        anchor = _frozen(anchor, 1)
        dim = anchor.size
        basis = np.array(basis, dtype=float).reshape(-1, dim)
        if basis.shape[0] > dim:
            raise DescriptorError("affine_subspace has more directions than the dimension")
        if basis.shape[0] > 0:
            gram = basis @ basis.T
            drift = np.max(np.abs(gram - np.eye(basis.shape[0])))
            if drift > get_tolerances().orthonormal:
                q, r = np.linalg.qr(basis.T)
                if np.min(np.abs(np.diag(r))) <= 1e-12 * max(1.0, np.max(np.abs(r))):
                    raise DescriptorError("affine_subspace directions are linearly dependent")
                logger.info(f"Re-orthonormalized affine basis (drift {drift:.2e})")
                basis = q.T
        return cls("affine_subspace", dim, anchor=anchor, basis=_frozen(basis, 2))

    @classmethod
    def whole_space(cls, dim):
        return cls.affine_subspace(np.zeros(dim), np.eye(dim))

    @classmethod
    def halfspace(cls, normal, offset):
        normal = _frozen(normal, 1)
        if np.linalg.norm(normal) == 0.0:
            raise DescriptorError("halfspace normal must be nonzero")
        return cls("halfspace", normal.size, normal=normal, offset=float(offset))

    @classmethod
    def singleton(cls, point):
        point = _frozen(point, 1)
        return cls("singleton", point.size, point=point)

    def to_dict(self):
        if self.kind == "box":
            return {"kind": "box", "lo": _list(self.lo), "hi": _list(self.hi)}
        if self.kind == "ball":
            return {"kind": "ball", "center": _list(self.center), "radius": self.radius}
        if self.kind == "affine_subspace":
            return {
                "kind": "affine_subspace",
                "anchor": _list(self.anchor),
                "basis": _list(self.basis),
            }
        if self.kind == "halfspace":
            return {"kind": "halfspace", "normal": _list(self.normal), "offset": self.offset}
        return {"kind": "singleton", "point": _list(self.point)}

    @classmethod
    def from_dict(cls, data):
        kind = data.get("kind")
        if kind == "box":
            return cls.box(data["lo"], data["hi"])
        if kind == "ball":
            return cls.ball(data["center"], data["radius"])
        if kind == "affine_subspace":
            return cls.affine_subspace(data["anchor"], data.get("basis", []))
        if kind == "halfspace":
            return cls.halfspace(data["normal"], data["offset"])
        if kind == "singleton":
            return cls.singleton(data["point"])
        if kind == "whole_space":
            return cls.whole_space(int(data["dim"]))
        raise DescriptorError(f"unknown set kind {kind!r}; expected one of {SET_KINDS}")


def _project(C, x):
    if C.kind == "box":
        return np.clip(x, C.lo, C.hi)
    if C.kind == "ball":
        d = x - C.center
        dist = np.linalg.norm(d)
        if dist <= C.radius:
            return x.copy()
        return C.center + d * (C.radius / dist)
    if C.kind == "affine_subspace":
        d = x - C.anchor
        return C.anchor + C.basis.T @ (C.basis @ d)
    if C.kind == "halfspace":
        excess = C.normal @ x - C.offset
        if excess <= 0.0:
            return x.copy()
        return x - (excess / (C.normal @ C.normal)) * C.normal
    return np.array(C.point, dtype=float)


def project(C, x):
    """Nearest point of C to x."""
    return _project(C, as_point(x, C.dim))


def contains(C, x, tol=None):
    tol = get_tolerances().graph_identity if tol is None else tol
    x = as_point(x, C.dim)
    return bool(np.linalg.norm(_project(C, x) - x) <= tol * (1.0 + np.linalg.norm(x)))


def sample_set_points(C, rng, k, scale=1.0):
    """Draw k points of C: projections of Gaussian draws, plus interior draws for bounded kinds."""
    raw = rng.normal(scale=scale, size=(k, C.dim))
    if C.kind == "box":
        raw = raw + 0.5 * (C.lo + C.hi)
        half = k // 2
        raw[:half] = rng.uniform(C.lo, C.hi, size=(half, C.dim))
        return np.array([_project(C, y) for y in raw])
    if C.kind == "ball":
        raw = raw + C.center
    elif C.kind == "affine_subspace":
        raw = raw + C.anchor
    return np.array([_project(C, y) for y in raw])


def support_function(C, u):
    """sup over y in C of <y, u>; may be +inf."""
    u = as_point(u, C.dim, "u")
    if not np.any(u):
        return 0.0
    if C.kind == "box":
        return float(np.sum(np.maximum(C.lo * u, C.hi * u)))
    if C.kind == "ball":
        return float(C.center @ u + C.radius * np.linalg.norm(u))
    if C.kind == "affine_subspace":
        tangential = C.basis @ u
        if np.linalg.norm(tangential) > get_tolerances().orthonormal * np.linalg.norm(u):
            return np.inf
        return float(C.anchor @ u)
    if C.kind == "halfspace":
        n = C.normal
        scale = (u @ n) / (n @ n)
        if scale < 0 or np.linalg.norm(u - scale * n) > get_tolerances().orthonormal * np.linalg.norm(u):
            return np.inf
        return float(scale * C.offset)
    return float(C.point @ u)


# --------------------------------------------------------------------------
# Maximally monotone operators A
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MaxMonotone:
    kind: str
    dim: int
    M: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    set: Optional[ConvexSet] = None
    weight: float = 0.0
    gamma: float = 0.0
    _spectral: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in MONOTONE_KINDS:
            raise DescriptorError(f"unknown operator kind {self.kind!r}")
        if self.gamma < 0:
            raise DescriptorError("strong monotonicity modulus must be >= 0")
        if self.M is not None:
            if self.M.shape != (self.dim, self.dim):
                raise DimensionMismatchError(f"M has shape {self.M.shape}, expected {(self.dim, self.dim)}")
            smallest = float(np.min(_sym_eigvals(self.M)))
            tol = get_tolerances().psd
            if smallest < -tol:
                raise DescriptorError(f"symmetric part of M is not PSD (min eigenvalue {smallest:.3e})")
            if self.gamma > smallest + tol:
                raise DescriptorError(
                    f"gamma={self.gamma} exceeds the smallest eigenvalue {smallest:.6g} of the symmetric part"
                )
            if self.kind in ("linear", "affine"):
                object.__setattr__(self, "_spectral", _spectral_form(self.M))
        elif self.gamma > 0:
            raise DescriptorError(f"kind {self.kind!r} is not strongly monotone")
        if self.set is not None and self.set.dim != self.dim:
            raise DimensionMismatchError("operator and set dimensions differ")

    @classmethod
    def zero(cls, dim):
        return cls("zero", int(dim))

    @classmethod
    def linear(cls, M, gamma=0.0):
        M = _square(M)
        return cls("linear", M.shape[0], M=M, gamma=float(gamma))

    @classmethod
    def affine(cls, M, q, gamma=0.0):
        M = _square(M)
        return cls("affine", M.shape[0], M=M, q=_frozen(q, 1), gamma=float(gamma))

    @classmethod
    def normal_cone(cls, C):
        return cls("normal_cone", C.dim, set=C)

    @classmethod
    def subdifferential_l1(cls, dim, weight):
        if weight < 0:
            raise DescriptorError("l1 weight must be >= 0")
        return cls("subdifferential_l1", int(dim), weight=float(weight))

    @classmethod
    def sum_linear_plus_normal_cone(cls, M, C, gamma=0.0):
        M = _square(M)
        return cls("sum_linear_plus_normal_cone", M.shape[0], M=M, set=C, gamma=float(gamma))

    def to_dict(self):
        data = {"kind": self.kind, "dim": self.dim, "gamma": self.gamma}
        if self.M is not None:
            data["M"] = _list(self.M)
        if self.q is not None:
            data["q"] = _list(self.q)
        if self.set is not None:
            data["set"] = self.set.to_dict()
        if self.kind == "subdifferential_l1":
            data["weight"] = self.weight
        return data

    @classmethod
    def from_dict(cls, data):
        kind = data.get("kind")
        gamma = float(data.get("gamma", 0.0))
        if kind == "zero":
            return cls.zero(data["dim"])
        if kind == "linear":
            return cls.linear(data["M"], gamma)
        if kind == "affine":
            return cls.affine(data["M"], data["q"], gamma)
        if kind == "normal_cone":
            return cls.normal_cone(ConvexSet.from_dict(data["set"]))
        if kind == "subdifferential_l1":
            return cls.subdifferential_l1(data["dim"], data["weight"])
        if kind == "sum_linear_plus_normal_cone":
            return cls.sum_linear_plus_normal_cone(data["M"], ConvexSet.from_dict(data["set"]), gamma)
        raise DescriptorError(f"unknown operator kind {kind!r}; expected one of {MONOTONE_KINDS}")


def soft_threshold(x, threshold):
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def _spectral_form(M):
    """(w, V, V^-1) with M = V diag(w) V^-1, or None when M is not safely diagonalizable."""
    w, V = linalg.eig(M)
    if not np.all(np.isfinite(V)) or np.linalg.cond(V) > SPECTRAL_COND_LIMIT:
        return None
    spectral = (w, V, linalg.inv(V))
    for arr in spectral:
        arr.setflags(write=False)
    return spectral


def _solve_shifted(A, lam, rhs):
    """(I + lam M)^-1 rhs; the symmetric part of M is PSD, so 1 + lam w never vanishes."""
    if A._spectral is not None:
        w, V, V_inv = A._spectral
        return (V @ ((V_inv @ rhs) / (1.0 + lam * w))).real
    try:
        return linalg.solve(np.eye(A.dim) + lam * A.M, rhs, check_finite=False)
    except linalg.LinAlgError as e:
        raise AssertionError(f"singular resolvent system for lambda={lam}: {e}")


def _linear_plus_cone(M, C, lam, x):
    """Solve x - y in lam*(M y + N_C(y)), i.e. y = J_{lam(M + N_C)} x."""
    if C.kind == "singleton":
        return np.array(C.point, dtype=float)
    if C.kind == "affine_subspace":
        # exact: y = anchor + U^T c with U (I + lam M) y - U x = 0
        U = C.basis
        system = np.eye(C.dim) + lam * M
        if U.shape[0] == 0:
            return np.array(C.anchor, dtype=float)
        reduced = U @ system @ U.T
        c = linalg.solve(reduced, U @ (x - system @ C.anchor), check_finite=False)
        return C.anchor + U.T @ c

    tol = get_tolerances()
    lipschitz = 1.0 + lam * float(np.linalg.norm(M, 2))
    if np.allclose(M, M.T, atol=1e-14):
        step = 1.0 / lipschitz
        rate = 1.0 - 1.0 / lipschitz
    else:
        step = 1.0 / lipschitz**2
        rate = np.sqrt(1.0 - 1.0 / lipschitz**2)
    threshold = tol.inner_residual * (1.0 + np.linalg.norm(x)) * (1.0 - rate) / max(rate, 1e-300)

    y = _project(C, x)
    for _ in range(tol.inner_max_iter):
        y_next = _project(C, y - step * (y + lam * (M @ y) - x))
        if np.linalg.norm(y_next - y) <= threshold:
            return y_next
        y = y_next
    raise ResolventConvergenceError(
        f"projected iteration did not converge in {tol.inner_max_iter} iterations (lambda={lam})"
    )


def _resolvent(A, lam, x):
    kind = A.kind
    if kind == "zero":
        return x.copy()
    if kind == "linear":
        return _solve_shifted(A, lam, x)
    if kind == "affine":
        return _solve_shifted(A, lam, x - lam * A.q)
    if kind == "normal_cone":
        return _project(A.set, x)
    if kind == "subdifferential_l1":
        return soft_threshold(x, lam * A.weight)
    return _linear_plus_cone(A.M, A.set, lam, x)


def resolvent(A, lam, x):
    """J_{lam A}(x) = (Id + lam A)^{-1} x."""
    if not lam > 0:
        raise ValueError(f"resolvent step must be positive, got {lam}")
    return _resolvent(A, float(lam), as_point(x, A.dim))


def yosida(A, alpha, x):
    """A_alpha(x) = (x - J_{alpha A} x) / alpha."""
    x = as_point(x, A.dim)
    return (x - resolvent(A, alpha, x)) / alpha


# --------------------------------------------------------------------------
# Forward operators D and B
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Cocoercive:
    kind: str
    dim: int
    modulus: float
    Q: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in COCOERCIVE_KINDS:
            raise DescriptorError(f"unknown cocoercive kind {self.kind!r}")
        if not self.modulus > 0:
            raise DescriptorError("cocoercivity modulus must be positive")
        if self.kind == "gradient_quadratic":
            if self.Q.shape != (self.dim, self.dim) or self.c.shape != (self.dim,):
                raise DimensionMismatchError("Q and c must match the operator dimension")
            tol = get_tolerances().psd
            if np.max(np.abs(self.Q - self.Q.T)) > tol:
                raise DescriptorError("Q must be symmetric")
            eigs = linalg.eigvalsh(self.Q)
            if eigs[0] < -tol:
                raise DescriptorError(f"Q must be PSD (min eigenvalue {eigs[0]:.3e})")
            if eigs[-1] > 0 and self.modulus > (1.0 / eigs[-1]) * (1.0 + tol):
                raise DescriptorError(
                    f"modulus {self.modulus} exceeds 1/L = {1.0 / eigs[-1]:.6g} for this quadratic"
                )

    @classmethod
    def zero(cls, dim, modulus=1.0):
        return cls("zero", int(dim), float(modulus))

    @classmethod
    def gradient_quadratic(cls, Q, c, modulus=None):
        Q = _square(Q, "Q")
        if modulus is None:
            top = float(linalg.eigvalsh(Q)[-1])
            modulus = 1.0 / top if top > 0 else 1.0
        return cls("gradient_quadratic", Q.shape[0], float(modulus), Q=Q, c=_frozen(c, 1))

    def to_dict(self):
        data = {"kind": self.kind, "dim": self.dim, "modulus": self.modulus}
        if self.kind == "gradient_quadratic":
            data.update({"Q": _list(self.Q), "c": _list(self.c)})
        return data

    @classmethod
    def from_dict(cls, data):
        kind = data.get("kind")
        if kind == "zero":
            return cls.zero(data["dim"], data.get("modulus", 1.0))
        if kind == "gradient_quadratic":
            return cls.gradient_quadratic(data["Q"], data["c"], data.get("modulus"))
        raise DescriptorError(f"unknown cocoercive kind {kind!r}; expected one of {COCOERCIVE_KINDS}")


@dataclass(frozen=True, eq=False)
class Penalty:
    kind: str
    dim: int
    modulus_mu: float
    zero_set: ConvexSet
    M: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise DescriptorError(f"unknown penalty kind {self.kind!r}")
        if not self.modulus_mu > 0:
            raise DescriptorError("penalty modulus must be positive")
        if self.zero_set.dim != self.dim:
            raise DimensionMismatchError("penalty and zero set dimensions differ")
        tol = get_tolerances().psd
        if self.kind == "dist_sq_gradient" and self.modulus_mu > 1.0 + tol:
            raise DescriptorError("identity minus projection is 1-cocoercive; modulus must be <= 1")
        if self.kind == "linear_psd":
            eigs = linalg.eigvalsh(self.M)
            if eigs[0] < -tol or np.max(np.abs(self.M - self.M.T)) > tol:
                raise DescriptorError("linear_psd penalty needs a symmetric PSD matrix")
            if eigs[-1] > 0 and self.modulus_mu > (1.0 / eigs[-1]) * (1.0 + tol):
                raise DescriptorError(f"modulus exceeds 1/L = {1.0 / eigs[-1]:.6g}")

    @property
    def mu(self):
        return self.modulus_mu

    @classmethod
    def dist_sq_gradient(cls, C, modulus_mu=1.0):
        return cls("dist_sq_gradient", C.dim, float(modulus_mu), C)

    @classmethod
    def linear_psd(cls, M, modulus_mu=None):
        M = _square(M)
        top = float(linalg.eigvalsh(M)[-1])
        if modulus_mu is None:
            modulus_mu = 1.0 / top if top > 0 else 1.0
        kernel = linalg.null_space(M, rcond=1e-10).T
        zero_set = ConvexSet.affine_subspace(np.zeros(M.shape[0]), kernel)
        return cls("linear_psd", M.shape[0], float(modulus_mu), zero_set, M=M)

    def to_dict(self):
        if self.kind == "dist_sq_gradient":
            return {"kind": self.kind, "set": self.zero_set.to_dict(), "modulus_mu": self.modulus_mu}
        return {"kind": self.kind, "M": _list(self.M), "modulus_mu": self.modulus_mu}

    @classmethod
    def from_dict(cls, data):
        kind = data.get("kind")
        if kind == "dist_sq_gradient":
            return cls.dist_sq_gradient(ConvexSet.from_dict(data["set"]), data.get("modulus_mu", 1.0))
        if kind == "linear_psd":
            return cls.linear_psd(data["M"], data.get("modulus_mu"))
        raise DescriptorError(f"unknown penalty kind {kind!r}; expected one of {PENALTY_KINDS}")


def _forward(op, x):
    if op.kind == "zero":
        return np.zeros_like(x)
    if op.kind == "gradient_quadratic":
        return op.Q @ x + op.c
    if op.kind == "dist_sq_gradient":
        return x - _project(op.zero_set, x)
    return op.M @ x


def eval_forward(op, x):
    """Dx for a cocoercive descriptor, Bx for a penalty descriptor."""
    return _forward(op, as_point(x, op.dim))


@dataclass
class CocoercivityReport:
    passed: bool
    worst_margin: float
    modulus: float
    trials: int


def check_cocoercive(op, modulus, rng, trials=1000, scale=1.0):
    """
    Sample <x - y, Mx - My> - modulus * ||Mx - My||^2 over random pairs.

    Args:
        op: Cocoercive or Penalty descriptor
        modulus (float): claimed cocoercivity modulus
        rng (numpy.random.Generator): pair source
        trials (int): number of random pairs (>= 1)
        scale (float): standard deviation of the sampled points

    Returns:
        CocoercivityReport: failure when the worst margin is below -tol
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pairs = [(rng.normal(scale=scale, size=op.dim), rng.normal(scale=scale, size=op.dim)) for _ in range(trials)]
    matrix = {"gradient_quadratic": getattr(op, "Q", None), "linear_psd": getattr(op, "M", None)}.get(op.kind)
    if matrix is not None:
        # worst case sits along the top eigenvector
        _, vecs = linalg.eigh(matrix)
        pairs.append((np.zeros(op.dim), scale * vecs[:, -1]))

    worst = np.inf
    for x, y in pairs:
        dx = x - y
        dm = _forward(op, x) - _forward(op, y)
        margin = float(dx @ dm - modulus * (dm @ dm))
        worst = min(worst, margin)
    passed = worst >= -get_tolerances().cocoercive_margin
    if not passed:
        logger.info(f"Cocoercivity with modulus {modulus} fails for {op.kind} (margin {worst:.3e})")
    return CocoercivityReport(passed, worst, float(modulus), len(pairs))


# --------------------------------------------------------------------------
# Graph points, normal-cone certificates, Fitzpatrick gap bound
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GraphPoint:
    """(z, w) in gr(A + D + N_C) with w = v + p + Dz, v in Az, p in N_C(z)."""

    z: np.ndarray
    v: np.ndarray
    p: np.ndarray
    w: np.ndarray

    @classmethod
    def build(cls, z, v, p, D):
        z, v, p = as_point(z, name="z"), as_point(v, name="v"), as_point(p, name="p")
        w = v + p + eval_forward(D, z)
        return cls(_frozen(z, 1), _frozen(v, 1), _frozen(p, 1), _frozen(w, 1))

    def to_dict(self):
        return {"z": _list(self.z), "v": _list(self.v), "p": _list(self.p), "w": _list(self.w)}


def check_normal_cone_certificate(C, witness, p, rng, samples=256, scale=1.0):
    """
    Certify p in N_C(witness): witness in C and <y - witness, p> <= tol on
    sampled y in C, plus the point y = P_C(witness + p).

    Returns:
        float: worst observed <y - witness, p>
    """
    tol = get_tolerances().graph_identity
    witness = as_point(witness, C.dim, "witness")
    p = as_point(p, C.dim, "p")
    if not contains(C, witness):
        raise CertificateError(f"witness {witness} is not in the set")
    trials = sample_set_points(C, rng, samples, scale=scale)
    trials = np.vstack([trials, _project(C, witness + p)])
    worst = float(np.max((trials - witness) @ p))
    if worst > tol * (1.0 + np.linalg.norm(p)):
        raise CertificateError(f"p is not normal to the set at the witness (worst margin {worst:.3e})")
    return worst


def validate_graph_point(gp, A, D, C, rng, samples=256):
    """Check the GraphPoint invariants; returns the largest residual found."""
    tol = get_tolerances().graph_identity
    identity_residual = float(np.linalg.norm(_resolvent(A, 1.0, gp.z + gp.v) - gp.z))
    if identity_residual > tol * (1.0 + np.linalg.norm(gp.z)):
        raise CertificateError(f"v is not in A(z): resolvent identity residual {identity_residual:.3e}")
    check_normal_cone_certificate(C, gp.z, gp.p, rng, samples=samples)
    sum_residual = float(np.linalg.norm(gp.w - (gp.v + gp.p + _forward(D, gp.z))))
    if sum_residual > tol * (1.0 + np.linalg.norm(gp.w)):
        raise CertificateError(f"w != v + p + Dz (residual {sum_residual:.3e})")
    return max(identity_residual, sum_residual)


def fitzpatrick_gap_bound(B, p, beta, witness=None, rng=None):
    """
    Upper bound of sup_u phi_B(u, p/beta) - sigma_C(p/beta) for B = grad(d^2_C / 2).

    With Psi = d^2_C / 2 the conjugate is Psi*(y) = ||y||^2 / 2 + sigma_C(y), and
    phi_B <= Psi + Psi* with Psi = 0 on C, so the gap is at most ||p||^2 / (2 beta^2).

    Args:
        B (Penalty): must be of kind dist_sq_gradient
        p: an element of ran N_C
        beta (float or ndarray): positive penalty weight(s)
        witness: optional point u of C with p in N_C(u); validated when given

    Returns:
        float or ndarray: the nonnegative bound
    """
    if B.kind != "dist_sq_gradient":
        raise UnsupportedPenaltyError(
            f"the gap bound is only available for dist_sq_gradient penalties, not {B.kind}"
        )
    p = as_point(p, B.dim, "p")
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    if witness is not None:
        check_normal_cone_certificate(B.zero_set, witness, p, rng or np.random.default_rng(0))
    bound = 0.5 * float(p @ p) / beta**2
    return float(bound) if bound.ndim == 0 else bound


def characterization_gap(x, graph_points):
    """min over (u, w) in the sample of <u - x, w>; >= 0 on the whole graph iff x is a zero."""
    x = as_point(x)
    return float(min(np.dot(gp.z - x, gp.w) for gp in graph_points))


def constrained_resolvent(A, C, s, x):
    """
    J_{s(A + N_C)}(x) for the combinations with a direct formula.

    Raises:
        DescriptorError: when no direct formula is available
    """
    x = as_point(x, C.dim)
    if A.kind == "zero":
        return _project(C, x)
    if A.kind == "subdifferential_l1" and C.kind == "box":
        return np.clip(soft_threshold(x, s * A.weight), C.lo, C.hi)
    if A.kind == "linear":
        return _linear_plus_cone(A.M, C, s, x)
    if A.kind == "affine":
        return _linear_plus_cone(A.M, C, s, x - s * A.q)
    raise DescriptorError(f"no direct resolvent for {A.kind} plus the normal cone of a {C.kind}")
