"""KL functions, noise-growth functions and analytic test objectives.

A KL function ``phi`` lower-bounds the gradient norm by the suboptimality,
``||grad f(x)|| >= phi(f(x) - f*)``.  The power family
``phi(t) = sqrt(2 mu) t^(1/alpha)`` is the alpha-PL condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

Array = NDArray[np.float64]

# gaps below this are skipped by verify_pl / dist_bound_ratio
GAP_FLOOR = 1e-12


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a KL quantity."""


def _check_alpha(alpha: float) -> None:
    if not (1.0 <= alpha <= 2.0):
        raise DomainError(f"PL power alpha={alpha} outside the admissible range [1, 2]")


@dataclass(frozen=True)
class PhiSpec:
    """KL function. ``kind`` is one of ``power``, ``minlinsqrt``, ``sqrttlog``."""

    kind: str = "power"
    alpha: float = 2.0
    mu: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("power", "minlinsqrt", "sqrttlog"):
            raise DomainError(f"unknown phi variant {self.kind!r}")
        if self.kind == "power":
            _check_alpha(self.alpha)
            if not self.mu > 0:
                raise DomainError(f"PL constant mu={self.mu} must be positive")

    @classmethod
    def power(cls, alpha: float, mu: float) -> "PhiSpec":
        return cls("power", float(alpha), float(mu))

    @classmethod
    def min_lin_sqrt(cls) -> "PhiSpec":
        return cls("minlinsqrt", 1.0, 0.5)

    @classmethod
    def sqrt_t_log(cls) -> "PhiSpec":
        return cls("sqrttlog", 1.0, 0.5)

    def __call__(self, t: float) -> float:
        return phi_eval(self, t)

    def deriv(self, t: float) -> float:
        return phi_deriv(self, t)

    def sq(self, t: float) -> float:
        """phi(t)^2, computed without the square root where possible."""
        if t < 0:
            raise DomainError(f"phi is defined on t >= 0, got {t}")
        if self.kind == "power":
            return 2.0 * self.mu * t ** (2.0 / self.alpha)
        if self.kind == "minlinsqrt":
            return min(t * t, t)
        return t * math.log1p(t)

    def sq_deriv(self, t: float) -> float:
        """Derivative of phi^2, i.e. 2 phi'(t) phi(t); finite at t = 0."""
        if t < 0:
            raise DomainError(f"phi is defined on t >= 0, got {t}")
        if self.kind == "power":
            e = 2.0 / self.alpha
            if t == 0.0:
                return 2.0 * self.mu if e == 1.0 else 0.0
            return 2.0 * self.mu * e * t ** (e - 1.0)
        if self.kind == "minlinsqrt":
            return 2.0 * t if t <= 1.0 else 1.0
        return math.log1p(t) + t / (1.0 + t)


def phi_eval(spec: PhiSpec, t: float) -> float:
    if t < 0:
        raise DomainError(f"phi is defined on t >= 0, got {t}")
    if spec.kind == "power":
        return math.sqrt(2.0 * spec.mu) * t ** (1.0 / spec.alpha)
    if spec.kind == "minlinsqrt":
        return min(t, math.sqrt(t))
    return math.sqrt(t * math.log1p(t))


def phi_deriv(spec: PhiSpec, t: float) -> float:
    if not t > 0:
        raise DomainError(f"phi' is evaluated on t > 0, got {t}")
    if spec.kind == "power":
        return math.sqrt(2.0 * spec.mu) / spec.alpha * t ** (1.0 / spec.alpha - 1.0)
    if spec.kind == "minlinsqrt":
        # left derivative at the kink t = 1
        return 1.0 if t <= 1.0 else 0.5 / math.sqrt(t)
    return (math.log1p(t) + t / (1.0 + t)) / (2.0 * math.sqrt(t * math.log1p(t)))


@dataclass(frozen=True)
class HSpec:
    """Noise-growth function: ``zero``, ``power`` (t^beta) or ``log1p``."""

    kind: str = "zero"
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "power", "log1p"):
            raise DomainError(f"unknown h variant {self.kind!r}")
        if self.kind == "power" and not (0.0 < self.beta <= 1.0):
            raise DomainError(f"h exponent beta={self.beta} must lie in (0, 1]")

    @classmethod
    def zero(cls) -> "HSpec":
        return cls("zero")

    @classmethod
    def power(cls, beta: float) -> "HSpec":
        return cls("power", float(beta))

    @classmethod
    def log1p(cls) -> "HSpec":
        return cls("log1p")

    def __call__(self, t: float) -> float:
        return h_eval(self, t)

    def deriv(self, t: float) -> float:
        return h_deriv(self, t)


def h_eval(spec: HSpec, t: float) -> float:
    if t < 0:
        raise DomainError(f"h is defined on t >= 0, got {t}")
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "power":
        return t**spec.beta
    return math.log1p(t)


def h_deriv(spec: HSpec, t: float) -> float:
    if t < 0:
        raise DomainError(f"h is defined on t >= 0, got {t}")
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "power":
        if spec.beta == 1.0:
            return 1.0
        return math.inf if t == 0.0 else spec.beta * t ** (spec.beta - 1.0)
    return 1.0 / (1.0 + t)


@dataclass(frozen=True)
class PLSpec:
    alpha: float
    mu: float

    def __post_init__(self) -> None:
        _check_alpha(self.alpha)
        if not self.mu > 0:
            raise DomainError(f"PL constant mu={self.mu} must be positive")

    @property
    def phi(self) -> PhiSpec:
        return PhiSpec.power(self.alpha, self.mu)


def pl_params_power_abs(c: float, q: float) -> PLSpec:
    """PL power and constant of ``c |x|^q``."""
    if not q > 1:
        raise DomainError(f"c|x|^q needs q > 1 for a finite PL power, got q={q}")
    if not c > 0:
        raise DomainError(f"c must be positive, got {c}")
    return PLSpec(alpha=q / (q - 1.0), mu=c ** (2.0 / q) * q * q / 2.0)


# --------------------------------------------------------------------------
# test functions


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Objective with analytic gradient, optimal value and PL constants.

    ``dist_to_opt`` returns the Euclidean distance to the solution set when it
    is known.  Finite sums additionally carry ``shifts`` and ``scales`` so that
    component ``i`` is ``scales[i] * base(x) + <shifts[i], x>``.
    """

    __test__ = False  # not a pytest class

    name: str
    dim: int
    f: Callable[[Array], float]
    grad: Callable[[Array], Array]
    f_star: float
    lipschitz_L: float
    pl: PLSpec
    dist_to_opt: Optional[Callable[[Array], float]] = None
    params: dict = field(default_factory=dict)
    parts: tuple = ()
    base: Optional["TestFunction"] = None
    shifts: Optional[Array] = None
    scales: Optional[Array] = None

    @property
    def n_components(self) -> int:
        return 1 if self.shifts is None else int(self.shifts.shape[0])

    @property
    def is_finite_sum(self) -> bool:
        return self.shifts is not None

    def gap(self, x: ArrayLike) -> float:
        return self.f(np.asarray(x, dtype=float)) - self.f_star

    def component_grads(self, x: Array, idx: NDArray[np.int64]) -> Array:
        """Rows are gradients of the selected components at ``x``."""
        if self.shifts is None:
            raise ValueError(f"{self.name} is not a finite sum")
        g = self.base.grad(x)
        return self.scales[idx, None] * g[None, :] + self.shifts[idx]

    def component_lipschitz(self) -> float:
        """Lipschitz constant shared by every component gradient."""
        if self.scales is None:
            return self.lipschitz_L
        return float(np.max(np.abs(self.scales))) * self.base.lipschitz_L


def _as_vec(x: ArrayLike) -> Array:
    return np.atleast_1d(np.asarray(x, dtype=float))


def quadratic(mu: float = 1.0, dim: int = 1, L: Optional[float] = None) -> TestFunction:
    """``0.5 * sum(h_i x_i^2)`` with curvatures spread linearly on [mu, L]."""
    L = mu if L is None else L
    if not (mu > 0 and L >= mu):
        raise DomainError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    h = np.linspace(mu, L, dim) if dim > 1 else np.array([mu])

    def f(x: Array) -> float:
        x = _as_vec(x)
        return 0.5 * float(np.dot(h * x, x))

    def grad(x: Array) -> Array:
        return h * _as_vec(x)

    return TestFunction(
        name="quadratic",
        dim=dim,
        f=f,
        grad=grad,
        f_star=0.0,
        lipschitz_L=float(L),
        pl=PLSpec(2.0, float(mu)),
        dist_to_opt=lambda x: float(np.linalg.norm(_as_vec(x))),
        params={"mu": mu, "L": L, "dim": dim},
    )


def power_abs(c: float = 1.0, q: float = 3.0, R: float = 5.0) -> TestFunction:
    """``c |x|^q`` in one dimension; L is the curvature bound on [-R, R]."""
    pl = pl_params_power_abs(c, q)
    if q >= 2:
        L = c * q * (q - 1.0) * R ** (q - 2.0)
    else:
        L = math.inf

    def f(x: Array) -> float:
        return c * float(np.abs(_as_vec(x)[0])) ** q

    def grad(x: Array) -> Array:
        x = _as_vec(x)
        return c * q * np.abs(x) ** (q - 1.0) * np.sign(x)

    return TestFunction(
        name="power_abs",
        dim=1,
        f=f,
        grad=grad,
        f_star=0.0,
        lipschitz_L=L,
        pl=pl,
        dist_to_opt=lambda x: float(abs(_as_vec(x)[0])),
        params={"c": c, "q": q, "R": R},
    )


def cosh1d(R: float = 5.0) -> TestFunction:
    """``cosh(x) - 1``; 1-PL with mu = 1/2, L = cosh(R) on the working box."""

    def f(x: Array) -> float:
        # cosh x - 1 = 2 sinh^2(x/2) without cancellation near 0
        return 2.0 * math.sinh(0.5 * _as_vec(x)[0]) ** 2

    def grad(x: Array) -> Array:
        return np.sinh(_as_vec(x))

    return TestFunction(
        name="cosh1d",
        dim=1,
        f=f,
        grad=grad,
        f_star=0.0,
        lipschitz_L=math.cosh(R),
        pl=PLSpec(1.0, 0.5),
        dist_to_opt=lambda x: float(abs(_as_vec(x)[0])),
        params={"R": R},
    )


def cosh_sin_nonconvex(R: float = 5.0, mu: float = 5e-5) -> TestFunction:
    """``cosh(x) + 8 cosh(sin x) - 9``, nonconvex but 1-PL."""

    def f(x: Array) -> float:
        t = _as_vec(x)[0]
        return 2.0 * math.sinh(0.5 * t) ** 2 + 16.0 * math.sinh(0.5 * math.sin(t)) ** 2

    def grad(x: Array) -> Array:
        x = _as_vec(x)
        return np.sinh(x) + 8.0 * np.cos(x) * np.sinh(np.sin(x))

    # |f''| <= cosh R + 8 (sinh 1 + cosh 1)
    L = math.cosh(R) + 8.0 * math.e
    return TestFunction(
        name="cosh_sin_nonconvex",
        dim=1,
        f=f,
        grad=grad,
        f_star=0.0,
        lipschitz_L=L,
        pl=PLSpec(1.0, mu),
        dist_to_opt=lambda x: float(abs(_as_vec(x)[0])),
        params={"R": R, "mu": mu},
    )


def separable_compose(parts: Sequence[TestFunction]) -> TestFunction:
    """``(1/n) sum_i f_i(x_i)`` over concatenated coordinate blocks."""
    parts = tuple(parts)
    if not parts:
        raise ValueError("separable_compose needs at least one part")
    alphas = {p.pl.alpha for p in parts}
    if len(alphas) != 1:
        raise DomainError(f"parts must share the PL power, got {sorted(alphas)}")
    n = len(parts)
    dims = [p.dim for p in parts]
    cuts = np.cumsum([0] + dims)
    blocks = [slice(int(cuts[i]), int(cuts[i + 1])) for i in range(n)]

    def f(x: Array) -> float:
        x = _as_vec(x)
        return sum(p.f(x[s]) for p, s in zip(parts, blocks)) / n

    def grad(x: Array) -> Array:
        x = _as_vec(x)
        return np.concatenate([p.grad(x[s]) for p, s in zip(parts, blocks)]) / n

    def dist(x: Array) -> float:
        x = _as_vec(x)
        return math.sqrt(sum(p.dist_to_opt(x[s]) ** 2 for p, s in zip(parts, blocks)))

    has_dist = all(p.dist_to_opt is not None for p in parts)
    return TestFunction(
        name="separable",
        dim=int(cuts[-1]),
        f=f,
        grad=grad,
        f_star=sum(p.f_star for p in parts) / n,
        lipschitz_L=max(p.lipschitz_L for p in parts) / n,
        pl=PLSpec(alphas.pop(), min(p.pl.mu for p in parts) / n),
        dist_to_opt=dist if has_dist else None,
        parts=parts,
        params={"n_parts": n},
    )


def _dyadic(values: Array, bits: int = 24) -> Array:
    # values on a 2^-bits grid add up without rounding error
    return np.round(values * 2.0**bits) / 2.0**bits


def finite_sum_shifted(
    base: TestFunction,
    n: int,
    seed: int = 0,
    shift_scale: float = 1.0,
    curvature_spread: float = 0.0,
) -> TestFunction:
    """Finite sum whose mean is ``base``.

    Component ``i`` is ``s_i * base(x) + <z_i, x>``.  The shifts ``z_i`` are
    seeded Gaussians and the scales ``s_i`` are ``1 + spread * N(0, 1)``; both
    are rounded to a dyadic grid and recentred so that ``sum z_i = 0`` and
    ``mean s_i = 1`` hold exactly in floating point.  With the default
    ``curvature_spread = 0`` every pair difference is exact.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
    z = _dyadic(shift_scale * rng.standard_normal((n, base.dim)))
    z[-1] = -np.sum(z[:-1], axis=0)
    s = np.ones(n)
    if curvature_spread > 0:
        s = _dyadic(1.0 + curvature_spread * rng.standard_normal(n))
        s[-1] = n - np.sum(s[:-1])
    z.setflags(write=False)
    s.setflags(write=False)
    return TestFunction(
        name="finite_sum_shifted",
        dim=base.dim,
        f=base.f,
        grad=base.grad,
        f_star=base.f_star,
        lipschitz_L=base.lipschitz_L,
        pl=base.pl,
        dist_to_opt=base.dist_to_opt,
        params={"n": n, "seed": seed, "shift_scale": shift_scale,
                "curvature_spread": curvature_spread, "base": base.name},
        base=base,
        shifts=z,
        scales=s,
    )


def make_function(name: str, **kw) -> TestFunction:
    """Build a test function from its config name."""
    builders = {
        "quadratic": quadratic,
        "power_abs": power_abs,
        "cosh1d": cosh1d,
        "cosh_sin_nonconvex": cosh_sin_nonconvex,
    }
    if name not in builders:
        raise DomainError(f"unknown test function {name!r}; known: {sorted(builders)}")
    return builders[name](**kw)


# --------------------------------------------------------------------------
# verifiers


def verify_pl(fn: TestFunction, points: Sequence[ArrayLike]) -> float:
    """Smallest ratio ``||grad||^alpha / ((2 mu)^(alpha/2) gap)`` on the sample."""
    alpha, mu = fn.pl.alpha, fn.pl.mu
    best = math.inf
    for x in points:
        x = _as_vec(x)
        gap = fn.f(x) - fn.f_star
        if gap < GAP_FLOOR:
            continue
        gn = float(np.linalg.norm(fn.grad(x)))
        best = min(best, gn**alpha / ((2.0 * mu) ** (alpha / 2.0) * gap))
    return best


def grad_check(fn: TestFunction, points: Sequence[ArrayLike], step: float = 1e-5) -> float:
    """Largest mixed relative error between analytic and central-difference gradients.

    The error is ``|g - g_fd| / max(|g|, |g_fd|, 1)``, so it is relative for large
    gradients and absolute near stationary points.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    worst = 0.0
    for x in points:
        x = _as_vec(x)
        g = fn.grad(x)
        for i in range(fn.dim):
            e = np.zeros_like(x)
            e[i] = step
            fd = (fn.f(x + e) - fn.f(x - e)) / (2.0 * step)
            err = abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1.0)
            worst = max(worst, err)
    return worst


def dist_bound_ratio(fn: TestFunction, points: Sequence[ArrayLike]) -> float:
    """Largest ``dist(x, X*) / bound(x)`` where the bound comes from the PL inequality.

    bound(x) = alpha/(alpha-1) * (2 mu)^(-1/2) * gap^((alpha-1)/alpha); a value
    <= 1 certifies the inequality on the sample.
    """
    alpha, mu = fn.pl.alpha, fn.pl.mu
    if not alpha > 1:
        raise DomainError("the distance bound needs alpha > 1")
    if fn.dist_to_opt is None:
        raise ValueError(f"{fn.name} has no known solution set")
    worst = 0.0
    for x in points:
        x = _as_vec(x)
        gap = fn.f(x) - fn.f_star
        if gap < GAP_FLOOR:
            continue
        bound = alpha / (alpha - 1.0) / math.sqrt(2.0 * mu) * gap ** ((alpha - 1.0) / alpha)
        worst = max(worst, fn.dist_to_opt(x) / bound)
    return worst
