"""Stochastic gradient oracles with cost accounting and Monte-Carlo verifiers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike

from .klcore import Array, HSpec, TestFunction


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator owning the stream ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class AdditiveGaussian:
    """``grad f_xi(x) = grad f(x) + sigma * xi`` with ``xi ~ N(0, I)``.

    ``sigma2`` is the per-coordinate variance, so the trace is ``sigma2 * dim``.
    """

    sigma2: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma2 < 0:
            raise ValueError(f"sigma2 must be nonnegative, got {self.sigma2}")


@dataclass(frozen=True)
class FiniteSumSampling:
    """Uniform component sampling from a finite-sum test function.

    Indices are drawn with replacement unless ``replace`` is False.  With
    ``exact_full_batch`` a batch of size n takes every component once.
    """

    replace: bool = True
    exact_full_batch: bool = True


Noise = Union[AdditiveGaussian, FiniteSumSampling]


@dataclass(frozen=True)
class PairDiffSample:
    delta_tilde: Array
    cost: int


class GradOracle:
    """Single-owner oracle: holds an RNG stream and a sample counter."""

    def __init__(self, fn: TestFunction, noise: Noise, seed: int = 0, stream: int = 0):
        if isinstance(noise, FiniteSumSampling) and not fn.is_finite_sum:
            raise ValueError(f"finite-sum sampling needs a finite-sum function, got {fn.name}")
        self.fn = fn
        self.noise = noise
        self.rng_seed = int(seed)
        self.stream = int(stream)
        self.rng = make_rng(seed, stream)
        self.samples_used = 0

    # ---- queries -----------------------------------------------------------

    def _indices(self, b: int) -> np.ndarray:
        n = self.fn.n_components
        if b == n and self.noise.exact_full_batch:
            return np.arange(n)
        if self.noise.replace:
            return self.rng.integers(0, n, size=b)
        if b > n:
            raise ValueError(f"cannot draw {b} of {n} components without replacement")
        return self.rng.choice(n, size=b, replace=False)

    def sample_grad(self, x: ArrayLike, b: int) -> tuple[Array, int]:
        """Mean of ``b`` component gradients at ``x``; returns (vector, cost)."""
        if b < 1:
            raise ValueError(f"batch size must be >= 1, got {b}")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if isinstance(self.noise, AdditiveGaussian):
            # the mean of b iid N(0, sigma2 I) draws is N(0, sigma2/b I)
            xi = self.rng.standard_normal(self.fn.dim)
            g = self.fn.grad(x) + math.sqrt(self.noise.sigma2 / b) * xi
        else:
            idx = self._indices(b)
            g = self.fn.component_grads(x, idx).mean(axis=0)
        self.samples_used += b
        return g, b

    def sample_pair_diff(self, x: ArrayLike, y: ArrayLike, b_prime: int) -> PairDiffSample:
        """Shared-randomness estimate of ``grad f(x) - grad f(y)``."""
        if b_prime < 1:
            raise ValueError(f"batch size must be >= 1, got {b_prime}")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if isinstance(self.noise, AdditiveGaussian):
            noise = math.sqrt(self.noise.sigma2 / b_prime) * self.rng.standard_normal(self.fn.dim)
            dt = (self.fn.grad(x) + noise) - (self.fn.grad(y) + noise)
        else:
            idx = self._indices(b_prime)
            dt = (self.fn.component_grads(x, idx) - self.fn.component_grads(y, idx)).mean(axis=0)
        cost = 2 * b_prime
        self.samples_used += cost
        return PairDiffSample(dt, cost)

    # ---- analytic constants ------------------------------------------------

    def variance_trace(self) -> float:
        """``E||grad f_xi(x) - grad f(x)||^2`` for one sample, when it is x-independent."""
        if isinstance(self.noise, AdditiveGaussian):
            return self.noise.sigma2 * self.fn.dim
        if np.any(self.fn.scales != 1.0):
            raise ValueError("variance depends on x when component curvatures differ")
        return float(np.mean(np.sum(self.fn.shifts**2, axis=1)))

    def es_constants(self) -> tuple[float, float, float]:
        """Valid ``(A, B, C)`` for the expected-smoothness bound with ``h = 0``."""
        if isinstance(self.noise, AdditiveGaussian):
            return 0.0, 1.0, self.noise.sigma2 * self.fn.dim
        s, z = self.fn.scales, self.fn.shifts
        tr = float(np.mean(np.sum(z**2, axis=1)))
        var_s = float(np.mean((s - 1.0) ** 2))
        if var_s == 0.0:
            return 0.0, 1.0, tr
        # ||(s-1) g + z||^2 <= 2 (s-1)^2 ||g||^2 + 2 ||z||^2
        return 0.0, 1.0 + 2.0 * var_s, 2.0 * tr

    def avg_smoothness(self) -> float:
        """Average-smoothness constant of the shared-randomness pair differences.

        Both noise models make the pair difference exact unless component
        curvatures differ, in which case it is ``std(s) * L``.
        """
        if isinstance(self.noise, AdditiveGaussian):
            return 0.0
        var_s = float(np.mean((self.fn.scales - 1.0) ** 2))
        return math.sqrt(var_s) * self.fn.base.lipschitz_L


# --------------------------------------------------------------------------
# Monte-Carlo verifiers


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    value: float  # worst margin or empirical ratio

    def __bool__(self) -> bool:
        return self.ok


def verify_es(
    oracle: GradOracle,
    points: Sequence[ArrayLike],
    A: float,
    B: float,
    C: float,
    h: HSpec,
    b: int,
    trials: int = 1000,
) -> CheckResult:
    """Check ``E||g||^2 <= 2A h(gap) + B ||grad||^2 + C/b`` at every point.

    The returned value is the worst ratio estimate / RHS; the check passes when
    it stays below ``1 + 3/sqrt(trials)``.
    """
    if trials < 1000:
        raise ValueError("verify_es needs at least 1000 trials")
    fn = oracle.fn
    worst = 0.0
    for x in points:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        m2 = 0.0
        for _ in range(trials):
            g, _ = oracle.sample_grad(x, b)
            m2 += float(g @ g)
        m2 /= trials
        gn2 = float(np.sum(fn.grad(x) ** 2))
        rhs = 2.0 * A * h(max(fn.f(x) - fn.f_star, 0.0)) + B * gn2 + C / b
        ratio = math.inf if rhs == 0.0 and m2 > 0 else (m2 / rhs if rhs > 0 else 0.0)
        worst = max(worst, ratio)
    return CheckResult(worst <= 1.0 + 3.0 / math.sqrt(trials), worst)


def verify_avg_smoothness(
    oracle: GradOracle,
    x: ArrayLike,
    y: ArrayLike,
    b_prime: int,
    trials: int = 1000,
    L_script: Optional[float] = None,
) -> CheckResult:
    """Empirical ``E||dt - d||^2`` divided by ``(L^2/b') ||x - y||^2``.

    ``L_script`` defaults to the component Lipschitz constant, which always
    dominates the average-smoothness constant.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dist2 = float(np.sum((x - y) ** 2))
    if dist2 == 0.0:
        raise ValueError("x and y must differ")
    fn = oracle.fn
    Ls = fn.component_lipschitz() if L_script is None else L_script
    exact = fn.grad(x) - fn.grad(y)
    acc = 0.0
    for _ in range(trials):
        e = oracle.sample_pair_diff(x, y, b_prime).delta_tilde - exact
        acc += float(e @ e)
    lhs = acc / trials
    rhs = Ls**2 / b_prime * dist2
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0.0 else math.inf)
    return CheckResult(ratio <= 1.0 + 3.0 / math.sqrt(trials), ratio)
