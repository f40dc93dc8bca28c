"""Gradient descent, SGD with restarts, PAGE and PAGER."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike

from .dynamics import StepSchedule, batch_size, write_csv
from .klcore import Array, TestFunction
from .oracle import GradOracle, make_rng

P_MIN = 1e-6


@dataclass(frozen=True)
class SgdConfig:
    K: int
    T: int
    eta_schedule: StepSchedule
    tau: float = 0.0

    def __post_init__(self) -> None:
        if self.K < 1 or self.T < 1:
            raise ValueError(f"need K >= 1 and T >= 1, got K={self.K}, T={self.T}")


@dataclass(frozen=True)
class PagerStage:
    eta: float
    T: int
    p: float
    b: int
    b_prime: int

    def __post_init__(self) -> None:
        if not (0.0 < self.p <= 1.0):
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if not (self.b >= self.b_prime >= 1):
            raise ValueError(f"need b >= b' >= 1, got b={self.b}, b'={self.b_prime}")
        if not self.eta > 0 or self.T < 1:
            raise ValueError(f"need eta > 0 and T >= 1, got eta={self.eta}, T={self.T}")

    @property
    def expected_cost(self) -> float:
        """Expected oracle cost of one PAGE iteration."""
        return self.p * self.b + 2.0 * (1.0 - self.p) * self.b_prime


@dataclass
class PagerState:
    x: Array
    g: Array


@dataclass
class OptRunRecord:
    """Per-iteration log. Row i is the state after i updates (row 0 is x0)."""

    iter: np.ndarray
    f_gap: np.ndarray
    grad_norm: np.ndarray
    cum_cost: np.ndarray
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)
    stage_start: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    snapshots: list = field(default_factory=list)  # (x_bar, g_bar) at each stage boundary

    COLUMNS = ("iter", "f_gap", "grad_norm", "cum_cost")

    def __len__(self) -> int:
        return len(self.iter)

    def to_csv(self, path) -> None:
        write_csv(path, self.COLUMNS, [self.iter, self.f_gap, self.grad_norm, self.cum_cost])

    def cost_to_reach(self, eps: float) -> Optional[int]:
        hit = np.nonzero(self.f_gap <= eps)[0]
        return int(self.cum_cost[hit[0]]) if hit.size else None


class _Recorder:
    def __init__(self, fn: TestFunction, n: int):
        self.fn = fn
        self.gap = np.empty(n + 1)
        self.gn = np.empty(n + 1)
        self.cost = np.empty(n + 1, dtype=np.int64)
        self.i = 0

    def __call__(self, x: Array, cost: int) -> None:
        i = self.i
        self.gap[i] = self.fn.f(x) - self.fn.f_star
        self.gn[i] = math.sqrt(float(np.sum(self.fn.grad(x) ** 2)))
        self.cost[i] = cost
        self.i += 1

    def record(self, **kw) -> OptRunRecord:
        n = self.i
        return OptRunRecord(np.arange(n, dtype=np.int64), self.gap[:n].copy(),
                            self.gn[:n].copy(), self.cost[:n].copy(), **kw)


def _x0(fn: TestFunction, x0: ArrayLike) -> Array:
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if x.shape != (fn.dim,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({fn.dim},)")
    return x


def run_gd(fn: TestFunction, eta: Union[float, Callable[[int], float]], N: int,
           x0: ArrayLike) -> OptRunRecord:
    """Full-gradient descent; each step costs n component gradients."""
    eta_of = eta if callable(eta) else (lambda k: eta)
    if not callable(eta) and eta > 1.0 / fn.lipschitz_L * (1 + 1e-12):
        warnings.warn(f"eta={eta} exceeds 1/L={1.0 / fn.lipschitz_L:.4g}", stacklevel=2)
    n = fn.n_components
    x = _x0(fn, x0)
    rec = _Recorder(fn, N)
    rec(x, 0)
    for k in range(1, N + 1):
        x = x - eta_of(k) * fn.grad(x)
        rec(x, k * n)
    return rec.record(config={"algo": "gd", "N": N})


def run_sgd_restarts(fn: TestFunction, oracle: GradOracle, config: SgdConfig,
                     x0: ArrayLike) -> OptRunRecord:
    """K stages of T SGD steps; stage k uses eta_k and batch max(1, floor(k^tau))."""
    eta1 = config.eta_schedule(1)
    if eta1 > 1.0 / fn.lipschitz_L * (1 + 1e-12):
        warnings.warn(f"first stepsize {eta1:.4g} exceeds 1/L={1.0 / fn.lipschitz_L:.4g}",
                      stacklevel=2)
    x = _x0(fn, x0)
    rec = _Recorder(fn, config.K * config.T)
    start = oracle.samples_used
    rec(x, 0)
    stage_start = np.empty(config.K, dtype=np.int64)
    for k in range(1, config.K + 1):
        stage_start[k - 1] = rec.i - 1
        eta = config.eta_schedule(k)
        b = batch_size(k, config.tau)
        for _ in range(config.T):
            g, _ = oracle.sample_grad(x, b)
            x = x - eta * g
            rec(x, oracle.samples_used - start)
    return rec.record(seed=oracle.rng_seed, stage_start=stage_start,
                      config={"algo": "sgd", "K": config.K, "T": config.T, "tau": config.tau})


def page_step(state: PagerState, stage: PagerStage, oracle: GradOracle,
              rng: np.random.Generator) -> tuple[PagerState, int]:
    """One PAGE update: move with the current estimate, then refresh or correct it."""
    x_new = state.x - stage.eta * state.g
    if stage.p >= 1.0 or rng.random() < stage.p:
        g, cost = oracle.sample_grad(x_new, stage.b)
    else:
        pd = oracle.sample_pair_diff(x_new, state.x, stage.b_prime)
        g, cost = state.g + pd.delta_tilde, pd.cost
    return PagerState(x_new, g), cost


def run_pager(fn: TestFunction, oracle: GradOracle, stages: Sequence[PagerStage],
              x0: ArrayLike, g0_batch: Optional[int] = None,
              rng: Optional[np.random.Generator] = None,
              max_iters: Optional[int] = None,
              stop_gap: Optional[float] = None) -> OptRunRecord:
    """PAGE with parameters restarted at every stage; (x, g) carry over.

    ``g0_batch`` defaults to ten times the first stage's b'.  The coin flips use
    ``rng``, by default a stream next to the oracle's.  ``max_iters`` truncates
    long schedules and ``stop_gap`` ends the run once f - f* drops below it.
    """
    if not stages:
        raise ValueError("need at least one stage")
    if rng is None:
        rng = make_rng(oracle.rng_seed, oracle.stream + 1_000_003)
    total = sum(s.T for s in stages)
    if max_iters is not None:
        total = min(total, max_iters)
    g0_batch = 10 * stages[0].b_prime if g0_batch is None else g0_batch
    x = _x0(fn, x0)
    start = oracle.samples_used
    g, _ = oracle.sample_grad(x, g0_batch)
    state = PagerState(x, g)
    rec = _Recorder(fn, total)
    rec(x, oracle.samples_used - start)
    snaps = [(state.x.copy(), state.g.copy())]
    starts = []
    done = 0
    for st in stages:
        if done >= total:
            break
        starts.append(rec.i - 1)
        stopped = False
        for _ in range(min(st.T, total - done)):
            state, _ = page_step(state, st, oracle, rng)
            rec(state.x, oracle.samples_used - start)
            if stop_gap is not None and rec.gap[rec.i - 1] <= stop_gap:
                stopped = True
                break
        done += st.T
        snaps.append((state.x.copy(), state.g.copy()))
        if stopped:
            break
    return rec.record(seed=oracle.rng_seed, stage_start=np.array(starts, dtype=np.int64),
                      snapshots=snaps,
                      config={"algo": "pager", "stages": [s.__dict__.copy() for s in stages]})


def run_page(fn: TestFunction, oracle: GradOracle, stage: PagerStage, x0: ArrayLike,
             g0_batch: Optional[int] = None) -> OptRunRecord:
    """Constant-parameter PAGE (a single stage); usable for alpha = 2."""
    return run_pager(fn, oracle, [stage], x0, g0_batch=g0_batch)


# ---- stage schedules --------------------------------------------------------


def stage_bound_u(alpha: float) -> float:
    """``U`` bounding ``r_k`` for ``r_{k+1} <= r_k (1 - b r_k^c)`` with c = (2-alpha)/alpha."""
    c = (2.0 - alpha) / alpha
    return 2.0 ** (1.0 / c) * c ** (-2.0 / c - 1.0) + c ** (-1.0 / c)


@dataclass(frozen=True)
class ScheduleScale:
    """Multipliers on the schedule quantities; all 1 reproduces the formulas verbatim."""

    eta: float = 1.0
    T: float = 1.0
    b: float = 1.0
    b_prime: float = 1.0


def _ceil(v: float) -> int:
    return max(1, int(math.ceil(v - 1e-9 * abs(v))))


def _check_schedule_alpha(alpha: float) -> None:
    if not (1.0 <= alpha < 2.0):
        raise ValueError(f"PAGER schedules need alpha in [1, 2), got {alpha}")


def build_pager_online_schedule(alpha: float, mu: float, L_script: float, sigma2: float,
                                psi_bar0: float, K: int, L: Optional[float] = None,
                                scale: ScheduleScale = ScheduleScale()) -> list[PagerStage]:
    """Stage parameters for streaming problems.

    ``sigma2`` is the total variance ``E||g - grad f||^2`` of one sample.  If a
    smoothness constant ``L`` is given, eta is additionally capped at 1/(2L).
    ``b`` is raised to ``b'`` when the formula gives less.
    """
    _check_schedule_alpha(alpha)
    if not (mu > 0 and L_script > 0 and psi_bar0 > 0 and sigma2 >= 0):
        raise ValueError("mu, L_script, psi_bar0 must be positive and sigma2 nonnegative")
    kappa = L_script / mu
    eta = min(1.0 / (2.0 * kappa), alpha / 8.0) / mu
    if L is not None:
        eta = min(eta, 1.0 / (2.0 * L))
    eta *= scale.eta
    e = (2.0 - alpha) / alpha
    U = stage_bound_u(alpha)
    stages = []
    for k in range(K):
        ratio = 2.0**k / psi_bar0
        bp = _ceil(scale.b_prime * alpha / (8.0 * eta * mu) * ratio**e)
        p = max(P_MIN, min(1.0, 1.0 / (1.0 + bp)))
        b = math.ceil(scale.b * (2.0 * 2.0**e * ratio) ** (2.0 / alpha) * sigma2
                      / (4.0 * mu * eta**2 * L_script**2))
        b = max(b, bp)
        inner = 2.0 * 2.0**e * (ratio * U + 2.0 * (eta * mu / 2.0) ** (alpha / (2.0 - alpha)))
        T = _ceil(scale.T * 2.0 / (eta * mu) * inner**e)
        stages.append(PagerStage(eta, T, p, b, bp))
    return stages


def build_pager_finite_sum_schedule(alpha: float, mu: float, L_script: float, n: int,
                                    psi_bar0: float, K: int,
                                    scale: ScheduleScale = ScheduleScale()) -> list[PagerStage]:
    """Stage parameters for an n-component finite sum (b = n, b' = 1, p = 1/(n+1))."""
    _check_schedule_alpha(alpha)
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    e = (2.0 - alpha) / alpha
    U = stage_bound_u(alpha)
    p = 1.0 / (n + 1.0)
    cap = math.inf if L_script == 0 else 1.0 / (2.0 * math.sqrt(n) * L_script)
    stages = []
    for k in range(K):
        ratio = 2.0**k / psi_bar0
        eta = scale.eta * min(cap, alpha / (4.0 * mu * (n + 1.0)) * ratio**e)
        em = eta * mu
        T = _ceil(scale.T / em * (U * 2.0 * ratio + 2.0 * em ** (alpha / (2.0 - alpha))) ** e)
        bp = _ceil(scale.b_prime)
        stages.append(PagerStage(eta, T, p, max(bp, _ceil(scale.b * n)), bp))
    return stages


def lyapunov_lambda(stage: PagerStage, L_script: float) -> float:
    """Weight of the estimator error in the stage Lyapunov function."""
    if stage.p >= 1.0 or L_script == 0:
        return 0.0
    return stage.b_prime / (4.0 * stage.eta * (1.0 - stage.p) * L_script**2)


def estimate_psi_bar0(fn: TestFunction, x0: ArrayLike, margin: float = 0.1) -> float:
    """Upper estimate ``(1 + margin) (f(x0) - f*)`` of the initial Lyapunov value."""
    return (1.0 + margin) * fn.gap(x0)


# ---- estimator diagnostics ----------------------------------------------------


@dataclass(frozen=True)
class PageMoments:
    """Monte-Carlo moments of one PAGE estimator step, per checked step t.

    ``bias`` is the mean of ``g_{t+1} - grad f(x_{t+1})`` and ``slack`` the mean
    of ``G_{t+1} - (1-p) G_t - (1-p) L^2 R_t / b' - p sigma^2 / (2b)``; the
    ``*_se`` fields are their standard errors.
    """

    bias: np.ndarray  # (steps, dim)
    bias_se: np.ndarray
    slack: np.ndarray  # (steps,)
    slack_se: np.ndarray


def page_moment_check(fn: TestFunction, oracle: GradOracle, stage: PagerStage, x0: ArrayLike,
                      steps: int, draws: int, g0_batch: int, L_script: float,
                      rng: np.random.Generator) -> PageMoments:
    """Run ``draws`` independent PAGE chains from ``x0`` and collect step moments.

    Each chain starts from an unbiased estimate ``g_0`` built from ``g0_batch``
    samples.  The variance bound used at ``x_{t+1}`` is the exact one-sample
    variance there (the trace of the Gaussian covariance, or the component
    average for a finite sum).
    """
    x0 = _x0(fn, x0)
    d = fn.dim
    err = np.empty((draws, steps, d))
    slack = np.empty((draws, steps))
    p, Ls2 = stage.p, L_script**2
    for i in range(draws):
        x = x0
        g, _ = oracle.sample_grad(x, g0_batch)
        state = PagerState(x, g)
        for t in range(steps):
            G_t = 0.5 * float(np.sum((state.g - fn.grad(state.x)) ** 2))
            new, _ = page_step(state, stage, oracle, rng)
            e = new.g - fn.grad(new.x)
            R_t = 0.5 * float(np.sum((new.x - state.x) ** 2))
            sigma2 = _one_sample_variance(fn, oracle, new.x)
            err[i, t] = e
            slack[i, t] = (0.5 * float(e @ e) - (1.0 - p) * G_t - (1.0 - p) * Ls2 / stage.b_prime * R_t
                           - p * sigma2 / (2.0 * stage.b))
            state = new
    root = math.sqrt(draws)
    return PageMoments(err.mean(axis=0), err.std(axis=0, ddof=1) / root,
                       slack.mean(axis=0), slack.std(axis=0, ddof=1) / root)


def _one_sample_variance(fn: TestFunction, oracle: GradOracle, x: Array) -> float:
    if not fn.is_finite_sum:
        return oracle.variance_trace()
    comps = fn.component_grads(x, np.arange(fn.n_components))
    return float(np.mean(np.sum((comps - fn.grad(x)) ** 2, axis=1)))
