"""Simulator for the SGD suboptimality recursion and its rate predictions.

The recursion, evaluated as an equality, is

    delta_{k+1} = delta + a eta^2 h(delta) - (eta/2) phi(delta)^2 + d eta^2 / b

with ``a = L*A`` and ``d = L*C/2`` for an L-smooth objective whose stochastic
gradients satisfy ``E||g||^2 <= 2A h(gap) + B||grad||^2 + C/b``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Optional, Union

import numpy as np

from .klcore import HSpec, PhiSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DynamicsParams:
    a: float
    d: float
    h: HSpec
    phi: PhiSpec
    tau: float = 0.0
    delta0: float = 1.0

    def __post_init__(self) -> None:
        if self.a < 0 or self.d < 0:
            raise ValueError(f"a and d must be nonnegative, got a={self.a}, d={self.d}")
        if not self.delta0 > 0:
            raise ValueError(f"delta0 must be positive, got {self.delta0}")
        if self.tau < 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")


# ---- stepsize schedules ----------------------------------------------------


@dataclass(frozen=True)
class PolyDecay:
    """``eta_k = min(eta_max, c0 * k^-zeta)``."""

    c0: float
    zeta: float
    eta_max: float = math.inf

    def __call__(self, k: int, delta: float = 0.0) -> float:
        return min(self.eta_max, self.c0 * k ** (-self.zeta))


@dataclass(frozen=True)
class Constant:
    eta: float

    def __call__(self, k: int, delta: float = 0.0) -> float:
        return self.eta


@dataclass(frozen=True)
class GreedyOptimal:
    """Per-step minimiser of ``(1 - a' eta^(1+eps)) r + c' eta^2`` over eta."""

    a_prime: float
    c_prime: float
    epsilon: float

    def __call__(self, k: int, delta: float = 0.0) -> float:
        e = self.epsilon
        return (self.a_prime * (1.0 + e) * delta / (2.0 * self.c_prime)) ** (1.0 / (1.0 - e))


StepSchedule = Union[PolyDecay, Constant, GreedyOptimal]


def batch_size(k: int, tau: float) -> int:
    return max(1, int(math.floor(k**tau)))


# ---- traces and fits -------------------------------------------------------


@dataclass
class Trace:
    k: np.ndarray
    delta: np.ndarray
    eta: np.ndarray
    batch: np.ndarray
    cum_cost: np.ndarray
    clamp_events: int = 0
    meta: dict = field(default_factory=dict)

    COLUMNS = ("k", "delta", "eta", "batch", "cum_cost")

    def __len__(self) -> int:
        return len(self.k)

    def to_csv(self, path) -> None:
        write_csv(path, self.COLUMNS, [self.k, self.delta, self.eta, self.batch, self.cum_cost])

    @classmethod
    def from_csv(cls, path) -> "Trace":
        cols = read_csv(path)
        return cls(
            k=cols["k"].astype(np.int64),
            delta=cols["delta"],
            eta=cols["eta"],
            batch=cols["batch"].astype(np.int64),
            cum_cost=cols["cum_cost"].astype(np.int64),
        )


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header: Iterable[str], columns: list) -> None:
    """Comma-separated, LF-terminated, floats with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        ints = [np.issubdtype(np.asarray(c).dtype, np.integer) for c in columns]
        for row in zip(*columns):
            w.writerow([str(int(v)) if isint else format(float(v), ".17g")
                        for v, isint in zip(row, ints)])


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [list(map(float, row)) for row in r]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    n_points: int = 0


def fit_loglog(x: np.ndarray, y: np.ndarray, x_min: float = 0.0,
               x_max: float = math.inf, min_points: int = 50) -> SlopeFit:
    """Least-squares line through ``(log x, log y)`` on ``x_min <= x <= x_max``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = (x >= x_min) & (x <= x_max) & (y > 0) & (x > 0) & np.isfinite(y)
    if m.sum() < min_points:
        raise ValueError(f"only {int(m.sum())} usable rows in window, need {min_points}")
    lx, ly = np.log(x[m]), np.log(y[m])
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0.0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return SlopeFit(float(slope), float(icpt), r2, (float(x[m][0]), float(x[m][-1])), int(m.sum()))


def fit_loglog_slope(trace: Trace, k_min: float, k_max: float = math.inf,
                     against: Literal["k", "cost"] = "k") -> SlopeFit:
    """Slope of log delta against log k (or log cumulative cost) for k in [k_min, k_max]."""
    in_window = (trace.k >= k_min) & (trace.k <= k_max)
    x = trace.k if against == "k" else trace.cum_cost
    x = np.where(in_window, x, -1.0)
    return fit_loglog(x, trace.delta)


def default_window(K: int) -> float:
    """First k kept by slope fits: the transient ``max(100, 0.2 K)`` is discarded."""
    return max(100.0, 0.2 * K)


# ---- the recursion ---------------------------------------------------------


def recursion_step(params: DynamicsParams, delta: float, eta: float, b: int) -> float:
    if delta < 0 or not eta > 0 or b < 1:
        raise ValueError("need delta >= 0, eta > 0, b >= 1")
    nxt = (delta + params.a * eta * eta * params.h(delta)
           - 0.5 * eta * params.phi.sq(delta) + params.d * eta * eta / b)
    return max(0.0, nxt)


def _gamma(params: DynamicsParams) -> Optional[float]:
    if params.phi.kind != "power" or params.h.kind != "power":
        return None
    return params.phi.alpha * params.h.beta


def stationary_point(params: DynamicsParams, eta: float, b: int = 1) -> float:
    """Positive root of ``a eta h(t) + d eta / b = phi(t)^2 / 2``.

    For the power family this is ``a eta t^beta + d eta/b = mu t^(2/alpha)``.
    Closed forms are used where available, geometric bisection otherwise.
    """
    a = 0.0 if params.h.kind == "zero" else params.a
    d, phi = params.d, params.phi
    if a == 0.0 and d == 0.0:
        return 0.0
    gamma = _gamma(params)
    if phi.kind == "power":
        mu, alpha = phi.mu, phi.alpha
        if gamma is not None and abs(gamma - 2.0) < 1e-12:
            if mu <= a * eta:
                raise ValueError(f"no finite stationary point: mu={mu} <= a*eta={a * eta}")
            return (d * eta / b) / (mu - a * eta)
        if d == 0.0 and gamma is not None:
            return (a * eta / mu) ** (alpha / (2.0 - gamma))

    def F(t: float) -> float:
        return 0.5 * phi.sq(t) - a * eta * params.h(t) - d * eta / b

    lo = 1e-300
    if phi.kind == "power" and gamma is not None:
        hi = 2.0 * max(1.0, ((a * eta + d * eta / b) / phi.mu) ** (phi.alpha / (2.0 - gamma)))
    else:
        hi = 2.0
    for _ in range(2000):
        if F(hi) > 0:
            break
        hi *= 2.0
    else:
        raise ValueError("no finite stationary point: phi^2/2 never dominates the noise terms")
    if d == 0.0:
        # t = 0 is a root too; bracket the positive one away from it
        lo = hi
        while F(lo) > 0 and lo > 1e-300:
            lo *= 0.5
        if F(lo) > 0:
            return 0.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if F(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi / lo - 1.0 < 1e-13:
            break
    return math.sqrt(lo * hi)


@dataclass(frozen=True)
class PredictedRate:
    branch: str
    zeta: float
    predicted_slope: float  # decay exponent of delta_k, reported positive


def corollary1_rate(alpha: float, beta: float, tau: float,
                    branch: Optional[str] = None) -> PredictedRate:
    """Stepsize exponent zeta and decay exponent of delta_k for the power family.

    ``branch`` forces ``"ii-a"`` or ``"ii-b"`` regardless of the threshold on
    tau; with no override the branch follows the threshold.
    """
    if not (1.0 <= alpha <= 2.0) or not (0.0 < beta <= 1.0) or tau < 0:
        raise ValueError(f"need alpha in [1,2], beta in (0,1], tau >= 0; got {alpha}, {beta}, {tau}")
    gamma = alpha * beta
    if abs(gamma - 2.0) < 1e-12:
        return PredictedRate("i", 1.0, 1.0 + tau)
    threshold = gamma / (4.0 - alpha - gamma)
    if branch is None:
        branch = "ii-a" if tau <= threshold else "ii-b"
    if branch == "ii-a":
        zeta = (tau + 1.0) / (2.0 - alpha / 2.0) - tau
        return PredictedRate("ii-a", zeta, alpha * (tau + 1.0) / (4.0 - alpha))
    if branch == "ii-b":
        zeta = (2.0 - gamma) / (4.0 - alpha - gamma)
        return PredictedRate("ii-b", zeta, alpha / (4.0 - alpha - gamma))
    raise ValueError(f"unknown branch {branch!r}")


def simulate(params: DynamicsParams, schedule: StepSchedule, K: int, T: int = 1,
             safety: float = 0.5) -> Trace:
    """Iterate the recursion for stages k = 1..K with T steps per stage.

    Stage k uses ``eta_k`` from the schedule and batch ``max(1, floor(k^tau))``.
    A step whose deterministic contraction ``(eta/2) phi^2(delta)`` alone would
    exceed ``delta`` is an overshoot artefact of the equality form; the
    stepsize is then clamped to ``safety * 2 delta / phi^2(delta)``.
    """
    if K < 10:
        raise ValueError("K must be at least 10")
    if T < 1:
        raise ValueError("T must be at least 1")
    a = 0.0 if params.h.kind == "zero" else params.a
    d, tau = params.d, params.tau
    h, phi_sq = params.h, params.phi.sq
    greedy = isinstance(schedule, GreedyOptimal)
    ks = np.arange(1, K + 1, dtype=np.int64)
    deltas = np.empty(K)
    etas = np.empty(K)
    batches = np.empty(K, dtype=np.int64)
    costs = np.empty(K, dtype=np.int64)
    delta = float(params.delta0)
    cost = 0
    clamps = 0
    for i in range(K):
        k = i + 1
        b = batch_size(k, tau)
        eta0 = schedule(k, delta) if not greedy else 0.0
        for _ in range(T):
            eta = schedule(k, delta) if greedy else eta0
            p2 = phi_sq(delta)
            if 0.5 * eta * p2 > delta:
                eta = safety * 2.0 * delta / p2
                clamps += 1
            ah = a * h(delta) if a else 0.0
            delta = max(0.0, delta + eta * eta * (ah + d / b) - 0.5 * eta * p2)
            cost += b
        deltas[i] = delta
        etas[i] = eta
        batches[i] = b
        costs[i] = cost
    if clamps:
        log.debug("simulate: %d clamp events", clamps)
    return Trace(ks, deltas, etas, batches, costs, clamps)


def theorem1_residual(params: DynamicsParams, eta: float, k: int, b: int = 1) -> float:
    """``omega_k = k (eta phi'(r) phi(r) - a eta^2 h'(r))`` at ``r = r(eta)``."""
    r = stationary_point(params, eta, b)
    contraction = 0.5 * eta * params.phi.sq_deriv(r)
    a = 0.0 if params.h.kind == "zero" else params.a
    growth = a * eta * eta * params.h.deriv(r) if a else 0.0
    return k * (contraction - growth)


def restart_inner_length(zeta_nu: float, omega_min: float) -> int:
    """Inner-loop length ``ceil((zeta nu + 1) / min omega)`` for restarted SGD."""
    if not omega_min > 0:
        raise ValueError("omega_min must be positive")
    return max(1, int(math.ceil((zeta_nu + 1.0) / omega_min)))


def default_inner_length(params: DynamicsParams, schedule: StepSchedule, K: int,
                         zeta_nu: float, k_start: int = 10) -> int:
    """Inner length from the smallest residual omega_k over a log grid of stages."""
    ks = np.unique(np.geomspace(k_start, K, 60).astype(np.int64))
    omegas = [theorem1_residual(params, schedule(int(k)), int(k), batch_size(int(k), params.tau))
              for k in ks]
    return restart_inner_length(zeta_nu, min(omegas))


@dataclass(frozen=True)
class NotReached:
    final_delta: float

    def __bool__(self) -> bool:
        return False


def sample_cost(trace: Trace, target_delta: float) -> Union[int, NotReached]:
    """Cumulative cost at the first k with delta_k <= target, else a NotReached sentinel."""
    hit = np.nonzero(trace.delta <= target_delta)[0]
    if hit.size == 0:
        return NotReached(float(trace.delta[-1]))
    return int(trace.cum_cost[hit[0]])


# ---- tightness dynamics -----------------------------------------------------


def two_phase_stepsize(k: int, K: int, a_prime: float, epsilon: float, s: float,
                       b_prime: float) -> float:
    """Constant-then-polynomial schedule attaining the lower-bound rate."""
    e = epsilon
    const = (1.0 / b_prime) ** (1.0 / (1.0 + e))
    half = K // 2
    if k < half or K <= b_prime ** ((1.0 - e) / (1.0 + e)) / a_prime:
        return const
    return min(const, (2.0 / (1.0 + e) / (a_prime * (s + k - half))) ** (1.0 / (1.0 + e)))


def greedy_constant(a_prime: float, c_prime: float, epsilon: float) -> float:
    """``A`` in the closed-form greedy dynamic ``r' = r (1 - A r^(2/(1-eps) - 1))``."""
    e = epsilon
    return c_prime * (1.0 - e) / (1.0 + e) * (a_prime * (1.0 + e) / (2.0 * c_prime)) ** (2.0 / (1.0 - e))


def tightness_simulate(a_prime: float, c_prime: float, epsilon_prime: float, s: float,
                       K: int, mode: Literal["greedy", "two_phase", "schedule"] = "greedy",
                       b_prime: float = 1.0, r0: float = 1.0,
                       schedule: Optional[StepSchedule] = None) -> Trace:
    """Simulate ``r_{k+1} = (1 - a' eta^(1+eps)) r_k + c' eta^2``.

    ``mode`` selects the greedy optimal stepsize, the two-phase schedule, or a
    user schedule (capped at 1/b').  Rows are k = 1..K holding r_k.
    """
    e = epsilon_prime
    if not (0.0 <= e < 1.0):
        raise ValueError(f"epsilon' must lie in [0, 1), got {e}")
    if s < 2:
        raise ValueError(f"s must be at least 2, got {s}")
    eta_cap = 1.0 / b_prime
    greedy = GreedyOptimal(a_prime, c_prime, e)
    r = float(r0)
    rs = np.empty(K)
    etas = np.empty(K)
    for i in range(K):
        k = i  # stepsize index starts at 0 as in the lower-bound construction
        if mode == "greedy":
            eta = greedy(k, r)
            if eta > eta_cap * (1.0 + 1e-12):
                raise ValueError(f"greedy stepsize {eta:.4g} exceeds 1/b' = {eta_cap:.4g} at step {k}")
        elif mode == "two_phase":
            eta = two_phase_stepsize(k, K, a_prime, e, s, b_prime)
        else:
            eta = min(eta_cap, schedule(k + 1, r))
        if a_prime * eta ** (1.0 + e) > 1.0:
            raise ValueError(f"stepsize {eta:.4g} makes the contraction factor negative")
        r = (1.0 - a_prime * eta ** (1.0 + e)) * r + c_prime * eta * eta
        rs[i] = r
        etas[i] = eta
    ks = np.arange(1, K + 1, dtype=np.int64)
    return Trace(ks, rs, etas, np.ones(K, dtype=np.int64), ks.copy())


def exponent_gain(candidate: Trace, reference: Trace, k_min: float,
                  k_max: float = math.inf) -> float:
    """Largest ``log(r_ref / r_cand) / log k`` over the window.

    It measures by how much the candidate's level beats the reference rate
    ``k^-s`` in exponent units; a value <= 0 means the candidate never gets
    below the reference anywhere in the window.
    """
    k = candidate.k.astype(float)
    m = (k >= k_min) & (k <= k_max) & (k > 1)
    if not np.any(m):
        raise ValueError("empty window")
    with np.errstate(divide="ignore"):
        g = (np.log(reference.delta[m]) - np.log(candidate.delta[m])) / np.log(k[m])
    return float(np.max(g))


@dataclass(frozen=True)
class ScheduleCandidate:
    schedule: StepSchedule
    slope: float  # least-squares slope over the window
    gain: float  # exponent gain over the greedy trajectory


def random_schedule_search(a_prime: float, c_prime: float, epsilon: float, n_candidates: int,
                           K: int, k_min: float, seed: int = 0, b_prime: float = 1.0,
                           r0: float = 1.0) -> list[ScheduleCandidate]:
    """Randomly drawn polynomial and constant schedules scored against the greedy dynamic.

    Every fifth candidate is a constant stepsize; the others are ``c0 k^-zeta``
    with log-uniform ``c0`` and uniform ``zeta`` in [0, 1.5].
    """
    rng = np.random.default_rng(seed)
    ref = tightness_simulate(a_prime, c_prime, epsilon, 2, K, mode="greedy",
                             b_prime=b_prime, r0=r0)
    out = []
    for i in range(n_candidates):
        if i % 5 == 4:
            sched: StepSchedule = Constant(float(10.0 ** rng.uniform(-4, 0)) / b_prime)
        else:
            sched = PolyDecay(float(10.0 ** rng.uniform(-2, 1.5)), float(rng.uniform(0.0, 1.5)))
        tr = tightness_simulate(a_prime, c_prime, epsilon, 2, K, mode="schedule",
                                b_prime=b_prime, r0=r0, schedule=sched)
        out.append(ScheduleCandidate(sched, fit_loglog_slope(tr, k_min).slope,
                                     exponent_gain(tr, ref, k_min)))
    return out
