"""Policy-gradient testbed on small tabular MDPs with exact returns and gradients."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np

from .dynamics import write_csv
from .optimizers import PagerStage
from .oracle import make_rng

ENUM_CAP = 1_000_000  # largest (S*A)^H handled by trajectory enumeration


@dataclass(frozen=True, eq=False)
class TabularMdp:
    S: int
    A: int
    P: np.ndarray  # (S, A, S)
    R: np.ndarray  # (S, A)
    gamma: float
    rho: np.ndarray  # (S,)
    H: int

    def __post_init__(self) -> None:
        if self.P.shape != (self.S, self.A, self.S) or self.R.shape != (self.S, self.A):
            raise ValueError("P must be SxAxS and R must be SxA")
        if self.rho.shape != (self.S,):
            raise ValueError("rho must have length S")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must be distributions (sum to 1 within 1e-12)")
        if np.any(self.rho < 0) or abs(self.rho.sum() - 1.0) > 1e-12:
            raise ValueError("rho must be a distribution")
        if not (0.0 <= self.gamma < 1.0) or self.H < 1:
            raise ValueError("need gamma in [0, 1) and H >= 1")
        if not np.all(np.isfinite(self.R)):
            raise ValueError("rewards must be finite")

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.R)))


def fixture_path() -> Path:
    return Path(str(resources.files("klopt") / "data" / "fixture_mdp.txt"))


def save_mdp(mdp: TabularMdp, path: Union[str, Path], comment: str = "") -> None:
    """Plain-text format: header fields, then P rows (one per (s, a)) and R rows."""
    g = lambda v: format(float(v), ".12g")
    lines = []
    if comment:
        lines += [f"# {c}" for c in comment.splitlines()]
    lines += [f"S {mdp.S}", f"A {mdp.A}", f"H {mdp.H}", f"gamma {g(mdp.gamma)}",
              "rho " + " ".join(g(v) for v in mdp.rho), "P"]
    for s in range(mdp.S):
        for a in range(mdp.A):
            lines.append(" ".join(g(v) for v in mdp.P[s, a]))
    lines.append("R")
    for s in range(mdp.S):
        lines.append(" ".join(g(v) for v in mdp.R[s]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_mdp(path: Union[str, Path, None] = None) -> TabularMdp:
    """Read an MDP written by :func:`save_mdp`; defaults to the bundled fixture."""
    path = fixture_path() if path is None else Path(path)
    rows = [ln.split() for ln in path.read_text().splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")]
    head = {}
    i = 0
    while rows[i][0] != "P":
        head[rows[i][0]] = rows[i][1:]
        i += 1
    S, A, H = int(head["S"][0]), int(head["A"][0]), int(head["H"][0])
    P = np.array([list(map(float, r)) for r in rows[i + 1:i + 1 + S * A]]).reshape(S, A, S)
    i += 1 + S * A
    if rows[i][0] != "R":
        raise ValueError(f"{path}: expected 'R' section")
    R = np.array([list(map(float, r)) for r in rows[i + 1:i + 1 + S]]).reshape(S, A)
    return TabularMdp(S, A, P, R, float(head["gamma"][0]),
                      np.array(list(map(float, head["rho"]))), H)


def random_mdp(S: int, A: int, H: int, gamma: float, seed: int) -> TabularMdp:
    """Random instance with entries on a 1e-6 grid so rows sum to 1 exactly when printed."""
    rng = np.random.default_rng(seed)
    P = np.round(rng.dirichlet(np.ones(S), size=(S, A)), 6)
    P[..., -1] = np.round(1.0 - P[..., :-1].sum(axis=-1), 6)
    R = np.round(rng.uniform(0.0, 1.0, size=(S, A)), 6)
    rho = np.round(rng.dirichlet(np.ones(S)), 6)
    rho[-1] = np.round(1.0 - rho[:-1].sum(), 6)
    return TabularMdp(S, A, P, R, gamma, rho, H)


# ---- policies ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    theta: np.ndarray  # (S, A)

    @property
    def probs(self) -> np.ndarray:
        z = self.theta - self.theta.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def grad_log(self, s: int, a: int) -> np.ndarray:
        """``d/dtheta log pi(a|s)``: row s is ``e_a - pi(.|s)``, other rows zero."""
        g = np.zeros_like(self.theta)
        g[s] = -self.probs[s]
        g[s, a] += 1.0
        return g


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class TrajectoryBatch:
    """``n`` trajectories of length H stored as (n, H) arrays."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i], self.rewards[i])

    @classmethod
    def stack(cls, trajs: Sequence[Trajectory]) -> "TrajectoryBatch":
        if not trajs:
            raise ValueError("empty trajectory list")
        return cls(np.stack([t.states for t in trajs]), np.stack([t.actions for t in trajs]),
                   np.stack([t.rewards for t in trajs]))


def _as_batch(trajs) -> TrajectoryBatch:
    if isinstance(trajs, TrajectoryBatch):
        if len(trajs) == 0:
            raise ValueError("empty trajectory batch")
        return trajs
    if isinstance(trajs, Trajectory):
        return TrajectoryBatch.stack([trajs])
    return TrajectoryBatch.stack(list(trajs))


def sample_trajectories(mdp: TabularMdp, policy: SoftmaxPolicy, n: int,
                        rng: np.random.Generator) -> TrajectoryBatch:
    pi = policy.probs
    cpi = np.cumsum(pi, axis=1)
    cP = np.cumsum(mdp.P, axis=2)
    states = np.empty((n, mdp.H), dtype=np.int64)
    actions = np.empty((n, mdp.H), dtype=np.int64)
    s = np.minimum(np.searchsorted(np.cumsum(mdp.rho), rng.random(n), side="right"), mdp.S - 1)
    for h in range(mdp.H):
        a = np.minimum((rng.random(n)[:, None] >= cpi[s]).sum(axis=1), mdp.A - 1)
        states[:, h], actions[:, h] = s, a
        if h + 1 < mdp.H:
            s = np.minimum((rng.random(n)[:, None] >= cP[s, a]).sum(axis=1), mdp.S - 1)
    return TrajectoryBatch(states, actions, mdp.R[states, actions])


# ---- exact oracles -------------------------------------------------------------


def exact_return(mdp: TabularMdp, policy: SoftmaxPolicy) -> float:
    """Horizon-H discounted return by forward propagation of the state distribution."""
    pi = policy.probs
    r_pi = np.sum(pi * mdp.R, axis=1)
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    d = mdp.rho.copy()
    J = 0.0
    for h in range(mdp.H):
        J += mdp.gamma**h * float(d @ r_pi)
        d = d @ P_pi
    return J


def _enumerate(mdp: TabularMdp, policy: SoftmaxPolicy):
    """All (S*A)^H trajectories with their probabilities under ``policy``."""
    pi = policy.probs
    n = (mdp.S * mdp.A) ** mdp.H
    sa = np.array(list(itertools.product(range(mdp.S), range(mdp.A))))
    idx = np.array(list(itertools.product(range(mdp.S * mdp.A), repeat=mdp.H))).reshape(n, mdp.H)
    s, a = sa[idx, 0], sa[idx, 1]
    prob = mdp.rho[s[:, 0]] * np.prod(pi[s, a], axis=1)
    if mdp.H > 1:
        prob = prob * np.prod(mdp.P[s[:, :-1], a[:, :-1], s[:, 1:]], axis=1)
    return s, a, prob


def enumerate_return(mdp: TabularMdp, policy: SoftmaxPolicy) -> float:
    s, a, prob = _enumerate(mdp, policy)
    ret = (mdp.R[s, a] * mdp.gamma ** np.arange(mdp.H)).sum(axis=1)
    return float(prob @ ret)


def finite_difference_gradient(mdp: TabularMdp, policy: SoftmaxPolicy,
                               step: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(policy.theta)
    for s in range(mdp.S):
        for a in range(mdp.A):
            e = np.zeros_like(policy.theta)
            e[s, a] = step
            g[s, a] = (exact_return(mdp, SoftmaxPolicy(policy.theta + e))
                       - exact_return(mdp, SoftmaxPolicy(policy.theta - e))) / (2.0 * step)
    return g


def exact_policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy,
                          method: Literal["auto", "enumerate", "fd"] = "auto") -> np.ndarray:
    """Gradient of the horizon-H return.

    Enumeration differentiates ``sum_tau p(tau) R(tau)`` through the policy
    factors of ``p(tau)``; above ``ENUM_CAP`` trajectories the central
    finite-difference fallback is used.
    """
    if method == "fd":
        return finite_difference_gradient(mdp, policy)
    if (mdp.S * mdp.A) ** mdp.H > ENUM_CAP:
        if method == "enumerate":
            raise ValueError("instance too large to enumerate")
        warnings.warn("trajectory space too large to enumerate; using finite differences",
                      stacklevel=2)
        return finite_difference_gradient(mdp, policy)
    s, a, prob = _enumerate(mdp, policy)
    ret = (mdp.R[s, a] * mdp.gamma ** np.arange(mdp.H)).sum(axis=1)
    w = prob * ret
    pi = policy.probs
    g = np.zeros_like(policy.theta)
    for h in range(mdp.H):
        # sum over trajectories of w * (e_{a_h} - pi(.|s_h)) placed in row s_h
        np.add.at(g, (s[:, h], a[:, h]), w)
        ws = np.bincount(s[:, h], weights=w, minlength=mdp.S)
        g -= ws[:, None] * pi
    return g


def optimal_values(mdp: TabularMdp) -> tuple[float, np.ndarray]:
    """Finite-horizon dynamic programming; returns J* and the (H, S) greedy actions."""
    V = np.zeros(mdp.S)
    acts = np.zeros((mdp.H, mdp.S), dtype=np.int64)
    for h in reversed(range(mdp.H)):
        Q = mdp.R + mdp.gamma * mdp.P @ V
        acts[h] = np.argmax(Q, axis=1)
        V = Q.max(axis=1)
    return float(mdp.rho @ V), acts


def optimal_return(mdp: TabularMdp) -> float:
    return optimal_values(mdp)[0]


def deterministic_policy_return(mdp: TabularMdp, actions: Sequence[int]) -> float:
    theta = np.full((mdp.S, mdp.A), -np.inf)
    pi = np.zeros((mdp.S, mdp.A))
    pi[np.arange(mdp.S), np.asarray(actions)] = 1.0
    r_pi = np.sum(pi * mdp.R, axis=1)
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    d, J = mdp.rho.copy(), 0.0
    for h in range(mdp.H):
        J += mdp.gamma**h * float(d @ r_pi)
        d = d @ P_pi
    return J


# ---- estimators ----------------------------------------------------------------


def gpomdp_samples(trajs, policy: SoftmaxPolicy, gamma: float) -> np.ndarray:
    """Per-trajectory GPOMDP terms, shape (n, S, A)."""
    tb = _as_batch(trajs)
    n, H = tb.states.shape
    S, A = policy.theta.shape
    pi = policy.probs
    disc = tb.rewards * gamma ** np.arange(H)
    # the score at step z multiplies the discounted rewards from z onwards
    togo = np.cumsum(disc[:, ::-1], axis=1)[:, ::-1]
    out = np.zeros((n, S, A))
    rows = np.arange(n)
    for z in range(H):
        s, a, w = tb.states[:, z], tb.actions[:, z], togo[:, z]
        out[rows, s, :] -= w[:, None] * pi[s]
        out[rows, s, a] += w
    return out


def gpomdp(trajs, policy: SoftmaxPolicy, gamma: float) -> np.ndarray:
    """``(1/b) sum_i sum_h gamma^h r_h^i Z_h^i`` with cumulative scores ``Z_h``."""
    return gpomdp_samples(trajs, policy, gamma).mean(axis=0)


def importance_weight(trajs, theta_new: np.ndarray, theta_old: np.ndarray,
                      omega_max: Optional[float] = None) -> Union[float, np.ndarray]:
    """``prod_j pi_old(a_j|s_j) / pi_new(a_j|s_j)`` for trajectories drawn under ``theta_new``.

    It re-targets expectations from the sampling policy ``theta_new`` to
    ``theta_old``.  ``omega_max`` clips the weights (off by default).
    """
    single = isinstance(trajs, Trajectory)
    tb = _as_batch(trajs)
    lp_new = np.log(SoftmaxPolicy(theta_new).probs)
    lp_old = np.log(SoftmaxPolicy(theta_old).probs)
    w = np.exp(np.sum(lp_old[tb.states, tb.actions] - lp_new[tb.states, tb.actions], axis=1))
    if omega_max is not None:
        w = np.minimum(w, omega_max)
    return float(w[0]) if single else w


# ---- training loops --------------------------------------------------------------


@dataclass
class PgTrace:
    iter: np.ndarray
    J_exact: np.ndarray
    cum_trajectories: np.ndarray
    seed: int = 0
    algo: str = ""

    COLUMNS = ("iter", "J_exact", "cum_trajectories")

    def to_csv(self, path) -> None:
        write_csv(path, self.COLUMNS, [self.iter, self.J_exact, self.cum_trajectories])

    def trajectories_to_reach(self, level: float) -> Optional[int]:
        hit = np.nonzero(self.J_exact >= level)[0]
        return int(self.cum_trajectories[hit[0]]) if hit.size else None


@dataclass(frozen=True)
class SgdPgSchedule:
    """Mini-batch GPOMDP ascent with ``eta_k = c0 k^-zeta`` and batch b."""

    c0: float
    zeta: float
    b: int
    iters: int


@dataclass(frozen=True)
class PagePgSchedule:
    """Constant-parameter PAGE ascent; ``g0_batch`` seeds the estimate."""

    stage: PagerStage
    g0_batch: int


@dataclass(frozen=True)
class PagerPgSchedule:
    stages: tuple
    g0_batch: int
    max_iters: Optional[int] = None


PgSchedule = Union[SgdPgSchedule, PagePgSchedule, PagerPgSchedule]


def _page_pg(mdp, theta, stages, g0_batch, rng, omega_max, max_iters, stop_level=None):
    gamma = mdp.gamma
    g = gpomdp(sample_trajectories(mdp, SoftmaxPolicy(theta), g0_batch, rng),
               SoftmaxPolicy(theta), gamma)
    used = g0_batch
    Js, costs = [exact_return(mdp, SoftmaxPolicy(theta))], [used]
    it = 0
    for st in stages:
        for _ in range(st.T):
            if max_iters is not None and it >= max_iters:
                return Js, costs
            new = theta + st.eta * g
            pol_new = SoftmaxPolicy(new)
            if st.p >= 1.0 or rng.random() < st.p:
                g = gpomdp(sample_trajectories(mdp, pol_new, st.b, rng), pol_new, gamma)
                used += st.b
            else:
                tb = sample_trajectories(mdp, pol_new, st.b_prime, rng)
                w = importance_weight(tb, new, theta, omega_max)
                cur = gpomdp_samples(tb, pol_new, gamma)
                old = gpomdp_samples(tb, SoftmaxPolicy(theta), gamma)
                g = g + (cur - w[:, None, None] * old).mean(axis=0)
                used += st.b_prime
            theta = new
            it += 1
            Js.append(exact_return(mdp, pol_new))
            costs.append(used)
            if stop_level is not None and Js[-1] >= stop_level:
                return Js, costs
    return Js, costs


def run_pg(mdp: TabularMdp, algo: Literal["sgd", "page", "pager"], schedule: PgSchedule,
           seeds: Sequence[int], theta0: Optional[np.ndarray] = None,
           omega_max: Optional[float] = None,
           stop_level: Optional[float] = None) -> list[PgTrace]:
    """Policy-gradient ascent on J; one trace of exact returns per seed.

    With ``stop_level`` a run ends as soon as the exact return reaches it.
    """
    theta0 = np.zeros((mdp.S, mdp.A)) if theta0 is None else np.asarray(theta0, dtype=float)
    out = []
    for seed in seeds:
        rng = make_rng(seed, 7)
        theta = theta0.copy()
        if algo == "sgd":
            Js, costs, used = [exact_return(mdp, SoftmaxPolicy(theta))], [0], 0
            for k in range(1, schedule.iters + 1):
                pol = SoftmaxPolicy(theta)
                g = gpomdp(sample_trajectories(mdp, pol, schedule.b, rng), pol, mdp.gamma)
                theta = theta + schedule.c0 * k ** (-schedule.zeta) * g
                used += schedule.b
                Js.append(exact_return(mdp, SoftmaxPolicy(theta)))
                costs.append(used)
                if stop_level is not None and Js[-1] >= stop_level:
                    break
        elif algo == "page":
            Js, costs = _page_pg(mdp, theta, [schedule.stage], schedule.g0_batch, rng,
                                 omega_max, None, stop_level)
        elif algo == "pager":
            Js, costs = _page_pg(mdp, theta, schedule.stages, schedule.g0_batch, rng,
                                 omega_max, schedule.max_iters, stop_level)
        else:
            raise ValueError(f"unknown algorithm {algo!r}")
        n = len(Js)
        out.append(PgTrace(np.arange(n, dtype=np.int64), np.array(Js),
                           np.array(costs, dtype=np.int64), seed, algo))
    return out


def estimate_gpomdp_variance(mdp: TabularMdp, theta: np.ndarray, n: int,
                             rng: np.random.Generator) -> float:
    """Total variance ``E||g_1 - grad J||^2`` of a single-trajectory GPOMDP term."""
    pol = SoftmaxPolicy(theta)
    samples = gpomdp_samples(sample_trajectories(mdp, pol, n, rng), pol, mdp.gamma)
    return float(np.sum(samples.var(axis=0, ddof=1)))


def estimate_avg_smoothness(mdp: TabularMdp, theta: np.ndarray, radius: float, pairs: int,
                            n: int, rng: np.random.Generator) -> float:
    """Monte-Carlo average-smoothness constant of the importance-weighted differences.

    For random pairs at distance ``radius`` it returns the largest
    ``sqrt(E||dt - d||^2) / ||theta1 - theta2||`` with single-trajectory batches.
    """
    worst = 0.0
    for _ in range(pairs):
        u = rng.standard_normal(theta.shape)
        t1 = theta + radius * u / np.linalg.norm(u)
        p1, p0 = SoftmaxPolicy(t1), SoftmaxPolicy(theta)
        exact = exact_policy_gradient(mdp, p1) - exact_policy_gradient(mdp, p0)
        tb = sample_trajectories(mdp, p1, n, rng)
        w = importance_weight(tb, t1, theta)
        diff = gpomdp_samples(tb, p1, mdp.gamma) - w[:, None, None] * gpomdp_samples(tb, p0, mdp.gamma)
        err = float(np.mean(np.sum((diff - exact) ** 2, axis=(1, 2))))
        worst = max(worst, math.sqrt(err) / radius)
    return worst
