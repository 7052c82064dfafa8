"""Derivative-free policy search (ARS and CEM) over batched rollouts."""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .arm import ArmParams
from .policy import Normalizer, Policy
from .rollout import REST_POSE, obs_dim, simulate
from .tasks import TaskConfig

log = logging.getLogger(__name__)

EVAL_SEED_BASE = 1_000_000  # held-out seeds for the learning curve live above this


class Algorithm(str, enum.Enum):
    ARS = "ars"
    CEM = "cem"


@dataclass(frozen=True)
class TrainConfig:
    algorithm: Algorithm = Algorithm.ARS
    iterations: int = 200
    directions: int = 16  # ARS: perturbation pairs; CEM: population size
    step_size: float = 0.02
    noise_std: float = 0.03
    elite_fraction: float = 0.25
    top_directions: int = 0  # ARS: keep the best b directions (0 = all)
    rollouts_per_candidate: int = 2
    eval_episodes: int = 2
    seed: int = 0
    max_wall_steps: int = 0  # per-episode step cap, 0 = task default
    hidden: tuple = (32, 32)
    trials_per_episode: int = 0  # training episode length override, 0 = task default
    update_normalizer: bool = True
    initial_command: float = 0.5  # constant muscle command of the untrained policy

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("directions", "rollouts_per_candidate", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be > 0")
        for name in ("step_size", "noise_std"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.initial_command < 1:
            raise ValueError("initial_command must lie in (0, 1)")
        if not 0 < self.elite_fraction <= 1:
            raise ValueError("elite_fraction must lie in (0, 1]")
        if not 0 <= self.top_directions <= self.directions:
            raise ValueError("top_directions must lie in [0, directions]")
        for name in ("max_wall_steps", "trials_per_episode", "seed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["algorithm"] = self.algorithm.value
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainResult:
    policy: Policy
    curve: np.ndarray  # mean held-out return per iteration
    discarded: list = field(default_factory=list)  # (iteration, candidate id) with non-finite returns


def centered_ranks(x):
    """Ranks mapped to [-0.5, 0.5]; ties share their average rank."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 1:
        return np.zeros(1)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(n, dtype=float)
    # average tied ranks
    sx = x[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sx[j + 1] == sx[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks / (n - 1) - 0.5


class _Evaluator:
    """Scores a set of parameter vectors, plus the current mean, in one batch."""

    def __init__(self, task_cfg, reward_cfg, train_cfg, arm_params, q0):
        self.task = task_cfg
        if train_cfg.trials_per_episode and task_cfg.has_trials:
            n = train_cfg.trials_per_episode
            self.task = replace(task_cfg, trials_per_episode=n, episode_duration=n * task_cfg.trial_timeout)
        self.reward = reward_cfg
        self.cfg = train_cfg
        self.arm = arm_params
        self.q0 = q0
        self.max_steps = train_cfg.max_wall_steps or None

    def run(self, it, candidates, center, layer_sizes, normalizer):
        """Returns (candidate fitness (N,), learning-curve value, obs stats)."""
        k = self.cfg.rollouts_per_candidate
        e = self.cfg.eval_episodes
        N = len(candidates)
        # every candidate of an iteration sees the same task seeds
        train_seeds = self.cfg.seed * 7919 + it * k + np.arange(k)
        eval_seeds = EVAL_SEED_BASE + np.arange(e)
        P = np.concatenate([np.repeat(candidates, k, axis=0), np.repeat(center[None], e, axis=0)])
        seeds = np.concatenate([np.tile(train_seeds, N), eval_seeds])
        res = simulate(P, layer_sizes, normalizer, self.task, self.reward, seeds, self.arm,
                       q0=self.q0, max_steps=self.max_steps)
        returns = np.where(res.aborted, np.nan, res.returns)
        fit = returns[: N * k].reshape(N, k).mean(1)
        curve = float(np.mean(returns[N * k :]))
        n_train = N * k
        return fit, curve, res, n_train


def train(task_cfg: TaskConfig, reward_cfg, train_cfg: TrainConfig, arm_params: ArmParams | None = None,
          q0=REST_POSE, initial: Policy | None = None, progress=None) -> TrainResult:
    arm_params = arm_params or ArmParams()
    policy = initial or Policy.initial(obs_dim(task_cfg), seed=train_cfg.seed, hidden=train_cfg.hidden,
                                       command=train_cfg.initial_command)
    if train_cfg.iterations == 0:
        return TrainResult(policy, np.zeros(0))
    if train_cfg.algorithm is Algorithm.ARS:
        return _ars(task_cfg, reward_cfg, train_cfg, arm_params, q0, policy, progress)
    return _cem(task_cfg, reward_cfg, train_cfg, arm_params, q0, policy, progress)


def _stats_update(normalizer, res, cfg):
    if not cfg.update_normalizer:
        return normalizer
    return normalizer.merged(res.obs_sum, res.obs_sumsq, res.obs_count)


def _ars(task_cfg, reward_cfg, cfg, arm_params, q0, policy, progress):
    ev = _Evaluator(task_cfg, reward_cfg, cfg, arm_params, q0)
    rng = np.random.default_rng([cfg.seed, 0xA125])
    theta = policy.params.copy()
    sizes = policy.layer_sizes
    norm = policy.normalizer
    curve = []
    discarded = []
    n = cfg.directions
    for it in range(cfg.iterations):
        delta = rng.standard_normal((n, theta.size))
        cands = np.concatenate([theta + cfg.noise_std * delta, theta - cfg.noise_std * delta])
        fit, c, res, _ = ev.run(it, cands, theta, sizes, norm)
        curve.append(c)
        bad = ~np.isfinite(fit)
        for cid in np.flatnonzero(bad):
            discarded.append((it, int(cid)))
            log.warning("iteration %d: candidate %d returned a non-finite score, discarded", it, cid)
        plus, minus = fit[:n], fit[n:]
        ok = np.isfinite(plus) & np.isfinite(minus)
        if ok.any():
            idx = np.flatnonzero(ok)
            if cfg.top_directions:
                best = np.maximum(plus[idx], minus[idx])
                idx = idx[np.argsort(-best, kind="stable")[: cfg.top_directions]]
            ranks = centered_ranks(np.concatenate([plus[idx], minus[idx]]))
            m = idx.size
            w = ranks[:m] - ranks[m:]
            theta = theta + cfg.step_size / m * (w @ delta[idx])
        norm = _stats_update(norm, res, cfg)
        if progress:
            progress(it, c)
    meta = {"algorithm": "ars", "iterations": cfg.iterations, "seed": cfg.seed}
    return TrainResult(Policy(sizes, theta, norm, meta), np.asarray(curve), discarded)


def _cem(task_cfg, reward_cfg, cfg, arm_params, q0, policy, progress):
    ev = _Evaluator(task_cfg, reward_cfg, cfg, arm_params, q0)
    rng = np.random.default_rng([cfg.seed, 0xCE11])
    mean = policy.params.copy()
    std = np.full(mean.size, cfg.noise_std)
    sizes = policy.layer_sizes
    norm = policy.normalizer
    n_elite = max(1, int(round(cfg.elite_fraction * cfg.directions)))
    curve = []
    discarded = []
    for it in range(cfg.iterations):
        cands = mean + std * rng.standard_normal((cfg.directions, mean.size))
        fit, c, res, _ = ev.run(it, cands, mean, sizes, norm)
        curve.append(c)
        for cid in np.flatnonzero(~np.isfinite(fit)):
            discarded.append((it, int(cid)))
            log.warning("iteration %d: candidate %d returned a non-finite score, discarded", it, cid)
        ok = np.flatnonzero(np.isfinite(fit))
        if ok.size:
            # sort by (-fitness, candidate id) so ties resolve the same way every time
            order = ok[np.lexsort((ok, -fit[ok]))]
            elite = cands[order[:n_elite]]
            mean = elite.mean(0)
            std = np.maximum(elite.std(0), 1e-3 * cfg.noise_std)
        norm = _stats_update(norm, res, cfg)
        if progress:
            progress(it, c)
    meta = {"algorithm": "cem", "iterations": cfg.iterations, "seed": cfg.seed}
    return TrainResult(Policy(sizes, mean, norm, meta), np.asarray(curve), discarded)
