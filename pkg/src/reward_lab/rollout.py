"""Episode simulation: observation layout, batched rollouts and episode logs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tasks as T
from .arm import ArmParams, ArmState, effort_signals, fingertip, fingertip_velocity, step_batch
from .policy import Normalizer, Policy, forward_batch
from .reward import RewardConfig, compose

REST_POSE = (0.3, 1.2)
LOG_FORMAT = "reward-lab-episode"
LOG_VERSION = 1

_EXTRA_DIMS = {
    T.TaskKind.POINTING: 1,
    T.TaskKind.TRACKING: 2,
    T.TaskKind.CHOICE_REACTION: 4,
    T.TaskKind.TYPING: 0,
    T.TaskKind.REMOTE_CONTROL: 3,
}


def obs_dim(task_cfg: T.TaskConfig) -> int:
    return 15 + _EXTRA_DIMS[task_cfg.kind]


def observe(arm: ArmState, ts: T.TaskState, cfg: T.TaskConfig | None = None, params: ArmParams | None = None):
    """Raw observation vectors, shape (B, obs_dim).

    Layout: q, qdot, activations, fingertip, target - fingertip, target
    radius, then the task extras (dwell fraction | target velocity |
    stimulus one-hot | nothing | car position, car velocity, box - car).
    """
    cfg = cfg or ts.cfg
    params = params or ArmParams()
    q = np.atleast_2d(arm.q)
    tip = fingertip(q, params)
    parts = [
        q,
        np.atleast_2d(arm.qdot),
        np.atleast_2d(arm.activations),
        tip,
        ts.target_position - tip,
        ts.target_radius[:, None],
    ]
    kind = cfg.kind
    if kind is T.TaskKind.POINTING:
        parts.append((ts.dwell_timer / cfg.dwell_time)[:, None])
    elif kind is T.TaskKind.TRACKING:
        parts.append(T.tracking_target(ts, ts.elapsed, derivative=True))
    elif kind is T.TaskKind.CHOICE_REACTION:
        parts.append(np.eye(len(cfg.button_centers))[ts.stimulus_index])
    elif kind is T.TaskKind.REMOTE_CONTROL:
        parts.append(np.stack([ts.car_position, ts.car_velocity, ts.box_center - ts.car_position], -1))
    return np.concatenate(parts, axis=1)


@dataclass
class BatchResult:
    returns: np.ndarray
    aborted: np.ndarray
    n_steps: np.ndarray
    obs_sum: np.ndarray
    obs_sumsq: np.ndarray
    obs_count: int
    records: dict | None = None


_RECORD_FIELDS = (
    "q", "qdot", "activations", "u", "fingertip", "target", "target_radius",
    "goal_reached", "distance", "secondary_distance", "trial_done", "trial_success",
    "trial_time", "episode_done", "event", "contact", "car_position",
    "bonus_part", "distance_part", "effort_part", "total",
)


def simulate(
    params,
    layer_sizes,
    normalizer: Normalizer,
    task_cfg: T.TaskConfig,
    reward_cfg: RewardConfig,
    seeds,
    arm_params: ArmParams | None = None,
    *,
    record=False,
    q0=REST_POSE,
    max_steps=None,
) -> BatchResult:
    """Run one episode per row of ``params`` (shape (B, P)) in lock-step.

    Row ``b`` uses task seed ``seeds[b]``. Returns accumulate in float64 in
    step order, so they equal a sequential re-summation of the step totals.
    """
    arm_params = arm_params or ArmParams()
    params = np.atleast_2d(np.asarray(params, dtype=float))
    seeds = np.asarray(seeds, dtype=np.int64)
    B = params.shape[0]
    dt = arm_params.control_dt
    if abs(task_cfg.dt - dt) > 1e-12:
        raise ValueError(f"task dt {task_cfg.dt} differs from arm control_dt {dt}")
    limit = task_cfg.max_steps if max_steps is None else min(max_steps, task_cfg.max_steps)

    arm = ArmState.rest(q0, batch=B)
    ts = T.task_init(task_cfg, seeds, q0_fingertip=fingertip(np.asarray(q0), arm_params))
    normal = task_cfg.press_normal()
    returns = np.zeros(B)
    aborted = np.zeros(B, dtype=bool)
    n_steps = np.zeros(B, dtype=np.int64)
    D = obs_dim(task_cfg)
    obs_sum = np.zeros(D)
    obs_sumsq = np.zeros(D)
    obs_count = 0
    rec = {k: [] for k in _RECORD_FIELDS} if record else None

    for _ in range(limit):
        alive = ~ts.done & ~aborted
        if not alive.any():
            break
        obs = observe(arm, ts, task_cfg, arm_params)
        live_obs = obs[alive]
        obs_sum += live_obs.sum(0)
        obs_sumsq += (live_obs**2).sum(0)
        obs_count += int(alive.sum())
        u = forward_batch(params, layer_sizes, normalizer.apply(obs))

        nxt, bad = step_batch(arm, u, arm_params, active=alive)
        if bad.any():
            # freeze blown-up arms at their last finite state
            for name in ("q", "qdot", "qacc", "prev_qacc", "activations", "tau", "prev_tau"):
                getattr(nxt, name)[bad] = getattr(arm, name)[bad]
            aborted |= bad
            alive &= ~bad
        tip = fingertip(nxt.q, arm_params)
        press = fingertip_velocity(nxt, arm_params) @ normal
        ts_alive = ts.copy()
        ts_alive.done = ts.done | aborted
        ts_new, out = T.update(ts_alive, tip, press, dt)

        sig = effort_signals(arm, nxt, u, arm_params)
        sec = out.secondary_distance if task_cfg.kind is T.TaskKind.REMOTE_CONTROL else None
        rb = compose(reward_cfg, out.goal_reached, out.distance, sig,
                     secondary_distance=None if sec is None else np.nan_to_num(sec),
                     intermediate=out.contact)
        total = np.where(alive, rb.total, 0.0)
        returns += total
        n_steps += alive

        if record:
            vals = dict(
                q=nxt.q, qdot=nxt.qdot, activations=nxt.activations, u=u, fingertip=tip,
                target=ts.target_position if task_cfg.kind is not T.TaskKind.TRACKING else ts_new.target_position,
                target_radius=ts_new.target_radius if task_cfg.kind is T.TaskKind.TRACKING else ts.target_radius,
                goal_reached=out.goal_reached, distance=out.distance,
                secondary_distance=out.secondary_distance, trial_done=out.trial_done,
                trial_success=out.trial_success, trial_time=out.trial_time,
                episode_done=out.episode_done, event=out.event, contact=out.contact,
                car_position=ts_new.car_position,
                bonus_part=np.broadcast_to(rb.bonus_part, (B,)),
                distance_part=np.broadcast_to(rb.distance_part, (B,)),
                effort_part=np.broadcast_to(rb.effort_part, (B,)),
                total=total,
            )
            vals["alive"] = alive
            for k, v in vals.items():
                rec.setdefault(k, []).append(np.array(v, copy=True))
        arm = nxt
        ts = ts_new

    if record:
        rec = {k: np.stack(v) for k, v in rec.items()} if rec["q"] else {}
    return BatchResult(returns, aborted, n_steps, obs_sum, obs_sumsq, obs_count, rec)


@dataclass
class EpisodeLog:
    """One episode: header facts plus per-step arrays (leading axis = step)."""

    task_kind: str
    seed: int
    episode_return: float
    aborted: bool
    steps: dict
    trials: list = field(default_factory=list)  # (success, completion time) per finished trial
    control_dt: float = 0.05
    config_hash: str = ""
    trial_timeout: float = 4.0

    @property
    def n_steps(self) -> int:
        return len(self.steps.get("total", ()))

    def resum(self) -> float:
        total = 0.0
        for v in self.steps["total"]:
            total += float(v)
        return total

    def to_jsonl(self) -> str:
        header = {
            "type": "header",
            "format": LOG_FORMAT,
            "version": LOG_VERSION,
            "task_kind": self.task_kind,
            "seed": self.seed,
            "return": self.episode_return,
            "aborted": self.aborted,
            "n_steps": self.n_steps,
            "trials": [[bool(s), float(t)] for s, t in self.trials],
            "control_dt": self.control_dt,
            "trial_timeout": self.trial_timeout,
            "config_hash": self.config_hash,
        }
        lines = [json.dumps(header, sort_keys=True)]
        keys = sorted(self.steps)
        for i in range(self.n_steps):
            row = {"type": "step", "i": i, "t": round((i + 1) * self.control_dt, 10)}
            for k in keys:
                v = self.steps[k][i]
                row[k] = v.tolist() if isinstance(v, np.ndarray) else _py(v)
            lines.append(json.dumps(row, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty episode log")
        header = json.loads(lines[0])
        if header.get("type") != "header" or header.get("format") != LOG_FORMAT:
            raise ValueError("episode log lacks a header line")
        rows = []
        for n, ln in enumerate(lines[1:], start=2):
            try:
                rows.append(json.loads(ln))
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {n}: malformed step record ({exc.msg})") from None
        if len(rows) != header["n_steps"]:
            raise ValueError(f"log is truncated: header says {header['n_steps']} steps, found {len(rows)}")
        keys = [k for k in (rows[0] if rows else {}) if k not in ("type", "i", "t")]
        steps = {k: np.asarray([r[k] for r in rows]) for k in keys}
        return cls(
            task_kind=header["task_kind"],
            seed=header["seed"],
            episode_return=header["return"],
            aborted=header["aborted"],
            steps=steps,
            trials=[(bool(s), float(t)) for s, t in header["trials"]],
            control_dt=header["control_dt"],
            config_hash=header.get("config_hash", ""),
            trial_timeout=header.get("trial_timeout", 4.0),
        )

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())


def _py(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    v = float(v)
    return None if np.isnan(v) else v


def split_logs(result: BatchResult, task_cfg, seeds, control_dt, config_hash="") -> list:
    """Cut a recorded batch into one EpisodeLog per row."""
    logs = []
    rec = result.records
    for b, seed in enumerate(np.asarray(seeds)):
        n = int(result.n_steps[b])
        steps = {k: v[:n, b] for k, v in rec.items() if k != "alive"} if rec else {}
        trials = []
        if n:
            done = steps["trial_done"]
            for i in np.flatnonzero(done):
                trials.append((bool(steps["trial_success"][i]), float(steps["trial_time"][i])))
        logs.append(
            EpisodeLog(
                task_kind=task_cfg.kind.value,
                seed=int(seed),
                episode_return=float(result.returns[b]),
                aborted=bool(result.aborted[b]),
                steps=steps,
                trials=trials,
                control_dt=control_dt,
                config_hash=config_hash,
                trial_timeout=task_cfg.trial_timeout,
            )
        )
    return logs


def rollout(policy: Policy, task_cfg, reward_cfg, seed, arm_params=None, q0=REST_POSE, config_hash="") -> EpisodeLog:
    arm_params = arm_params or ArmParams()
    if policy.obs_dim != obs_dim(task_cfg):
        raise ValueError(f"policy expects {policy.obs_dim} observations, {task_cfg.kind.value} provides {obs_dim(task_cfg)}")
    res = simulate(policy.params[None], policy.layer_sizes, policy.normalizer, task_cfg, reward_cfg,
                   [seed], arm_params, record=True, q0=q0)
    return split_logs(res, task_cfg, [seed], arm_params.control_dt, config_hash)[0]


def rollouts(policy: Policy, task_cfg, reward_cfg, seeds, arm_params=None, q0=REST_POSE, config_hash="") -> list:
    """Several seeded episodes of one policy, simulated as a single batch."""
    arm_params = arm_params or ArmParams()
    seeds = list(seeds)
    P = np.broadcast_to(policy.params, (len(seeds), policy.params.size))
    res = simulate(P, policy.layer_sizes, policy.normalizer, task_cfg, reward_cfg, seeds, arm_params,
                   record=True, q0=q0)
    return split_logs(res, task_cfg, seeds, arm_params.control_dt, config_hash)
