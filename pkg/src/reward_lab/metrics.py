"""Evaluation protocol: aggregate metrics and behaviour flags from episode logs.

Everything here is a pure function of ``EpisodeLog`` objects; ``evaluate``
only adds the rollouts that produce them.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import MISSING, asdict, dataclass, fields

import numpy as np

from .arm import ArmParams, fingertip
from .rollout import EpisodeLog, REST_POSE, rollouts
from .tasks import EventTag, TaskConfig, TaskKind

SAMPLE_RATE_HZ = 20.0
DEFAULT_EVAL_SEEDS = (101, 102, 103, 104, 105)


@dataclass(frozen=True)
class FlagThresholds:
    near: float = 0.02  # m, "approached"
    move: float = 0.05  # m, below this the fingertip did not really move
    success: float = 50.0  # %, below this a task counts as not completed
    tremble: float = 15.0  # m/s^2 RMS fingertip acceleration
    far: float = 0.10  # m, closest approach beyond this = never approached

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValueError(f"threshold {f.name} must be finite and >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class MetricsReport:
    task_kind: str
    episodes: int
    success_rate: float  # %
    mean_completion_time: float  # s
    avg_target_distance: float  # m
    time_inside_target: float  # %, sampled at 20 Hz
    character_error_rate: float  # typing only, NaN elsewhere
    approached_not_completed: bool
    no_movement: bool
    trembling: bool
    min_distance: float
    max_displacement: float
    rms_acceleration: float
    trials: int = 0
    successes: int = 0
    valid: bool = True
    invalid_reason: str = ""
    config_hash: str = ""

    def flags(self):
        return {
            "approached_not_completed": self.approached_not_completed,
            "no_movement": self.no_movement,
            "trembling": self.trembling,
        }

    def to_dict(self):
        return {k: _jsonable(v) for k, v in asdict(self).items()}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown report field(s): {', '.join(sorted(unknown))}")
        missing = [f.name for f in fields(cls) if f.default is MISSING and f.name not in d]
        if missing:
            raise ValueError(f"report is missing field(s): {', '.join(missing)}")
        kw = {k: (math.nan if v is None else v) for k, v in d.items()}
        return cls(**kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


CSV_COLUMNS = [f.name for f in fields(MetricsReport)]


def report_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([_csv_cell(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.generic):
        return v.item()
    return v


def sem(values):
    """Standard error of the mean (sample std, ddof=1); NaN below two values."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        return math.nan
    return float(x.std(ddof=1) / math.sqrt(x.size))


def _sample_indices(n_steps, dt):
    """Steps that land on the 20 Hz sampling grid."""
    period = 1.0 / SAMPLE_RATE_HZ
    n = int(math.floor(n_steps * dt / period + 1e-9))
    idx = np.round(np.arange(1, n + 1) * period / dt).astype(int) - 1
    return idx[(idx >= 0) & (idx < n_steps)]


def _trial_outcomes(log: EpisodeLog, kind: TaskKind):
    if log.trials:
        return log.trials
    # a log that stopped before any trial closed counts one open trial, failed
    return [(False, min(log.n_steps * log.control_dt, log.trial_timeout))] if log.n_steps else []


def behavior_flags(logs, thresholds: FlagThresholds = FlagThresholds(), success_rate=None, q0_fingertip=None):
    """Flags plus their raw statistics, from logs alone."""
    thresholds = thresholds or FlagThresholds()
    if success_rate is None:
        success_rate = _success_rate(logs)
    dists = [np.asarray(l.steps["distance"], dtype=float) for l in logs if l.n_steps]
    min_d = float(min(d.min() for d in dists)) if dists else math.inf
    disp = 0.0
    acc_sq = []
    for l in logs:
        if not l.n_steps:
            continue
        f = np.asarray(l.steps["fingertip"], dtype=float)
        origin = f[0] if q0_fingertip is None else np.asarray(q0_fingertip, dtype=float)
        disp = max(disp, float(np.linalg.norm(f - origin, axis=1).max()))
        if len(f) >= 3:
            a = (f[2:] - 2 * f[1:-1] + f[:-2]) / l.control_dt**2
            acc_sq.append((a**2).sum(1))
    rms = float(np.sqrt(np.concatenate(acc_sq).mean())) if acc_sq else 0.0
    return {
        "approached_not_completed": bool(min_d < thresholds.near and success_rate < thresholds.success),
        "no_movement": bool(disp < thresholds.move),
        "trembling": bool(rms > thresholds.tremble),
        "min_distance": min_d,
        "max_displacement": disp,
        "rms_acceleration": rms,
    }


def _kind(logs):
    return TaskKind(logs[0].task_kind)


def _success_rate(logs):
    kind = _kind(logs)
    if kind is TaskKind.TRACKING:
        return _time_inside(logs)
    outcomes = [s for l in logs for s, _ in _trial_outcomes(l, kind)]
    return 100.0 * sum(outcomes) / len(outcomes) if outcomes else 0.0


def _time_inside(logs):
    inside = []
    for l in logs:
        idx = _sample_indices(l.n_steps, l.control_dt)
        inside.append(np.asarray(l.steps["distance"], dtype=float)[idx] <= 0.0)
    allv = np.concatenate(inside) if inside else np.zeros(0)
    return 100.0 * float(allv.mean()) if allv.size else 0.0


def metrics_from_logs(logs, thresholds: FlagThresholds = FlagThresholds(), q0_fingertip=None, config_hash=""):
    logs = list(logs)
    if not logs:
        raise ValueError("no episode logs to evaluate")
    kind = _kind(logs)
    outcomes = [o for l in logs for o in _trial_outcomes(l, kind)]
    n_trials = len(outcomes)
    n_succ = sum(1 for s, _ in outcomes if s)
    inside = _time_inside(logs)
    success = inside if kind is TaskKind.TRACKING else (100.0 * n_succ / n_trials if n_trials else 0.0)
    completion = float(np.mean([t for _, t in outcomes])) if outcomes else math.nan
    avg_d = float(np.mean([np.mean(l.steps["distance"]) for l in logs if l.n_steps]))
    cer = math.nan
    if kind is TaskKind.TYPING:
        errors = 0
        for l in logs:
            ev = np.asarray(l.steps["event"])
            errors += int(np.sum(ev == EventTag.WRONG_PRESS)) + int(np.sum(ev == EventTag.TIMEOUT))
        cer = errors / len(logs)
    flags = behavior_flags(logs, thresholds, success, q0_fingertip)
    aborted = [l.seed for l in logs if l.aborted]
    return MetricsReport(
        task_kind=kind.value,
        episodes=len(logs),
        success_rate=success,
        mean_completion_time=completion,
        avg_target_distance=avg_d,
        time_inside_target=inside,
        character_error_rate=cer,
        trials=n_trials,
        successes=n_succ,
        valid=not aborted,
        invalid_reason=f"episodes aborted (seeds {aborted})" if aborted else "",
        config_hash=config_hash,
        **flags,
    )


def evaluate(policy, task_cfg: TaskConfig, reward_cfg, eval_seeds=DEFAULT_EVAL_SEEDS, arm_params=None,
             thresholds: FlagThresholds = FlagThresholds(), q0=REST_POSE, config_hash="", return_logs=False):
    """Frozen-policy evaluation on fixed seeds (five by default)."""
    arm_params = arm_params or ArmParams()
    logs = rollouts(policy, task_cfg, reward_cfg, eval_seeds, arm_params, q0=q0, config_hash=config_hash)
    tip0 = fingertip(np.asarray(q0, dtype=float), arm_params)
    report = metrics_from_logs(logs, thresholds, q0_fingertip=tip0, config_hash=config_hash)
    return (report, logs) if return_logs else report
