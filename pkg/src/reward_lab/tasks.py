"""The five interaction tasks as batched, deterministic state machines.

A ``TaskState`` always carries a leading batch axis so that many episodes can
advance in lock-step; ``task_init(cfg, 7)`` gives a batch of one. Each
instance draws its whole target / stimulus schedule from its own seed at
init time, so the sequence an instance sees never depends on what else is in
the batch.

Geometry lives in the arm's horizontal plane, shoulder at the origin. The
rest fingertip sits near (0.34, 0.42) m; pointing targets and buttons lie
well away from it so every trial starts with a deliberate reach.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace

import numpy as np

_EPS = 1e-9


class TaskKind(str, enum.Enum):
    POINTING = "pointing"
    TRACKING = "tracking"
    CHOICE_REACTION = "choice_reaction"
    TYPING = "typing"
    REMOTE_CONTROL = "remote_control"


class EventTag(enum.IntEnum):
    NONE = 0
    GOAL = 1
    TIMEOUT = 2
    WRONG_PRESS = 3
    CONTACT = 4  # inside the correct button/key without a valid press
    JOYSTICK_CONTACT = 5
    EPISODE_END = 6


@dataclass(frozen=True)
class Annulus:
    """Polar sector around the shoulder that target centres are drawn from."""

    r_min: float = 0.30
    r_max: float = 0.55
    phi_min: float = 1.35
    phi_max: float = 2.25

    def contains(self, p, tol=1e-12):
        p = np.asarray(p, dtype=float)
        r = np.hypot(p[..., 0], p[..., 1])
        phi = np.arctan2(p[..., 1], p[..., 0])
        return (
            (r >= self.r_min - tol) & (r <= self.r_max + tol)
            & (phi >= self.phi_min - tol) & (phi <= self.phi_max + tol)
        )


@dataclass(frozen=True)
class TaskConfig:
    kind: TaskKind
    dt: float = 0.05
    trial_timeout: float = 4.0
    trials_per_episode: int = 10
    episode_duration: float = 40.0
    dwell_time: float = 0.5
    workspace: Annulus = field(default_factory=Annulus)
    target_radius_range: tuple = (0.025, 0.075)
    # pressing (choice reaction, typing)
    press_speed: float = 0.05
    button_centers: tuple = ((-0.10, 0.33), (0.04, 0.33), (-0.10, 0.47), (0.04, 0.47))
    button_radius: float = 0.04
    button_normal: tuple = (0.0, 1.0)
    key_count: int = 10
    key_row_origin: tuple = (-0.02, 0.45)
    key_pitch: float = 0.035
    key_half_size: tuple = (0.016, 0.015)
    # tracking
    tracking_center: tuple = (0.28, 0.40)
    tracking_amplitude_range: tuple = (0.02, 0.045)
    tracking_frequency_range: tuple = (0.1, 0.4)
    tracking_radius: float = 0.05
    # remote control
    joystick_center: tuple = (0.25, 0.40)
    joystick_radius: float = 0.04
    joystick_axis: tuple = (0.0, 1.0)
    car_gain: float = 2.0
    car_damping: float = 1.0
    box_center_range: tuple = (1.5, 2.5)
    box_half_width: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        if isinstance(self.workspace, dict):
            object.__setattr__(self, "workspace", Annulus(**self.workspace))
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                object.__setattr__(self, f.name, tuple(tuple(x) if isinstance(x, list) else x for x in v))
        for name in ("dt", "trial_timeout", "episode_duration", "dwell_time", "press_speed",
                     "button_radius", "key_pitch", "tracking_radius", "joystick_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.trials_per_episode < 1:
            raise ValueError("trials_per_episode must be >= 1")
        lo, hi = self.target_radius_range
        if not 0 < lo <= hi:
            raise ValueError("target_radius_range must satisfy 0 < low <= high")

    @classmethod
    def default(cls, kind, **overrides):
        kind = TaskKind(kind)
        per_kind = {
            TaskKind.POINTING: dict(trial_timeout=4.0, trials_per_episode=10, episode_duration=40.0),
            TaskKind.CHOICE_REACTION: dict(trial_timeout=4.0, trials_per_episode=10, episode_duration=40.0),
            TaskKind.TRACKING: dict(trials_per_episode=1, episode_duration=10.0, trial_timeout=10.0),
            TaskKind.TYPING: dict(trials_per_episode=1, episode_duration=3.0, trial_timeout=3.0),
            TaskKind.REMOTE_CONTROL: dict(trials_per_episode=1, episode_duration=10.0, trial_timeout=10.0),
        }[kind]
        per_kind.update(overrides)
        return cls(kind=kind, **per_kind)

    @property
    def max_steps(self) -> int:
        if self.kind in (TaskKind.POINTING, TaskKind.CHOICE_REACTION):
            return int(round(self.trials_per_episode * self.trial_timeout / self.dt))
        return int(round(self.episode_duration / self.dt))

    @property
    def has_trials(self) -> bool:
        return self.kind in (TaskKind.POINTING, TaskKind.CHOICE_REACTION)

    @property
    def bonus_terminates_trial(self) -> bool:
        return self.kind in (TaskKind.POINTING, TaskKind.CHOICE_REACTION, TaskKind.TYPING)

    def key_centers(self):
        x0, y0 = self.key_row_origin
        return np.array([[x0 + i * self.key_pitch, y0] for i in range(self.key_count)])

    def press_normal(self):
        """Unit direction the fingertip must move along to press."""
        if self.kind is TaskKind.TYPING:
            return np.array([0.0, -1.0])
        n = np.asarray(self.button_normal, dtype=float)
        return n / np.linalg.norm(n)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, Annulus):
                v = {g.name: getattr(v, g.name) for g in fields(v)}
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        return cls.default(kind, **d)


@dataclass
class TaskState:
    """Batched task bookkeeping; every array has a leading batch axis."""

    cfg: TaskConfig
    seeds: np.ndarray
    trial_index: np.ndarray
    trial_elapsed: np.ndarray
    elapsed: np.ndarray
    dwell_timer: np.ndarray
    target_position: np.ndarray
    target_radius: np.ndarray
    stimulus_index: np.ndarray
    latched: np.ndarray  # last pressed button/key, -1 when none
    prev_fingertip: np.ndarray
    car_position: np.ndarray
    car_velocity: np.ndarray
    done: np.ndarray
    # pre-drawn per-instance schedule
    schedule_targets: np.ndarray
    schedule_radii: np.ndarray
    schedule_stimuli: np.ndarray
    tracking_params: np.ndarray  # (B, axis, component, [amplitude, frequency, phase])
    box_center: np.ndarray

    @property
    def kind(self) -> TaskKind:
        return self.cfg.kind

    @property
    def batch(self) -> int:
        return len(self.seeds)

    def copy(self):
        return replace(self, **{f.name: np.copy(getattr(self, f.name)) for f in fields(self) if f.name != "cfg"})


@dataclass
class TaskStep:
    goal_reached: np.ndarray
    distance: np.ndarray
    secondary_distance: np.ndarray  # NaN for tasks without one
    trial_done: np.ndarray
    trial_success: np.ndarray
    trial_time: np.ndarray  # duration of the trial that just ended
    episode_done: np.ndarray
    event: np.ndarray
    contact: np.ndarray  # joystick contact (intermediate goal) this step


def _sample_annulus(rng, ws: Annulus, n):
    r = np.sqrt(rng.uniform(ws.r_min**2, ws.r_max**2, n))
    phi = rng.uniform(ws.phi_min, ws.phi_max, n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], -1)


def task_init(cfg: TaskConfig, seed, q0_fingertip=None) -> TaskState:
    seeds = np.atleast_1d(np.asarray(seed, dtype=np.int64))
    B = len(seeds)
    n = cfg.trials_per_episode
    targets = np.zeros((B, n, 2))
    radii = np.zeros((B, n))
    stimuli = np.zeros((B, n), dtype=np.int64)
    track = np.zeros((B, 2, 2, 3))
    box = np.zeros(B)
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(int(s))
        if cfg.kind is TaskKind.POINTING:
            targets[i] = _sample_annulus(rng, cfg.workspace, n)
            radii[i] = rng.uniform(*cfg.target_radius_range, n)
        elif cfg.kind is TaskKind.CHOICE_REACTION:
            stimuli[i] = rng.integers(0, len(cfg.button_centers), n)
        elif cfg.kind is TaskKind.TYPING:
            stimuli[i] = rng.integers(0, cfg.key_count, n)
        elif cfg.kind is TaskKind.TRACKING:
            track[i, ..., 0] = rng.uniform(*cfg.tracking_amplitude_range, (2, 2))
            track[i, ..., 1] = rng.uniform(*cfg.tracking_frequency_range, (2, 2))
            track[i, ..., 2] = rng.uniform(0.0, 2 * np.pi, (2, 2))
        else:
            box[i] = rng.uniform(*cfg.box_center_range)

    ts = TaskState(
        cfg=cfg,
        seeds=seeds,
        trial_index=np.zeros(B, dtype=np.int64),
        trial_elapsed=np.zeros(B),
        elapsed=np.zeros(B),
        dwell_timer=np.zeros(B),
        target_position=np.zeros((B, 2)),
        target_radius=np.zeros(B),
        stimulus_index=np.zeros(B, dtype=np.int64),
        latched=np.full(B, -1, dtype=np.int64),
        prev_fingertip=np.zeros((B, 2)) if q0_fingertip is None else np.broadcast_to(q0_fingertip, (B, 2)).copy(),
        car_position=np.zeros(B),
        car_velocity=np.zeros(B),
        done=np.zeros(B, dtype=bool),
        schedule_targets=targets,
        schedule_radii=radii,
        schedule_stimuli=stimuli,
        tracking_params=track,
        box_center=box,
    )
    _load_trial(cfg, ts, np.ones(B, dtype=bool))
    return ts


def _load_trial(cfg, ts, mask):
    """Point the current target at the schedule entry for ``trial_index``."""
    idx = np.minimum(ts.trial_index, cfg.trials_per_episode - 1)
    rows = np.arange(ts.batch)
    kind = cfg.kind
    if kind is TaskKind.POINTING:
        pos, rad = ts.schedule_targets[rows, idx], ts.schedule_radii[rows, idx]
    elif kind is TaskKind.CHOICE_REACTION:
        stim = ts.schedule_stimuli[rows, idx]
        ts.stimulus_index = np.where(mask, stim, ts.stimulus_index)
        pos = np.asarray(cfg.button_centers)[stim]
        rad = np.full(ts.batch, cfg.button_radius)
    elif kind is TaskKind.TYPING:
        stim = ts.schedule_stimuli[rows, idx]
        ts.stimulus_index = np.where(mask, stim, ts.stimulus_index)
        pos = cfg.key_centers()[stim]
        rad = np.full(ts.batch, cfg.key_half_size[0])
    elif kind is TaskKind.TRACKING:
        pos = tracking_target(ts, ts.elapsed)
        rad = np.full(ts.batch, cfg.tracking_radius)
    else:
        pos = np.broadcast_to(np.asarray(cfg.joystick_center, dtype=float), (ts.batch, 2))
        rad = np.full(ts.batch, cfg.joystick_radius)
    ts.target_position = np.where(mask[:, None], pos, ts.target_position)
    ts.target_radius = np.where(mask, rad, ts.target_radius)


def tracking_target(ts: TaskState, t, derivative=False):
    """Sum-of-sines target centre (or its velocity) at time(s) ``t``."""
    cfg = ts.cfg
    t = np.broadcast_to(np.asarray(t, dtype=float), (ts.batch,))[:, None, None]
    p = ts.tracking_params
    amp, freq, phase = p[..., 0], p[..., 1], p[..., 2]
    arg = 2 * np.pi * freq * t + phase
    if derivative:
        return (amp * 2 * np.pi * freq * np.cos(arg)).sum(-1)
    return np.asarray(cfg.tracking_center) + (amp * np.sin(arg)).sum(-1)


def _surface_distance(fingertip, center, radius):
    gap = np.linalg.norm(fingertip - center, axis=-1) - radius
    return np.maximum(gap, 0.0), gap <= 0.0


def _rect_distance(p, center, half):
    d = np.abs(p - center) - np.asarray(half)
    outside = np.maximum(d, 0.0)
    return np.hypot(outside[..., 0], outside[..., 1]), np.all(d <= 0.0, axis=-1)


def _blank_step(B):
    return TaskStep(
        goal_reached=np.zeros(B, dtype=bool),
        distance=np.zeros(B),
        secondary_distance=np.full(B, np.nan),
        trial_done=np.zeros(B, dtype=bool),
        trial_success=np.zeros(B, dtype=bool),
        trial_time=np.zeros(B),
        episode_done=np.zeros(B, dtype=bool),
        event=np.zeros(B, dtype=np.int64),
        contact=np.zeros(B, dtype=bool),
    )


def _begin(ts, fingertip, dt):
    fingertip = np.atleast_2d(np.asarray(fingertip, dtype=float))
    new = ts.copy()
    alive = ~ts.done
    new.trial_elapsed = np.where(alive, ts.trial_elapsed + dt, ts.trial_elapsed)
    new.elapsed = np.where(alive, ts.elapsed + dt, ts.elapsed)
    return new, fingertip, alive


def _finish_trials(cfg, new, out, alive, success, fingertip):
    """Shared trial bookkeeping for the trial-structured tasks."""
    timeout = alive & ~success & (new.trial_elapsed >= cfg.trial_timeout - _EPS)
    trial_done = alive & (success | timeout)
    out.goal_reached = alive & success
    out.trial_done = trial_done
    out.trial_success = alive & success
    out.trial_time = np.where(trial_done, np.minimum(new.trial_elapsed, cfg.trial_timeout), 0.0)
    out.event = np.where(timeout, EventTag.TIMEOUT, out.event)
    out.event = np.where(out.goal_reached, EventTag.GOAL, out.event)

    new.trial_index = new.trial_index + trial_done
    episode_done = trial_done & (new.trial_index >= cfg.trials_per_episode)
    next_trial = trial_done & ~episode_done
    new.trial_elapsed = np.where(trial_done, 0.0, new.trial_elapsed)
    new.dwell_timer = np.where(trial_done, 0.0, new.dwell_timer)
    new.latched = np.where(trial_done, -1, new.latched)
    _load_trial(cfg, new, next_trial)
    out.episode_done = episode_done
    new.done = new.done | episode_done
    new.prev_fingertip = np.where(alive[:, None], fingertip, new.prev_fingertip)
    return new, out


def pointing_update(ts: TaskState, fingertip, dt):
    cfg = ts.cfg
    new, f, alive = _begin(ts, fingertip, dt)
    out = _blank_step(ts.batch)
    dist, inside = _surface_distance(f, ts.target_position, ts.target_radius)
    out.distance = np.where(alive, dist, 0.0)
    new.dwell_timer = np.where(alive & inside, np.minimum(ts.dwell_timer + dt, cfg.dwell_time), 0.0)
    new.dwell_timer = np.where(alive, new.dwell_timer, ts.dwell_timer)
    success = inside & (new.dwell_timer >= cfg.dwell_time - _EPS)
    out.event = np.where(alive & inside & ~success, EventTag.CONTACT, EventTag.NONE)
    return _finish_trials(cfg, new, out, alive, success, f)


def _presses(cfg, ts, f, press_speed, inside_any, which, alive):
    fast = np.asarray(press_speed, dtype=float) >= cfg.press_speed - _EPS
    pressed = alive & inside_any & fast & (which != ts.latched)
    return pressed


def choice_reaction_update(ts: TaskState, fingertip, press_speed, dt):
    cfg = ts.cfg
    new, f, alive = _begin(ts, fingertip, dt)
    out = _blank_step(ts.batch)
    centers = np.asarray(cfg.button_centers, dtype=float)
    gaps = np.linalg.norm(f[:, None, :] - centers[None], axis=-1) - cfg.button_radius
    inside_any = gaps.min(1) <= 0.0
    which = np.where(inside_any, gaps.argmin(1), -1)
    dist, inside_target = _surface_distance(f, ts.target_position, ts.target_radius)
    out.distance = np.where(alive, dist, 0.0)

    pressed = _presses(cfg, ts, f, press_speed, inside_any, which, alive)
    correct = pressed & (which == ts.stimulus_index)
    wrong = pressed & ~correct
    # latch the pressed button until the fingertip leaves it
    new.latched = np.where(pressed, which, np.where(which == ts.latched, ts.latched, -1))
    new.latched = np.where(alive, new.latched, ts.latched)
    out.event = np.where(alive & inside_target & ~pressed, EventTag.CONTACT, EventTag.NONE)
    out.event = np.where(wrong, EventTag.WRONG_PRESS, out.event)
    return _finish_trials(cfg, new, out, alive, correct, f)


def typing_update(ts: TaskState, fingertip, press_speed, dt):
    cfg = ts.cfg
    new, f, alive = _begin(ts, fingertip, dt)
    out = _blank_step(ts.batch)
    keys = cfg.key_centers()
    half = np.asarray(cfg.key_half_size)
    d = np.abs(f[:, None, :] - keys[None]) - half
    inside_keys = np.all(d <= 0.0, axis=-1)
    inside_any = inside_keys.any(1)
    which = np.where(inside_any, inside_keys.argmax(1), -1)
    dist, inside_target = _rect_distance(f, ts.target_position, half)
    out.distance = np.where(alive, dist, 0.0)

    top = keys[0, 1] + half[1]
    from_above = ts.prev_fingertip[:, 1] > top
    pressed = _presses(cfg, ts, f, press_speed, inside_any, which, alive) & from_above
    correct = pressed & (which == ts.stimulus_index)
    wrong = pressed & ~correct
    new.latched = np.where(pressed, which, np.where(which == ts.latched, ts.latched, -1))
    new.latched = np.where(alive, new.latched, ts.latched)

    timeout = alive & ~correct & (new.elapsed >= cfg.episode_duration - _EPS)
    finished = correct | timeout
    out.goal_reached = correct
    out.trial_done = finished
    out.trial_success = correct
    out.trial_time = np.where(finished, np.minimum(new.elapsed, cfg.episode_duration), 0.0)
    out.episode_done = finished
    out.event = np.where(alive & inside_target & ~pressed, EventTag.CONTACT, EventTag.NONE)
    out.event = np.where(wrong, EventTag.WRONG_PRESS, out.event)
    out.event = np.where(timeout, EventTag.TIMEOUT, out.event)
    out.event = np.where(correct, EventTag.GOAL, out.event)
    new.trial_index = new.trial_index + finished
    new.done = new.done | finished
    new.prev_fingertip = np.where(alive[:, None], f, ts.prev_fingertip)
    return new, out


def tracking_update(ts: TaskState, fingertip, dt):
    cfg = ts.cfg
    new, f, alive = _begin(ts, fingertip, dt)
    out = _blank_step(ts.batch)
    target = tracking_target(new, new.elapsed)
    new.target_position = np.where(alive[:, None], target, ts.target_position)
    dist, inside = _surface_distance(f, new.target_position, new.target_radius)
    out.distance = np.where(alive, dist, 0.0)
    out.goal_reached = alive & inside
    out.event = np.where(out.goal_reached, EventTag.GOAL, EventTag.NONE)
    end = alive & (new.elapsed >= cfg.episode_duration - _EPS)
    out.episode_done = end
    out.trial_done = end
    new.done = new.done | end
    new.prev_fingertip = np.where(alive[:, None], f, ts.prev_fingertip)
    return new, out


def car_advance(x, v, force, damping, dt):
    """Exact zero-order-hold solution of x'' = force - damping * x' over ``dt``."""
    decay = np.exp(-damping * dt)
    v_ss = force / damping
    v_new = v_ss + (v - v_ss) * decay
    x_new = x + v_ss * dt + (v - v_ss) * (1.0 - decay) / damping
    return x_new, v_new


def joystick_deflection(cfg: TaskConfig, fingertip):
    f = np.atleast_2d(fingertip)
    c = np.asarray(cfg.joystick_center, dtype=float)
    axis = np.asarray(cfg.joystick_axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    inside = np.linalg.norm(f - c, axis=-1) <= cfg.joystick_radius
    defl = np.clip(((f - c) @ axis) / cfg.joystick_radius, -1.0, 1.0)
    return np.where(inside, defl, 0.0), inside


def remote_update(ts: TaskState, fingertip, dt):
    cfg = ts.cfg
    new, f, alive = _begin(ts, fingertip, dt)
    out = _blank_step(ts.batch)
    defl, contact = joystick_deflection(cfg, f)
    x, v = car_advance(ts.car_position, ts.car_velocity, cfg.car_gain * defl, cfg.car_damping, dt)
    new.car_position = np.where(alive, x, ts.car_position)
    new.car_velocity = np.where(alive, v, ts.car_velocity)
    dist, _ = _surface_distance(f, ts.target_position, ts.target_radius)
    out.distance = np.where(alive, dist, 0.0)
    gap = np.abs(new.car_position - ts.box_center) - cfg.box_half_width
    out.secondary_distance = np.where(alive, np.maximum(gap, 0.0), np.nan)
    parked = alive & (gap <= 0.0)
    out.goal_reached = parked
    out.contact = alive & contact
    out.event = np.where(out.contact, EventTag.JOYSTICK_CONTACT, EventTag.NONE)
    out.event = np.where(parked, EventTag.GOAL, out.event)
    end = alive & (new.elapsed >= cfg.episode_duration - _EPS)
    out.episode_done = end
    out.trial_done = end
    out.trial_success = end & parked
    out.trial_time = np.where(end, new.elapsed, 0.0)
    new.done = new.done | end
    new.prev_fingertip = np.where(alive[:, None], f, ts.prev_fingertip)
    return new, out


def update(ts: TaskState, fingertip, press_speed, dt):
    """Dispatch to the kind-specific update."""
    kind = ts.kind
    if kind is TaskKind.POINTING:
        return pointing_update(ts, fingertip, dt)
    if kind is TaskKind.TRACKING:
        return tracking_update(ts, fingertip, dt)
    if kind is TaskKind.CHOICE_REACTION:
        return choice_reaction_update(ts, fingertip, press_speed, dt)
    if kind is TaskKind.TYPING:
        return typing_update(ts, fingertip, press_speed, dt)
    return remote_update(ts, fingertip, dt)
