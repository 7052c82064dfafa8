"""Reward components and their weighted composition.

    r_t = w_bonus * f_bonus - w_distance * f_distance - w_effort * f_effort

Everything is elementwise over a leading batch axis, so the same code scores
one step or a whole batch of parallel episodes.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field, replace

import numpy as np

from .arm import EffortSignals


class DistanceKind(str, enum.Enum):
    ABSOLUTE = "absolute"
    SQUARED = "squared"
    EXPONENTIAL = "exponential"


class EffortKind(str, enum.Enum):
    ZERO = "zero"
    DC = "dc"
    CTC = "ctc"
    JAC = "jac"
    EJK = "ejk"


# number of coefficients each effort model takes
_N_COEFFS = {EffortKind.ZERO: 0, EffortKind.DC: 1, EffortKind.CTC: 2, EffortKind.JAC: 2, EffortKind.EJK: 3}

DEFAULT_COEFFS = {
    EffortKind.ZERO: (),
    EffortKind.DC: (1.0,),
    EffortKind.CTC: (1.0, 0.01),
    EffortKind.JAC: (1.0, 0.01),
    EffortKind.EJK: (1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class EffortModel:
    kind: EffortKind = EffortKind.ZERO
    coeffs: tuple = ()

    def __post_init__(self):
        kind = EffortKind(self.kind)
        object.__setattr__(self, "kind", kind)
        coeffs = tuple(float(c) for c in self.coeffs) if self.coeffs else DEFAULT_COEFFS[kind]
        object.__setattr__(self, "coeffs", coeffs)
        if len(coeffs) != _N_COEFFS[kind]:
            raise ValueError(f"{kind.value} takes {_N_COEFFS[kind]} coefficients, got {len(coeffs)}")
        if any(not np.isfinite(c) or c < 0 for c in coeffs):
            raise ValueError("effort coefficients must be finite and >= 0")
        if kind is EffortKind.EJK and sum(coeffs) <= 0:
            raise ValueError("EJK needs c1 + c2 + c3 > 0")

    @classmethod
    def parse(cls, value):
        """Accept ``"dc"``, ``{"kind": "ejk", "coeffs": [1, 1, 1]}`` or an EffortModel."""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls(EffortKind(value))
        return cls(EffortKind(value["kind"]), tuple(value.get("coeffs", ())))

    def to_dict(self):
        return {"kind": self.kind.value, "coeffs": list(self.coeffs)}

    @property
    def label(self):
        return self.kind.value.upper() if self.kind is not EffortKind.ZERO else "Zero"


@dataclass(frozen=True)
class RewardConfig:
    w_bonus: float = 0.0
    w_distance: float = 0.0
    w_effort: float = 0.0
    distance_kind: DistanceKind = DistanceKind.EXPONENTIAL
    effort_model: EffortModel = field(default_factory=EffortModel)
    # divisors for the raw EJK energy / jerk / work signals; None = calibrated
    # on the default arm (see calibrate_ejk_norm)
    ejk_norm: tuple | None = None
    # second guidance distance (remote control: car to parking box)
    w_distance_secondary: float = 0.0
    # bonus for intermediate goal events (remote control: joystick contact)
    w_bonus_intermediate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "distance_kind", DistanceKind(self.distance_kind))
        object.__setattr__(self, "effort_model", EffortModel.parse(self.effort_model))
        norm = default_ejk_norm() if self.ejk_norm is None else self.ejk_norm
        object.__setattr__(self, "ejk_norm", tuple(float(n) for n in norm))
        for name in ("w_bonus", "w_distance", "w_effort", "w_distance_secondary", "w_bonus_intermediate"):
            w = getattr(self, name)
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {w}")
        if len(self.ejk_norm) != 3 or any(not np.isfinite(n) or n <= 0 for n in self.ejk_norm):
            raise ValueError("ejk_norm needs three positive scales")

    def scaled(self, alpha: float) -> "RewardConfig":
        return replace(
            self,
            w_bonus=self.w_bonus * alpha,
            w_distance=self.w_distance * alpha,
            w_effort=self.w_effort * alpha,
            w_distance_secondary=self.w_distance_secondary * alpha,
            w_bonus_intermediate=self.w_bonus_intermediate * alpha,
        )

    def to_dict(self):
        return {
            "w_bonus": self.w_bonus,
            "w_distance": self.w_distance,
            "w_effort": self.w_effort,
            "distance_kind": self.distance_kind.value,
            "effort_model": self.effort_model.to_dict(),
            "ejk_norm": list(self.ejk_norm),
            "w_distance_secondary": self.w_distance_secondary,
            "w_bonus_intermediate": self.w_bonus_intermediate,
        }

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        if "effort_model" in kw:
            kw["effort_model"] = EffortModel.parse(kw["effort_model"])
        if "ejk_norm" in kw:
            kw["ejk_norm"] = tuple(kw["ejk_norm"])
        return cls(**kw)


@dataclass
class RewardBreakdown:
    bonus_part: np.ndarray | float
    distance_part: np.ndarray | float
    effort_part: np.ndarray | float
    total: np.ndarray | float


def distance_term(kind: DistanceKind, d):
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValueError("distance must be finite and >= 0")
    kind = DistanceKind(kind)
    if kind is DistanceKind.ABSOLUTE:
        out = d
    elif kind is DistanceKind.SQUARED:
        out = d * d
    else:
        out = -np.expm1(-10.0 * d) / 10.0
    return out if out.ndim else float(out)


def _sq(x):
    x = np.asarray(x, dtype=float)
    return (x * x).sum(-1)


def effort_term(model: EffortModel, s: EffortSignals, cfg: RewardConfig | None = None):
    """Effort penalty for one control step (or a batch of them)."""
    model = EffortModel.parse(model)
    c = model.coeffs
    kind = model.kind
    if kind is EffortKind.ZERO:
        out = np.zeros(np.shape(s.u)[:-1])
    elif kind is EffortKind.DC:
        out = c[0] * _sq(s.u)
    elif kind is EffortKind.CTC:
        out = c[0] * _sq(s.u) + c[1] * _sq(s.tau_dot)
    elif kind is EffortKind.JAC:
        out = c[0] * _sq(s.u) + c[1] * _sq(s.qacc)
    else:
        n1, n2, n3 = cfg.ejk_norm if cfg is not None else (1.0, 1.0, 1.0)
        r_energy = np.asarray(s.energy, dtype=float) / n1
        r_jerk = _sq(s.jerk) / n2
        r_work = np.asarray(s.work_increment, dtype=float) / n3
        out = (c[0] * r_energy + c[1] * r_jerk + c[2] * r_work) / (c[0] + c[1] + c[2])
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def compose(cfg: RewardConfig, goal_reached, d, s: EffortSignals, *, secondary_distance=None, intermediate=None):
    """Score one step. ``secondary_distance``/``intermediate`` only matter for
    configs that weight them (remote control); they default to zero."""
    goal = np.asarray(goal_reached, dtype=float)
    bonus = cfg.w_bonus * goal
    if cfg.w_bonus_intermediate and intermediate is not None:
        bonus = bonus + cfg.w_bonus_intermediate * np.asarray(intermediate, dtype=float)

    if cfg.w_distance:
        dist = cfg.w_distance * np.asarray(distance_term(cfg.distance_kind, d))
    else:
        dist = np.zeros(np.shape(d))
    if cfg.w_distance_secondary and secondary_distance is not None:
        dist = dist + cfg.w_distance_secondary * np.asarray(distance_term(cfg.distance_kind, secondary_distance))

    if cfg.w_effort:
        effort = cfg.w_effort * np.asarray(effort_term(cfg.effort_model, s, cfg))
    else:
        effort = np.zeros(np.shape(d))

    total = bonus - dist - effort
    if np.ndim(total) == 0:
        return RewardBreakdown(float(bonus), float(dist), float(effort), float(total))
    return RewardBreakdown(bonus, dist, effort, total)


@functools.lru_cache(maxsize=1)
def default_ejk_norm():
    return calibrate_ejk_norm()


def calibrate_ejk_norm(params=None, duration=2.0, frequency=2.0):
    """Raw-signal scales for EJK from a vigorous reference motion.

    Flexors (even muscles) and extensors (odd muscles) alternate fully on
    at ``frequency`` Hz from the rest pose; each scale is the per-step
    maximum of the corresponding raw signal over the run.
    """
    from .arm import ArmParams, ArmState, effort_signals, step

    params = params or ArmParams()
    state = ArmState.rest()
    flex = np.array([1.0, 0, 1, 0, 1, 0])
    n_steps = int(round(duration / params.control_dt))
    peaks = np.zeros(3)
    for k in range(n_steps):
        t = k * params.control_dt
        u = flex if (t * frequency) % 1.0 < 0.5 else 1.0 - flex
        nxt = step(state, u, params)
        sig = effort_signals(state, nxt, u, params)
        peaks = np.maximum(peaks, [sig.energy, _sq(sig.jerk), sig.work_increment])
        state = nxt
    return tuple(float(p) for p in peaks)
