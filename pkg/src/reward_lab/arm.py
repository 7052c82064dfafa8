"""Planar two-link arm driven by six muscles.

The arm moves in a horizontal plane (no gravity). Muscles are first-order
activation filters whose forces map to joint torques through a constant
moment-arm matrix:

    muscle 0/1  shoulder flexor / extensor
    muscle 2/3  elbow flexor / extensor
    muscle 4/5  biarticular flexor / extensor

Every function here accepts either a single arm (``q.shape == (2,)``) or a
batch of arms (``q.shape == (B, 2)``); the batched form is what the rollout
engine uses. Both go through the same compiled kernel, so a batch of one is
bit-identical to the single-arm call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np


class ArmBlowup(FloatingPointError):
    """Raised when the arm state or its input is no longer finite."""


def _default_moment_arms():
    return np.array(
        [
            [0.04, -0.04, 0.0, 0.0, 0.03, -0.03],
            [0.0, 0.0, 0.03, -0.03, 0.025, -0.025],
        ]
    )


@dataclass(frozen=True)
class ArmParams:
    link_lengths: tuple = (0.33, 0.32)
    link_masses: tuple = (2.1, 1.65)
    # about each link's centre of mass (uniform rods: m l^2 / 12)
    link_inertias: tuple = (2.1 * 0.33**2 / 12, 1.65 * 0.32**2 / 12)
    joint_damping: tuple = (1.0, 0.8)
    joint_limits: tuple = ((-1.0, 2.5), (0.0, 2.6))
    moment_arms: np.ndarray = field(default_factory=_default_moment_arms)
    max_muscle_forces: tuple = (250.0, 250.0, 200.0, 200.0, 150.0, 150.0)
    activation_time_constant: float = 0.05
    physics_dt: float = 1e-3
    control_dt: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "moment_arms", np.asarray(self.moment_arms, dtype=float))
        self.validate()

    def validate(self):
        R = self.moment_arms
        if R.shape != (2, 6):
            raise ValueError(f"moment_arms must be 2x6, got {R.shape}")
        for name in ("link_lengths", "link_masses", "link_inertias", "max_muscle_forces"):
            vals = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
                raise ValueError(f"{name} must be finite and > 0")
        if np.any(np.asarray(self.joint_damping) < 0):
            raise ValueError("joint_damping must be >= 0")
        for lo, hi in self.joint_limits:
            if not lo < hi:
                raise ValueError("joint_limits must be (low, high) with low < high")
        if self.activation_time_constant <= 0:
            raise ValueError("activation_time_constant must be > 0")
        if self.physics_dt <= 0 or self.control_dt <= 0:
            raise ValueError("physics_dt and control_dt must be > 0")
        ratio = self.control_dt / self.physics_dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("control_dt must be an integer multiple of physics_dt")
        for row in R:
            if not (np.any(row > 0) and np.any(row < 0)):
                raise ValueError("each joint needs both positive and negative moment arms")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.physics_dt))

    def to_dict(self):
        return {
            "link_lengths": list(self.link_lengths),
            "link_masses": list(self.link_masses),
            "link_inertias": list(self.link_inertias),
            "joint_damping": list(self.joint_damping),
            "joint_limits": [list(lim) for lim in self.joint_limits],
            "moment_arms": self.moment_arms.tolist(),
            "max_muscle_forces": list(self.max_muscle_forces),
            "activation_time_constant": self.activation_time_constant,
            "physics_dt": self.physics_dt,
            "control_dt": self.control_dt,
        }

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        for key in ("link_lengths", "link_masses", "link_inertias", "joint_damping", "max_muscle_forces"):
            if key in kw:
                kw[key] = tuple(float(v) for v in kw[key])
        if "joint_limits" in kw:
            kw["joint_limits"] = tuple(tuple(float(v) for v in lim) for lim in kw["joint_limits"])
        return cls(**kw)

    def _packed(self):
        # cached kernel arguments; ArmParams is frozen so this never goes stale
        packed = self.__dict__.get("_packed_cache")
        if packed is None:
            l1, l2 = self.link_lengths
            m1, m2 = self.link_masses
            i1, i2 = self.link_inertias
            geom = np.array([l1, l2 / 2.0, l1 / 2.0, m1, m2, i1, i2], dtype=float)
            forces = np.asarray(self.max_muscle_forces, dtype=float)
            limits = np.asarray(self.joint_limits, dtype=float)
            packed = (
                geom,
                np.ascontiguousarray(self.moment_arms * forces[None, :]),
                np.asarray(self.joint_damping, dtype=float),
                np.ascontiguousarray(limits[:, 0]),
                np.ascontiguousarray(limits[:, 1]),
                math.exp(-self.physics_dt / self.activation_time_constant),
            )
            object.__setattr__(self, "_packed_cache", packed)
        return packed


@dataclass
class ArmState:
    q: np.ndarray
    qdot: np.ndarray
    qacc: np.ndarray
    prev_qacc: np.ndarray
    activations: np.ndarray
    tau: np.ndarray
    prev_tau: np.ndarray
    sim_time: np.ndarray | float = 0.0

    @classmethod
    def rest(cls, q0=(0.3, 1.2), batch: int | None = None):
        q = np.asarray(q0, dtype=float)
        shape2 = (2,) if batch is None else (batch, 2)
        shape6 = (6,) if batch is None else (batch, 6)
        z2 = np.zeros(shape2)
        return cls(
            q=np.broadcast_to(q, shape2).copy(),
            qdot=z2.copy(),
            qacc=z2.copy(),
            prev_qacc=z2.copy(),
            activations=np.zeros(shape6),
            tau=z2.copy(),
            prev_tau=z2.copy(),
            sim_time=0.0 if batch is None else np.zeros(batch),
        )

    def copy(self):
        return ArmState(**{k: np.copy(v) for k, v in self.__dict__.items()})

    def index(self, i):
        """One arm out of a batch."""
        out = {k: np.copy(v[i]) if np.ndim(v) else v for k, v in self.__dict__.items()}
        out["sim_time"] = float(out["sim_time"])
        return ArmState(**out)


@dataclass
class EffortSignals:
    u: np.ndarray
    qacc: np.ndarray
    jerk: np.ndarray
    tau_dot: np.ndarray
    work_increment: np.ndarray | float
    energy: np.ndarray | float


def mass_matrix(q, params: ArmParams):
    l1, r2, r1, m1, m2, i1, i2 = params._packed()[0]
    c2 = np.cos(np.asarray(q)[..., 1])
    m11 = i1 + i2 + m1 * r1 * r1 + m2 * (l1 * l1 + r2 * r2 + 2 * l1 * r2 * c2)
    m12 = i2 + m2 * (r2 * r2 + l1 * r2 * c2)
    m22 = np.full_like(c2, i2 + m2 * r2 * r2)
    return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)


def kinetic_energy(state: ArmState, params: ArmParams):
    M = mass_matrix(state.q, params)
    v = state.qdot
    return 0.5 * np.einsum("...i,...ij,...j->...", v, M, v)


def muscle_torque(activations, params: ArmParams):
    """Joint torque from activations alone, before damping."""
    return np.asarray(activations) @ params._packed()[1].T


@numba.njit(cache=True)
def _advance(q, qd, a, u, active, geom, RF, damp, lo, hi, n_sub, dt, decay, qacc, tau):
    l1, r2, r1, m1, m2, i1, i2 = geom[0], geom[1], geom[2], geom[3], geom[4], geom[5], geom[6]
    m22 = i2 + m2 * r2 * r2
    for b in range(q.shape[0]):
        if not active[b]:
            continue
        for _ in range(n_sub):
            for k in range(6):
                a[b, k] = u[b, k] + (a[b, k] - u[b, k]) * decay
            t0 = -damp[0] * qd[b, 0]
            t1 = -damp[1] * qd[b, 1]
            for k in range(6):
                t0 += RF[0, k] * a[b, k]
                t1 += RF[1, k] * a[b, k]
            c2 = math.cos(q[b, 1])
            s2 = math.sin(q[b, 1])
            m11 = i1 + i2 + m1 * r1 * r1 + m2 * (l1 * l1 + r2 * r2 + 2.0 * l1 * r2 * c2)
            m12 = i2 + m2 * (r2 * r2 + l1 * r2 * c2)
            h = m2 * l1 * r2 * s2
            w0 = qd[b, 0]
            w1 = qd[b, 1]
            f0 = t0 + h * w1 * (2.0 * w0 + w1)
            f1 = t1 - h * w0 * w0
            det = m11 * m22 - m12 * m12
            acc0 = (m22 * f0 - m12 * f1) / det
            acc1 = (m11 * f1 - m12 * f0) / det
            qd[b, 0] = w0 + dt * acc0
            qd[b, 1] = w1 + dt * acc1
            for j in range(2):
                q[b, j] += dt * qd[b, j]
                if q[b, j] < lo[j]:
                    q[b, j] = lo[j]
                    if qd[b, j] < 0.0:
                        qd[b, j] = 0.0
                elif q[b, j] > hi[j]:
                    q[b, j] = hi[j]
                    if qd[b, j] > 0.0:
                        qd[b, j] = 0.0
            qacc[b, 0] = acc0
            qacc[b, 1] = acc1
            tau[b, 0] = t0
            tau[b, 1] = t1


def step_batch(state: ArmState, u, params: ArmParams, active=None):
    """Advance a batch of arms one control step.

    ``active`` masks arms that should be left untouched (finished episodes).
    Returns the new state and a boolean array flagging non-finite results;
    flagged arms keep whatever the integrator produced, callers decide.
    """
    q = np.array(state.q, dtype=float, order="C")
    B = q.shape[0]
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    if active is None:
        active = np.ones(B, dtype=bool)
    qd = np.array(state.qdot, dtype=float, order="C")
    a = np.array(state.activations, dtype=float, order="C")
    qacc = np.array(state.qacc, dtype=float, order="C")
    tau = np.array(state.tau, dtype=float, order="C")
    geom, RF, damp, lo, hi, decay = params._packed()
    _advance(q, qd, a, np.ascontiguousarray(u), np.ascontiguousarray(active),
             geom, RF, damp, lo, hi, params.substeps, params.physics_dt, decay, qacc, tau)
    keep = ~active
    new = ArmState(
        q=q,
        qdot=qd,
        qacc=qacc,
        prev_qacc=np.where(keep[:, None], state.prev_qacc, state.qacc),
        activations=a,
        tau=tau,
        prev_tau=np.where(keep[:, None], state.prev_tau, state.tau),
        sim_time=np.where(keep, state.sim_time, np.asarray(state.sim_time) + params.control_dt),
    )
    bad = ~(np.isfinite(q).all(1) & np.isfinite(qd).all(1) & np.isfinite(qacc).all(1))
    return new, bad & active


def step(state: ArmState, u, params: ArmParams) -> ArmState:
    """Advance one arm by one control step of ``params.control_dt``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (6,):
        raise ValueError(f"control input must have 6 entries, got shape {u.shape}")
    fields = (state.q, state.qdot, state.qacc, state.activations, state.tau)
    if not (np.isfinite(u).all() and all(np.isfinite(f).all() for f in fields)):
        raise ArmBlowup("non-finite arm state or control input")
    batch = ArmState(
        **{k: np.asarray(v, dtype=float)[None] for k, v in state.__dict__.items()}
    )
    new, bad = step_batch(batch, u[None], params)
    if bad[0]:
        raise ArmBlowup(f"integration diverged at t={float(state.sim_time):.3f}s")
    return new.index(0)


def fingertip(q, params: ArmParams):
    q = np.asarray(q, dtype=float)
    l1, l2 = params.link_lengths
    q1 = q[..., 0]
    q12 = q1 + q[..., 1]
    return np.stack([l1 * np.cos(q1) + l2 * np.cos(q12), l1 * np.sin(q1) + l2 * np.sin(q12)], -1)


def jacobian(q, params: ArmParams):
    q = np.asarray(q, dtype=float)
    l1, l2 = params.link_lengths
    q1 = q[..., 0]
    q12 = q1 + q[..., 1]
    s1, c1, s12, c12 = np.sin(q1), np.cos(q1), np.sin(q12), np.cos(q12)
    row0 = np.stack([-l1 * s1 - l2 * s12, -l2 * s12], -1)
    row1 = np.stack([l1 * c1 + l2 * c12, l2 * c12], -1)
    return np.stack([row0, row1], -2)


def fingertip_velocity(state: ArmState, params: ArmParams):
    return np.einsum("...ij,...j->...i", jacobian(state.q, params), state.qdot)


def effort_signals(before: ArmState, after: ArmState, u, params: ArmParams) -> EffortSignals:
    """Effort-model inputs for the control step ``before -> after``."""
    dt = params.control_dt
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    return EffortSignals(
        u=u,
        qacc=after.qacc,
        jerk=(after.qacc - before.qacc) / dt,
        tau_dot=(after.tau - before.tau) / dt,
        work_increment=np.abs(after.tau * after.qdot).sum(-1) * dt,
        energy=np.abs(u).mean(-1),
    )


def with_rates(params: ArmParams, physics_dt=None, control_dt=None) -> ArmParams:
    return replace(
        params,
        physics_dt=params.physics_dt if physics_dt is None else physics_dt,
        control_dt=params.control_dt if control_dt is None else control_dt,
    )
