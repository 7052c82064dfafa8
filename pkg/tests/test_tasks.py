import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reward_lab import tasks as T
from reward_lab.arm import ArmParams, fingertip
from reward_lab.tasks import EventTag, TaskConfig, TaskKind

DT = 0.05


def init(kind, seed=0, **kw):
    cfg = TaskConfig.default(kind, **kw)
    return cfg, T.task_init(cfg, seed)


def far():
    return np.array([[5.0, 5.0]])


# ---------------------------------------------------------------- sampling


def test_same_seed_same_schedule():
    for kind in TaskKind:
        cfg = TaskConfig.default(kind)
        a, b = T.task_init(cfg, 17), T.task_init(cfg, 17)
        for name in ("schedule_targets", "schedule_radii", "schedule_stimuli", "tracking_params", "box_center"):
            assert np.array_equal(getattr(a, name), getattr(b, name))


def test_batched_init_matches_single_seeds():
    cfg = TaskConfig.default("pointing")
    batch = T.task_init(cfg, [3, 9, 4])
    one = T.task_init(cfg, 9)
    assert np.array_equal(batch.schedule_targets[1], one.schedule_targets[0])


def test_pointing_targets_inside_reachable_annulus():
    cfg = TaskConfig.default("pointing", trials_per_episode=1000)
    ts = T.task_init(cfg, 5)
    pts = ts.schedule_targets[0]
    assert cfg.workspace.contains(pts).all()
    # inverse-kinematics oracle: some elbow angle within limits reaches each target
    p = ArmParams()
    (l1, l2), (lim1, lim2) = p.link_lengths, p.joint_limits
    for x, y in pts:
        c2 = (x * x + y * y - l1 * l1 - l2 * l2) / (2 * l1 * l2)
        assert -1.0 <= c2 <= 1.0
        q2 = math.acos(c2)
        q1 = math.atan2(y, x) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
        assert lim1[0] <= q1 <= lim1[1] and lim2[0] <= q2 <= lim2[1]
        np.testing.assert_allclose(fingertip(np.array([q1, q2]), p), [x, y], atol=1e-12)
    r = ts.schedule_radii[0]
    assert r.min() >= 0.025 and r.max() <= 0.075


def test_choice_stimuli_uniform_chi_square():
    cfg = TaskConfig.default("choice_reaction", trials_per_episode=10_000)
    counts = np.bincount(T.task_init(cfg, 1).schedule_stimuli[0], minlength=4)
    expected = 2500.0
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 11.345  # chi-square critical value, 3 dof, alpha 0.01


# ---------------------------------------------------------------- pointing


def run(ts, positions, speeds=None):
    outs = []
    for i, f in enumerate(positions):
        s = None if speeds is None else speeds[i]
        ts, out = T.update(ts, np.atleast_2d(f), s if s is not None else np.zeros(ts.batch), DT)
        outs.append(out)
    return ts, outs


def test_dwell_completes_on_final_step():
    cfg, ts = init("pointing", 2)
    c = ts.target_position[0].copy()
    n = int(round(cfg.dwell_time / DT))
    ts, outs = run(ts, [c] * n)
    assert [bool(o.goal_reached[0]) for o in outs] == [False] * (n - 1) + [True]
    assert outs[-1].trial_done[0] and ts.trial_index[0] == 1
    assert not np.array_equal(ts.target_position[0], c) or ts.schedule_targets[0, 1].tolist() == c.tolist()


def test_leaving_resets_dwell():
    cfg, ts = init("pointing", 2)
    c = ts.target_position[0].copy()
    ts, outs = run(ts, [c] * 9)  # 0.45 s inside
    assert ts.dwell_timer[0] == pytest.approx(0.45)
    ts, outs = run(ts, [far()[0]])
    assert ts.dwell_timer[0] == 0.0 and not outs[0].goal_reached[0]


def test_pointing_timeout_counts_four_seconds():
    cfg, ts = init("pointing", 2)
    n = int(round(cfg.trial_timeout / DT))
    ts, outs = run(ts, [far()[0]] * n)
    assert [bool(o.trial_done[0]) for o in outs].index(True) == n - 1
    last = outs[-1]
    assert not last.goal_reached[0] and last.event[0] == EventTag.TIMEOUT
    assert last.trial_time[0] == pytest.approx(4.0)
    np.testing.assert_array_equal(ts.target_position[0], ts.schedule_targets[0, 1])


def test_pointing_distance_is_surface_distance():
    cfg, ts = init("pointing", 4)
    c, r = ts.target_position[0], ts.target_radius[0]
    f = c + np.array([r + 0.1, 0.0])
    _, out = T.update(ts, f[None], np.zeros(1), DT)
    assert out.distance[0] == pytest.approx(0.1)


def test_episode_ends_after_ten_trials_and_freezes():
    cfg, ts = init("pointing", 2)
    steps = int(round(cfg.trial_timeout / DT)) * 10
    ts, outs = run(ts, [far()[0]] * steps)
    assert outs[-1].episode_done[0] and ts.done[0]
    frozen = ts.copy()
    ts2, out = T.update(ts, far(), np.zeros(1), DT)
    assert not out.trial_done[0] and not out.goal_reached[0]
    for name in ("trial_index", "elapsed", "dwell_timer", "target_position"):
        assert np.array_equal(getattr(ts2, name), getattr(frozen, name))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.tuples(st.floats(-0.2, 0.6), st.floats(0.0, 0.7)), min_size=20,
                                         max_size=120))
def test_pointing_counters_and_dwell_bounds(seed, path):
    cfg, ts = init("pointing", seed)
    for p in path:
        prev_target = ts.target_position.copy()
        ts, out = T.update(ts, np.array([p]), np.zeros(1), DT)
        assert 0.0 <= ts.dwell_timer[0] <= cfg.dwell_time + 1e-12
        assert ts.trial_index[0] <= cfg.trials_per_episode
        if out.goal_reached[0]:
            # post-hoc predicate: inside the (previous) target sphere
            assert out.distance[0] == 0.0
        if not out.trial_done[0]:
            assert np.array_equal(ts.target_position, prev_target)


@given(st.floats(-0.3, 0.7), st.floats(-0.3, 0.7), st.floats(-1e-4, 1e-4), st.floats(-1e-4, 1e-4))
def test_distance_continuous_in_fingertip(x, y, dx, dy):
    cfg, ts = init("pointing", 8)
    _, a = T.update(ts, np.array([[x, y]]), np.zeros(1), DT)
    _, b = T.update(ts, np.array([[x + dx, y + dy]]), np.zeros(1), DT)
    assert abs(a.distance[0] - b.distance[0]) <= math.hypot(dx, dy) + 1e-12


# ---------------------------------------------------------------- choice reaction


def test_press_needs_speed():
    cfg, ts = init("choice_reaction", 3)
    c = ts.target_position[0]
    _, slow = T.update(ts, c[None], np.array([0.0]), DT)
    assert not slow.goal_reached[0] and slow.event[0] == EventTag.CONTACT
    _, fast = T.update(ts, c[None], np.array([cfg.press_speed]), DT)
    assert fast.goal_reached[0] and fast.trial_done[0]


def test_wrong_button_press_keeps_trial():
    cfg, ts = init("choice_reaction", 3)
    wrong = (ts.stimulus_index[0] + 1) % 4
    c = np.asarray(cfg.button_centers[wrong])
    ts2, out = T.update(ts, c[None], np.array([1.0]), DT)
    assert out.event[0] == EventTag.WRONG_PRESS and not out.trial_done[0]
    assert ts2.latched[0] == wrong
    # holding the latched button is not a second press
    _, again = T.update(ts2, c[None], np.array([1.0]), DT)
    assert again.event[0] == EventTag.NONE


def test_choice_timeout_and_new_stimulus():
    cfg, ts = init("choice_reaction", 3)
    n = int(round(cfg.trial_timeout / DT))
    ts, outs = run(ts, [far()[0]] * n)
    assert outs[-1].trial_done[0] and not outs[-1].goal_reached[0]
    assert ts.stimulus_index[0] == ts.schedule_stimuli[0, 1]


def test_choice_distance_targets_correct_button():
    cfg, ts = init("choice_reaction", 3)
    c = np.asarray(cfg.button_centers[ts.stimulus_index[0]])
    _, out = T.update(ts, (c + [0.0, cfg.button_radius + 0.05])[None], np.zeros(1), DT)
    assert out.distance[0] == pytest.approx(0.05)


# ---------------------------------------------------------------- typing


def test_typing_correct_press_from_above_ends_episode():
    cfg, ts = init("typing", 6)
    key = cfg.key_centers()[ts.stimulus_index[0]]
    above = key + [0.0, 0.03]
    ts, _ = run(ts, [above] * 23)
    ts, outs = run(ts, [key], speeds=[np.array([0.2])])
    assert outs[0].goal_reached[0] and outs[0].episode_done[0]
    assert outs[0].trial_time[0] == pytest.approx(1.2)


def test_typing_press_from_below_does_not_count():
    cfg, ts = init("typing", 6)
    key = cfg.key_centers()[ts.stimulus_index[0]]
    ts, _ = run(ts, [key - [0.0, 0.03]])
    ts, outs = run(ts, [key], speeds=[np.array([0.2])])
    assert not outs[0].goal_reached[0]


def test_typing_wrong_key_is_error_event():
    cfg, ts = init("typing", 6)
    wrong = (ts.stimulus_index[0] + 3) % cfg.key_count
    key = cfg.key_centers()[wrong]
    ts, _ = run(ts, [key + [0.0, 0.03]])
    ts, outs = run(ts, [key], speeds=[np.array([0.2])])
    assert outs[0].event[0] == EventTag.WRONG_PRESS and not outs[0].episode_done[0]


def test_typing_times_out_at_three_seconds():
    cfg, ts = init("typing", 6)
    ts, outs = run(ts, [far()[0]] * 60)
    assert [bool(o.episode_done[0]) for o in outs].index(True) == 59
    assert outs[-1].event[0] == EventTag.TIMEOUT


# ---------------------------------------------------------------- tracking


def test_tracking_glued_fingertip_always_inside():
    cfg, ts = init("tracking", 12)
    outs = []
    for k in range(1, 201):
        target = T.tracking_target(ts, k * DT)
        ts, out = T.update(ts, target, np.zeros(1), DT)
        outs.append(out)
    assert all(o.goal_reached[0] for o in outs) and all(o.distance[0] == 0.0 for o in outs)
    assert outs[-1].episode_done[0] and not outs[-2].episode_done[0]


def test_tracking_stationary_fingertip_not_always_inside():
    cfg, ts = init("tracking", 12)
    f = np.asarray(cfg.tracking_center)[None]
    inside = []
    for _ in range(200):
        ts, out = T.update(ts, f, np.zeros(1), DT)
        inside.append(bool(out.goal_reached[0]))
    assert np.mean(inside) < 1.0


def test_tracking_velocity_is_derivative_of_path():
    _, ts = init("tracking", 2)
    t, h = 3.3, 1e-6
    fd = (T.tracking_target(ts, t + h) - T.tracking_target(ts, t - h)) / (2 * h)
    np.testing.assert_allclose(T.tracking_target(ts, t, derivative=True), fd, atol=1e-6)


def test_tracking_frequencies_in_band():
    cfg = TaskConfig.default("tracking")
    ts = T.task_init(cfg, list(range(200)))
    f = ts.tracking_params[..., 1]
    assert f.min() >= 0.1 and f.max() <= 0.4


# ---------------------------------------------------------------- remote control


def test_remote_car_idle_without_joystick_contact():
    cfg, ts = init("remote_control", 1)
    sec = []
    for _ in range(200):
        ts, out = T.update(ts, far(), np.zeros(1), DT)
        sec.append(out.secondary_distance[0])
        assert not out.contact[0]
    assert ts.car_position[0] == 0.0 and len(set(sec)) == 1


def test_remote_full_deflection_matches_closed_form():
    cfg, ts = init("remote_control", 1)
    tip = np.asarray(cfg.joystick_center) + cfg.joystick_radius * np.asarray(cfg.joystick_axis)
    k, b = cfg.car_gain, cfg.car_damping
    for n in range(1, 201):
        ts, out = T.update(ts, tip[None], np.zeros(1), DT)
        t = n * DT
        x = k / b * t - k / b**2 * (1 - math.exp(-b * t))
        assert abs(ts.car_position[0] - x) <= 1e-4
        assert out.contact[0] and out.event[0] in (EventTag.JOYSTICK_CONTACT, EventTag.GOAL)


def test_remote_goal_every_step_inside_box():
    cfg, ts = init("remote_control", 1)
    ts.car_position[:] = ts.box_center
    ts, out = T.update(ts, far(), np.zeros(1), DT)
    assert out.goal_reached[0] and out.secondary_distance[0] == 0.0
    ts, out = T.update(ts, far(), np.zeros(1), DT)
    assert out.goal_reached[0]


def test_remote_box_within_range():
    cfg = TaskConfig.default("remote_control")
    ts = T.task_init(cfg, list(range(100)))
    assert ts.box_center.min() >= 1.5 and ts.box_center.max() <= 2.5


# ---------------------------------------------------------------- config


def test_per_kind_defaults():
    assert TaskConfig.default("pointing").dwell_time == 0.5
    assert TaskConfig.default("choice_reaction").trial_timeout == 4.0
    assert TaskConfig.default("tracking").episode_duration == 10.0
    assert TaskConfig.default("typing").episode_duration == 3.0
    assert TaskConfig.default("remote_control").episode_duration == 10.0
    assert TaskConfig.default("pointing").trials_per_episode == 10


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError, match="trial_timeout"):
        TaskConfig.default("pointing", trial_timeout=0)
    cfg = TaskConfig.default("typing", key_pitch=0.04)
    assert TaskConfig.from_dict(cfg.to_dict()) == cfg


def test_bonus_termination_by_kind():
    assert TaskConfig.default("pointing").bonus_terminates_trial
    assert not TaskConfig.default("tracking").bonus_terminates_trial
    assert not TaskConfig.default("remote_control").bonus_terminates_trial
