import math

import numpy as np
import pytest

from reward_lab.metrics import (
    FlagThresholds,
    MetricsReport,
    _sample_indices,
    behavior_flags,
    metrics_from_logs,
    report_csv,
    sem,
)
from reward_lab.rollout import EpisodeLog
from reward_lab.tasks import EventTag


def make_log(kind="pointing", n=80, dt=0.05, distance=None, fingertip=None, trials=(), events=None, seed=0,
             aborted=False, timeout=4.0):
    distance = np.full(n, 0.2) if distance is None else np.asarray(distance, float)
    if fingertip is None:
        fingertip = np.column_stack([np.linspace(0.0, 0.3, n), np.zeros(n)])
    steps = {
        "distance": distance,
        "fingertip": np.asarray(fingertip, float),
        "event": np.zeros(n, int) if events is None else np.asarray(events, int),
        "total": np.zeros(n),
    }
    return EpisodeLog(kind, seed, 0.0, aborted, steps, list(trials), dt, "", timeout)


def test_success_rate_counts_trials_across_episodes():
    # 5 episodes x 10 trials, 45 successes
    logs = []
    for e in range(5):
        trials = [(not (e == 0 and i < 5), 1.0) for i in range(10)]
        logs.append(make_log(trials=trials, seed=e))
    r = metrics_from_logs(logs)
    assert r.trials == 50 and r.successes == 45
    assert r.success_rate == 90.0


def test_timeouts_count_at_timeout_value():
    logs = [make_log(trials=[(False, 4.0)] * 10, seed=s) for s in range(3)]
    r = metrics_from_logs(logs)
    assert r.mean_completion_time == 4.0
    assert r.success_rate == 0.0


def test_mixed_completion_time_is_plain_mean_with_timeouts():
    r = metrics_from_logs([make_log(trials=[(True, 1.0), (True, 2.0), (False, 4.0)])])
    assert r.mean_completion_time == pytest.approx(7.0 / 3, rel=1e-15)


def test_open_trial_counts_as_failure():
    r = metrics_from_logs([make_log(n=20, trials=[])])
    assert r.trials == 1 and r.successes == 0
    assert r.mean_completion_time == pytest.approx(1.0)


def test_sample_grid_is_20hz():
    np.testing.assert_array_equal(_sample_indices(10, 0.01), [4, 9])
    np.testing.assert_array_equal(_sample_indices(4, 0.05), [0, 1, 2, 3])
    assert len(_sample_indices(1000, 0.01)) == 200


def test_time_inside_uses_20hz_samples_only():
    # 100 Hz log: inside on every step except the ones that land on the 20 Hz grid
    n = 100
    d = np.zeros(n)
    d[4::5] = 0.1
    r = metrics_from_logs([make_log("tracking", n=n, dt=0.01, distance=d, timeout=1.0)])
    assert r.time_inside_target == 0.0
    d = np.full(n, 0.1)
    d[4::5] = 0.0
    r = metrics_from_logs([make_log("tracking", n=n, dt=0.01, distance=d, timeout=1.0)])
    assert r.time_inside_target == 100.0
    d[9::10] = 0.1  # half of the samples
    r = metrics_from_logs([make_log("tracking", n=n, dt=0.01, distance=d, timeout=1.0)])
    assert r.time_inside_target == 50.0


def test_glued_to_target_tracking():
    log = make_log("tracking", n=200, distance=np.zeros(200), timeout=10.0)
    r = metrics_from_logs([log])
    assert r.time_inside_target == 100.0
    assert r.success_rate == 100.0
    assert r.avg_target_distance == 0.0


def test_average_distance_is_mean_of_episode_means():
    logs = [make_log(n=10, distance=np.full(10, 0.1)), make_log(n=30, distance=np.full(30, 0.3))]
    assert metrics_from_logs(logs).avg_target_distance == pytest.approx(0.2)


def test_character_error_rate_counts_wrong_presses_and_timeouts():
    ev_ok = np.zeros(20, int)
    ev_ok[-1] = EventTag.GOAL
    ev_wrong = np.zeros(20, int)
    ev_wrong[5] = EventTag.WRONG_PRESS
    ev_wrong[-1] = EventTag.GOAL
    ev_to = np.zeros(60, int)
    ev_to[-1] = EventTag.TIMEOUT
    logs = [
        make_log("typing", n=20, events=ev_ok, trials=[(True, 1.0)], timeout=3.0),
        make_log("typing", n=20, events=ev_wrong, trials=[(True, 1.0)], timeout=3.0),
        make_log("typing", n=60, events=ev_to, trials=[(False, 3.0)], timeout=3.0),
        make_log("typing", n=20, events=ev_ok, trials=[(True, 1.0)], timeout=3.0),
    ]
    assert metrics_from_logs(logs).character_error_rate == 0.5
    assert math.isnan(metrics_from_logs([make_log()]).character_error_rate)


def test_sem_fixture():
    assert sem([90, 100, 95]) == pytest.approx(2.8868, abs=5e-5)
    assert sem([90, 100, 95]) == pytest.approx(5 / math.sqrt(3), rel=1e-14)
    assert math.isnan(sem([1.0]))


def test_flags_no_movement_and_approach():
    still = np.tile([0.3, 0.2], (50, 1))
    r = metrics_from_logs([make_log(fingertip=still, trials=[(False, 4.0)])])
    assert r.no_movement and not r.trembling
    near = np.full(50, 0.2)
    near[30] = 0.01
    r = metrics_from_logs([make_log(n=50, distance=near, trials=[(False, 4.0)])])
    assert r.approached_not_completed and not r.no_movement
    r = metrics_from_logs([make_log(n=50, distance=near, trials=[(True, 2.0)])])
    assert not r.approached_not_completed


def test_smooth_reach_is_not_trembling_but_jitter_is():
    t = np.arange(80) * 0.05
    smooth = np.column_stack([0.3 * (1 - np.cos(np.pi * t / t[-1])) / 2, np.zeros_like(t)])
    f = behavior_flags([make_log(fingertip=smooth)], FlagThresholds(), success_rate=100.0)
    assert not f["trembling"] and f["rms_acceleration"] < 1.0
    jitter = smooth.copy()
    jitter[::2, 1] += 0.03  # 3 cm zig-zag at 20 Hz: second difference 0.06 / 0.0025 = 24 m/s^2
    f = behavior_flags([make_log(fingertip=jitter)], FlagThresholds(), success_rate=100.0)
    assert f["trembling"]
    assert f["rms_acceleration"] == pytest.approx(24.0, rel=0.01)


def test_displacement_measured_from_start_pose():
    f = np.tile([0.3, 0.2], (20, 1))
    flags = behavior_flags([make_log(fingertip=f)], q0_fingertip=(0.0, 0.2), success_rate=0.0)
    assert flags["max_displacement"] == pytest.approx(0.3)


def test_aborted_episode_invalidates_report():
    r = metrics_from_logs([make_log(), make_log(seed=9, aborted=True)])
    assert not r.valid and "9" in r.invalid_reason


def test_report_round_trip_and_csv():
    r = metrics_from_logs([make_log(trials=[(True, 1.5)])], config_hash="ff")
    back = MetricsReport.from_json(r.to_json())
    assert back.to_json() == r.to_json()
    assert math.isnan(back.character_error_rate)
    text = report_csv([r])
    head, row = text.splitlines()
    assert head.split(",")[0] == "task_kind" and row.startswith("pointing,1,100.0")
    with pytest.raises(ValueError, match="unknown"):
        MetricsReport.from_dict({**r.to_dict(), "bogus": 1})
    d = r.to_dict()
    del d["success_rate"]
    with pytest.raises(ValueError, match="missing"):
        MetricsReport.from_dict(d)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        metrics_from_logs([])
    with pytest.raises(ValueError):
        FlagThresholds(near=-1)
