import json

import numpy as np
import pytest

from reward_lab import tasks as T
from reward_lab.arm import ArmParams, ArmState, fingertip
from reward_lab.policy import Policy
from reward_lab.reward import RewardConfig
from reward_lab.rollout import EpisodeLog, obs_dim, observe, rollout, rollouts

RC = RewardConfig(w_bonus=8, w_distance=1, w_effort=0.1, effort_model="dc")


def wiggly_policy(kind, seed=0):
    tc = T.TaskConfig.default(kind)
    p = Policy.initial(obs_dim(tc), seed=seed)
    p.params = p.params + 0.3 * np.random.default_rng(seed).normal(size=p.params.size)
    return tc, p


def test_observation_lengths():
    assert {k.value: obs_dim(T.TaskConfig.default(k)) for k in T.TaskKind} == {
        "pointing": 16, "tracking": 17, "choice_reaction": 19, "typing": 15, "remote_control": 18,
    }


def test_target_relative_vector_zero_at_target():
    p = ArmParams()
    q = np.array([0.9, 1.0])
    tc = T.TaskConfig.default("pointing")
    ts = T.task_init(tc, 0)
    ts.target_position[:] = fingertip(q, p)
    obs = observe(ArmState.rest(q, batch=1), ts, tc, p)
    # layout: q, qdot, activations, fingertip, target - fingertip, radius, extras
    np.testing.assert_array_equal(obs[0, 10:12], fingertip(q, p))
    np.testing.assert_array_equal(obs[0, 12:14], [0.0, 0.0])


@pytest.mark.parametrize("kind", [k.value for k in T.TaskKind])
def test_rollout_log_invariants(kind):
    tc, pol = wiggly_policy(kind)
    log = rollout(pol, tc, RC, seed=4)
    n = log.n_steps
    assert n >= 1
    for key, arr in log.steps.items():
        assert len(arr) == n, key
    assert log.resum() == log.episode_return
    # independent re-summation in a different order agrees to rounding
    assert float(np.sum(log.steps["total"])) == pytest.approx(log.episode_return, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(log.steps["total"],
                               log.steps["bonus_part"] - log.steps["distance_part"] - log.steps["effort_part"])


def test_zero_policy_commands_half_every_step():
    tc = T.TaskConfig.default("pointing")
    log = rollout(Policy.zeros((16, 32, 32, 6)), tc, RC, seed=1)
    assert np.all(log.steps["u"] == 0.5)
    assert log.n_steps == tc.max_steps


def test_rollout_is_bit_deterministic():
    tc, pol = wiggly_policy("choice_reaction", 2)
    assert rollout(pol, tc, RC, 7).to_jsonl() == rollout(pol, tc, RC, 7).to_jsonl()


def test_batched_rollouts_match_single():
    tc, pol = wiggly_policy("typing", 3)
    many = rollouts(pol, tc, RC, [5, 6, 7])
    one = rollout(pol, tc, RC, 6)
    assert many[1].to_jsonl() == one.to_jsonl()


def test_jsonl_round_trip(tmp_path):
    tc, pol = wiggly_policy("remote_control", 1)
    log = rollout(pol, tc, RC, 3, config_hash="abc")
    path = tmp_path / "ep.jsonl"
    log.save(path)
    back = EpisodeLog.load(path)
    assert back.to_jsonl() == log.to_jsonl()
    assert back.config_hash == "abc"
    header = json.loads(path.read_text().splitlines()[0])
    assert header["n_steps"] == log.n_steps and header["return"] == log.episode_return


def test_truncated_log_rejected(tmp_path):
    tc, pol = wiggly_policy("typing", 1)
    text = rollout(pol, tc, RC, 3).to_jsonl()
    lines = text.splitlines()
    with pytest.raises(ValueError, match="truncated"):
        EpisodeLog.from_jsonl("\n".join(lines[:-3]))
    with pytest.raises(ValueError, match="line"):
        EpisodeLog.from_jsonl("\n".join(lines[:-1] + [lines[-1][:20]]))


def test_trial_outcomes_recorded():
    tc, pol = wiggly_policy("pointing", 0)
    log = rollout(pol, tc, RC, 2)
    assert len(log.trials) == int(np.sum(log.steps["trial_done"]))
    assert all(0 < t <= tc.trial_timeout + 1e-9 for _, t in log.trials)


def test_blow_up_aborts_with_flag():
    # explicit damping with a coarse step is unstable: |1 - dt b / M| >> 1
    arm = ArmParams(joint_damping=(1e4, 1e4), physics_dt=0.05, joint_limits=((-1e300, 1e300), (-1e300, 1e300)))
    tc = T.TaskConfig.default("pointing")
    pol = Policy.initial(obs_dim(tc), command=0.9)
    pol.params[-6:] = [5, -5, 5, -5, 5, -5]
    log = rollout(pol, tc, RC, 0, arm_params=arm)
    assert log.aborted
    assert log.n_steps < tc.max_steps
    assert np.isfinite(log.episode_return)


def test_policy_obs_mismatch_rejected():
    tc = T.TaskConfig.default("typing")
    with pytest.raises(ValueError, match="observations"):
        rollout(Policy.initial(16), tc, RC, 0)
