import math

import pytest
from hypothesis import given, strategies as st

from reward_lab.advisor import Advice, advise, convergence_slow
from reward_lab.metrics import MetricsReport
from reward_lab.reward import RewardConfig


def report(**kw):
    base = dict(
        task_kind="pointing", episodes=5, success_rate=95.0, mean_completion_time=1.2,
        avg_target_distance=0.01, time_inside_target=40.0, character_error_rate=math.nan,
        approached_not_completed=False, no_movement=False, trembling=False,
        min_distance=0.0, max_displacement=0.3, rms_acceleration=2.0,
    )
    base.update(kw)
    return MetricsReport(**base)


STILL = dict(no_movement=True, min_distance=0.25, max_displacement=0.01, success_rate=0.0)
HOVER = dict(approached_not_completed=True, min_distance=0.005, success_rate=10.0)
SHAKY = dict(trembling=True, rms_acceleration=40.0)

# (report overrides, reward weights, bonus terminates trial, convergence slow) -> expected rule lines
TABLE = [
    ("G1", STILL, dict(w_bonus=8, w_distance=0, w_effort=0), True, False,
     ["G1: add-term distance (exponential, w=1) [no_movement]"]),
    ("G2", HOVER, dict(w_bonus=0, w_distance=1, w_effort=0), True, False,
     ["G2: add-term bonus (w=8) [approached_not_completed]"]),
    ("G2-recurring", dict(HOVER, task_kind="tracking"), dict(w_bonus=0, w_distance=1, w_effort=0), False, False,
     ["G2: add-term bonus (w=0.5) [approached_not_completed]"]),
    ("G3a", HOVER, dict(w_bonus=4, w_distance=1, w_effort=0), True, False,
     ["G3a: raise-weight bonus (x2) [approached_not_completed]"]),
    ("G3b", {}, dict(w_bonus=8, w_distance=1, w_effort=0), True, True,
     ["G3b: lower-weight bonus (/2) [convergence_slow]"]),
    ("G3c", dict(task_kind="tracking", success_rate=20.0), dict(w_bonus=8, w_distance=1, w_effort=0), False, False,
     ["G3c: lower-weight bonus (/2) [success_rate]"]),
    ("G4", SHAKY, dict(w_bonus=8, w_distance=1, w_effort=0), True, False,
     ["G4: add-term effort (dc, w=1) [trembling]"]),
    ("G5a", STILL, dict(w_bonus=8, w_distance=1, w_effort=20), True, False,
     ["G5a: lower-weight effort (/2) [no_movement] or raise-weight distance (x2)"]),
    ("G5a-far", dict(min_distance=0.3, success_rate=0.0), dict(w_bonus=8, w_distance=1, w_effort=5), True, False,
     ["G5a: lower-weight effort (/2) [min_distance] or raise-weight distance (x2)"]),
    ("G5b", SHAKY, dict(w_bonus=8, w_distance=1, w_effort=0.1), True, False,
     ["G5b: raise-weight effort (x2) [trembling]"]),
    ("clean", {}, dict(w_bonus=8, w_distance=1, w_effort=0.1), True, False,
     ["none: no-change none [all-clear]"]),
    ("clean-tracking", dict(task_kind="tracking", success_rate=60.0), dict(w_bonus=0.5, w_distance=1, w_effort=0),
     False, False, ["none: no-change none [all-clear]"]),
]


@pytest.mark.parametrize("name,over,weights,terminates,slow,expected", TABLE, ids=[t[0] for t in TABLE])
def test_rule_table(name, over, weights, terminates, slow, expected):
    advice = advise(report(**over), RewardConfig(**weights), terminates, slow)
    assert advice.lines() == expected


def test_every_rule_covered_by_table():
    seen = set()
    for _, over, weights, terminates, slow, _ in TABLE:
        for r in advise(report(**over), RewardConfig(**weights), terminates, slow).recommendations:
            seen.add(r.rule)
    assert seen == {"G1", "G2", "G3a", "G3b", "G3c", "G4", "G5a", "G5b", "none"}


def test_several_rules_fire_in_order():
    # still arm, no distance term, effort on: G1 then G5a
    adv = advise(report(**STILL), RewardConfig(w_bonus=8, w_distance=0, w_effort=1), True, False)
    assert [r.rule for r in adv.recommendations] == ["G1", "G5a"]


def test_advice_json_shape():
    adv = advise(report(**SHAKY), RewardConfig(w_bonus=8, w_distance=1), True, False)
    d = adv.to_dict()
    assert d["recommendations"][0]["component"] == "effort"
    assert isinstance(adv, Advice) and adv.to_json().endswith("\n")


flag = st.booleans()


@given(flag, flag, flag, st.floats(0, 100), st.floats(0, 0.5),
       st.sampled_from([0.0, 0.5, 1.0, 8.0]), st.sampled_from([0.0, 1.0, 3.0]), st.sampled_from([0.0, 0.1, 20.0]),
       flag, flag, st.floats(0.01, 1000))
def test_uniform_weight_scaling_leaves_advice_unchanged(anc, still, shaky, succ, mind, wb, wd, we, term, slow, k):
    rep = report(approached_not_completed=anc, no_movement=still, trembling=shaky, success_rate=succ,
                 min_distance=mind)
    cfg = RewardConfig(w_bonus=wb, w_distance=wd, w_effort=we)
    assert advise(rep, cfg, term, slow) == advise(rep, cfg.scaled(k), term, slow)


def test_convergence_slow():
    fast = [0, 9, 9.5, 10, 10, 10]
    slow = [0, 1, 2, 3, 6, 10]
    assert not convergence_slow(fast)
    assert convergence_slow(slow)
    assert not convergence_slow([5, 4, 3])
    assert not convergence_slow([1.0])
