"""Rule-based reward-design advisor.

Rules read only behaviour flags, a few metrics compared against fixed
thresholds, and which weights are zero or relatively dominant. Scaling all
weights by the same factor therefore never changes the advice.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .metrics import FlagThresholds, MetricsReport
from .reward import RewardConfig

ADD, RAISE, LOWER, NO_CHANGE = "add-term", "raise-weight", "lower-weight", "no-change"
BONUS_DOMINANCE = 2.0  # w_bonus counts as "high" at twice the largest other weight


@dataclass(frozen=True)
class Recommendation:
    guideline: str  # G1 .. G5
    rule: str  # G1, G3b, ...
    diagnosis: str  # triggering flag or metric
    change: str
    component: str  # bonus | distance | effort | none
    magnitude: str  # "x2", "/2", an initial weight for added terms, or ""
    alternative: str = ""

    def line(self):
        s = f"{self.rule}: {self.change} {self.component}"
        if self.magnitude:
            s += f" ({self.magnitude})"
        s += f" [{self.diagnosis}]"
        if self.alternative:
            s += f" or {self.alternative}"
        return s


@dataclass
class Advice:
    recommendations: list = field(default_factory=list)

    def lines(self):
        return [r.line() for r in self.recommendations]

    def to_dict(self):
        return {"recommendations": [asdict(r) for r in self.recommendations]}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _bonus_high(cfg: RewardConfig):
    others = max(cfg.w_distance, cfg.w_effort)
    if cfg.w_bonus <= 0:
        return False
    return others == 0 or cfg.w_bonus >= BONUS_DOMINANCE * others


def advise(report: MetricsReport, cfg: RewardConfig, bonus_terminates_trial: bool, convergence_slow: bool,
           thresholds: FlagThresholds = FlagThresholds()) -> Advice:
    """Walk the guideline rules in order and collect every one that fires."""
    recs = []
    no_approach = report.no_movement or report.min_distance > thresholds.far
    poor = report.success_rate < thresholds.success

    def rec(*args, **kw):
        recs.append(Recommendation(*args, **kw))

    if cfg.w_distance == 0 and no_approach:
        diag = "no_movement" if report.no_movement else "min_distance"
        rec("G1", "G1", diag, ADD, "distance", "exponential, w=1")
    if cfg.w_bonus == 0 and report.approached_not_completed:
        rec("G2", "G2", "approached_not_completed", ADD, "bonus",
            "w=8" if bonus_terminates_trial else "w=0.5")
    if cfg.w_bonus > 0 and bonus_terminates_trial and report.approached_not_completed:
        rec("G3", "G3a", "approached_not_completed", RAISE, "bonus", "x2")
    if convergence_slow and _bonus_high(cfg):
        rec("G3", "G3b", "convergence_slow", LOWER, "bonus", "/2")
    if not bonus_terminates_trial and poor and _bonus_high(cfg):
        rec("G3", "G3c", "success_rate", LOWER, "bonus", "/2")
    if report.trembling and cfg.w_effort == 0:
        rec("G4", "G4", "trembling", ADD, "effort", "dc, w=1")
    if no_approach and cfg.w_effort > 0:
        diag = "no_movement" if report.no_movement else "min_distance"
        rec("G5", "G5a", diag, LOWER, "effort", "/2", alternative="raise-weight distance (x2)")
    if report.trembling and cfg.w_effort > 0:
        rec("G5", "G5b", "trembling", RAISE, "effort", "x2")
    if not recs:
        rec("none", "none", "all-clear", NO_CHANGE, "none", "")
    return Advice(recs)


def convergence_slow(curve, fraction=0.8) -> bool:
    """True when the curve has not covered ``fraction`` of its total progress
    by the end of its first half."""
    c = [float(x) for x in curve]
    if len(c) < 2:
        return False
    start, final = c[0], c[-1]
    span = final - start
    if span <= 0:
        return False
    half = c[: (len(c) + 1) // 2]
    return max(half) - start < fraction * span
