"""Grid sweeps over reward configurations: planning, checkpointed execution, tables."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace

import numpy as np

from .advisor import convergence_slow
from .arm import ArmParams
from .metrics import DEFAULT_EVAL_SEEDS, FlagThresholds, MetricsReport, evaluate, sem
from .reward import DistanceKind, EffortModel, RewardConfig
from .tasks import TaskConfig
from .train import TrainConfig, train

AXIS_ORDER = ("w_bonus", "w_distance", "w_effort", "distance_kind", "effort_model")
CHECKPOINT_VERSION = 1
SUMMARY_METRICS = (
    "success_rate", "mean_completion_time", "avg_target_distance",
    "time_inside_target", "character_error_rate", "final_return",
)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _axis_value(name, v):
    if name == "distance_kind":
        return DistanceKind(v).value
    if name == "effort_model":
        return EffortModel.parse(v).to_dict()
    v = float(v)
    if not math.isfinite(v) or v < 0:
        raise ValueError(f"axis {name}: weights must be finite and >= 0, got {v}")
    return v


@dataclass(frozen=True)
class Cell:
    cell_id: str
    index: int
    coords: tuple  # ((axis, value), ...) in AXIS_ORDER

    def coords_dict(self):
        return dict(self.coords)

    def label(self):
        parts = []
        for k, v in self.coords:
            parts.append(f"{k}={v['kind'] if isinstance(v, dict) else v}")
        return " ".join(parts)


@dataclass
class SweepPlan:
    task_cfg: TaskConfig
    reward_cfg: RewardConfig
    axes: dict
    repetitions: int = 1
    seed: int = 0
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    eval_seeds: tuple = DEFAULT_EVAL_SEEDS
    thresholds: FlagThresholds = field(default_factory=FlagThresholds)
    arm_params: ArmParams = field(default_factory=ArmParams)

    def __post_init__(self):
        if not self.axes:
            raise ValueError("a sweep needs at least one axis")
        clean = {}
        for name in AXIS_ORDER:
            if name not in self.axes:
                continue
            values = self.axes[name]
            if not isinstance(values, (list, tuple)) or len(values) == 0:
                raise ValueError(f"axis {name} is empty")
            clean[name] = [_axis_value(name, v) for v in values]
        unknown = set(self.axes) - set(AXIS_ORDER)
        if unknown:
            raise ValueError(f"unknown sweep axis: {', '.join(sorted(unknown))}")
        self.axes = clean
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        self.eval_seeds = tuple(int(s) for s in self.eval_seeds)

    def cells(self):
        names = list(self.axes)
        out = []
        for i, combo in enumerate(itertools.product(*(self.axes[n] for n in names))):
            out.append(Cell(f"c{i:04d}", i, tuple(zip(names, combo))))
        return out

    @property
    def n_runs(self):
        return len(self.cells()) * self.repetitions

    def reward_for(self, cell: Cell) -> RewardConfig:
        kw = {}
        for k, v in cell.coords:
            kw[k] = EffortModel.parse(v) if k == "effort_model" else v
        return replace(self.reward_cfg, **kw)

    def to_dict(self):
        return {
            "task": self.task_cfg.to_dict(),
            "reward": self.reward_cfg.to_dict(),
            "axes": self.axes,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "train": self.train_cfg.to_dict(),
            "eval_seeds": list(self.eval_seeds),
            "thresholds": self.thresholds.to_dict(),
            "arm": self.arm_params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            task_cfg=TaskConfig.from_dict(d["task"]),
            reward_cfg=RewardConfig.from_dict(d["reward"]),
            axes=d["axes"],
            repetitions=d.get("repetitions", 1),
            seed=d.get("seed", 0),
            train_cfg=TrainConfig.from_dict(d.get("train", {})),
            eval_seeds=tuple(d.get("eval_seeds", DEFAULT_EVAL_SEEDS)),
            thresholds=FlagThresholds(**d.get("thresholds", {})),
            arm_params=ArmParams.from_dict(d.get("arm", {})),
        )

    def hash(self):
        return config_hash(self.to_dict())


def plan_grid(spec) -> SweepPlan:
    """Build a plan from a dict (parsed plan file) or return a plan unchanged."""
    if isinstance(spec, SweepPlan):
        return spec
    return SweepPlan.from_dict(spec)


def run_seed(plan_seed, cell_id, rep) -> int:
    h = hashlib.sha256(f"{plan_seed}:{cell_id}:{rep}".encode()).digest()
    return int.from_bytes(h[:4], "big") & 0x7FFFFFFF


@dataclass
class RunResult:
    run_id: str
    cell_id: str
    coords: dict
    repetition: int
    seed: int
    status: str  # "ok" | "failed"
    report: dict | None = None
    curve: dict | None = None
    failure_reason: str = ""
    wall_time: float = 0.0  # informational only, never written to result files

    def to_dict(self):
        return {
            "run_id": self.run_id,
            "cell_id": self.cell_id,
            "coords": self.coords,
            "repetition": self.repetition,
            "seed": self.seed,
            "status": self.status,
            "report": self.report,
            "curve": self.curve,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _curve_summary(curve):
    c = np.asarray(curve, dtype=float)
    if c.size == 0:
        return {"iterations": 0, "initial": None, "final": None, "best": None, "convergence_slow": False}
    fin = np.isfinite(c)
    return {
        "iterations": int(c.size),
        "initial": float(c[0]) if fin[0] else None,
        "final": float(c[-1]) if fin[-1] else None,
        "best": float(c[fin].max()) if fin.any() else None,
        "convergence_slow": bool(convergence_slow(c[fin])) if fin.any() else False,
    }


def _execute_one(plan_doc, cell_index, rep):
    plan = SweepPlan.from_dict(plan_doc)
    cell = plan.cells()[cell_index]
    seed = run_seed(plan.seed, cell.cell_id, rep)
    run_id = f"{cell.cell_id}-r{rep}"
    t0 = time.perf_counter()
    base = RunResult(run_id, cell.cell_id, cell.coords_dict(), rep, seed, "ok")
    try:
        rc = plan.reward_for(cell)
        tc = replace(plan.train_cfg, seed=seed)
        res = train(plan.task_cfg, rc, tc, plan.arm_params)
        report = evaluate(res.policy, plan.task_cfg, rc, plan.eval_seeds, plan.arm_params, plan.thresholds,
                          config_hash=plan.hash())
        base.report = report.to_dict()
        base.curve = _curve_summary(res.curve)
        if not report.valid:
            base.status, base.failure_reason = "failed", report.invalid_reason
    except Exception as exc:  # a failed cell is recorded, never dropped
        base.status = "failed"
        base.failure_reason = f"{type(exc).__name__}: {exc}"
    base.wall_time = time.perf_counter() - t0
    return base


def _write_atomic(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _checkpoint_doc(plan, done):
    return {
        "version": CHECKPOINT_VERSION,
        "plan_hash": plan.hash(),
        "results": [done[k].to_dict() for k in sorted(done)],
    }


def load_checkpoint(path, plan):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    if doc.get("plan_hash") != plan.hash():
        raise ValueError("checkpoint belongs to a different sweep plan")
    return {r["run_id"]: RunResult.from_dict(r) for r in doc["results"]}


class SweepInterrupted(RuntimeError):
    pass


def execute(plan: SweepPlan, parallelism=1, checkpoint=None, resume=False, max_runs=None, on_result=None):
    """Train and evaluate every (cell, repetition); results sorted by run id.

    With ``checkpoint`` set, finished runs are persisted after each
    completion and ``resume`` skips them. ``max_runs`` stops after that many
    new runs (raising SweepInterrupted), which is how interrupts are tested.
    """
    done = {}
    if checkpoint and resume and os.path.exists(checkpoint):
        done = load_checkpoint(checkpoint, plan)
    todo = [(c.index, rep, f"{c.cell_id}-r{rep}") for c in plan.cells() for rep in range(plan.repetitions)]
    todo = [t for t in todo if t[2] not in done]
    limit = len(todo) if max_runs is None else min(max_runs, len(todo))
    interrupted = limit < len(todo)
    todo = todo[:limit]
    doc = plan.to_dict()

    def record(r):
        done[r.run_id] = r
        if checkpoint:
            _write_atomic(checkpoint, json.dumps(_checkpoint_doc(plan, done), sort_keys=True, indent=1))
        if on_result:
            on_result(r)

    if parallelism <= 1 or len(todo) <= 1:
        for ci, rep, _ in todo:
            record(_execute_one(doc, ci, rep))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futs = [pool.submit(_execute_one, doc, ci, rep) for ci, rep, _ in todo]
            for f in as_completed(futs):
                record(f.result())
    if interrupted:
        raise SweepInterrupted(f"stopped after {limit} new runs; {len(done)} of {plan.n_runs} finished")
    return [done[k] for k in sorted(done)]


def _metric(r: RunResult, name):
    if name == "final_return":
        v = (r.curve or {}).get("final")
    else:
        v = (r.report or {}).get(name)
    return math.nan if v is None else float(v)


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(round(v, 10))
    return v


def _coord_columns(results):
    names = []
    for r in results:
        for k in r.coords:
            if k not in names:
                names.append(k)
    return [n for n in AXIS_ORDER if n in names]


def _coord_cell(v):
    return v["kind"] + ":" + ",".join(repr(c) for c in v["coeffs"]) if isinstance(v, dict) else _fmt(v)


SWEEP_COLUMNS_TAIL = ["n_runs", "n_ok", "n_failed"] + [
    x for m in SUMMARY_METRICS for x in (f"{m}_mean", f"{m}_sem")
] + ["failure_reason"]


def report_table(results):
    """Per-cell means and SEM across repetitions.

    Returns (wide CSV text, long-format CSV text, list of per-cell summary dicts).
    Columns: cell_id, one per swept axis, then SWEEP_COLUMNS_TAIL.
    """
    results = list(results)
    if not results:
        raise ValueError("no results to tabulate")
    axes = _coord_columns(results)
    by_cell = {}
    for r in sorted(results, key=lambda r: r.run_id):
        by_cell.setdefault(r.cell_id, []).append(r)
    rows = []
    for cid in sorted(by_cell):
        runs = by_cell[cid]
        ok = [r for r in runs if r.status == "ok"]
        row = {"cell_id": cid}
        for a in axes:
            row[a] = runs[0].coords.get(a)
        row.update(n_runs=len(runs), n_ok=len(ok), n_failed=len(runs) - len(ok))
        for m in SUMMARY_METRICS:
            vals = [v for v in (_metric(r, m) for r in ok) if not math.isnan(v)]
            row[f"{m}_mean"] = float(np.mean(vals)) if vals else math.nan
            row[f"{m}_sem"] = sem(vals)
        row["failure_reason"] = "; ".join(f"{r.run_id}: {r.failure_reason}" for r in runs if r.status != "ok")
        rows.append(row)

    wide = io.StringIO()
    w = csv.writer(wide, lineterminator="\n")
    header = ["cell_id", *axes, *SWEEP_COLUMNS_TAIL]
    w.writerow(header)
    for row in rows:
        w.writerow([_coord_cell(row[h]) if h in axes else _fmt(row[h]) for h in header])

    long = io.StringIO()
    w = csv.writer(long, lineterminator="\n")
    w.writerow(["run_id", "cell_id", *axes, "repetition", "status", "metric", "value"])
    for r in sorted(results, key=lambda r: r.run_id):
        for m in SUMMARY_METRICS:
            w.writerow([r.run_id, r.cell_id, *(_coord_cell(r.coords.get(a)) for a in axes), r.repetition,
                        r.status, m, _fmt(_metric(r, m))])
    return wide.getvalue(), long.getvalue(), rows


def results_json(results) -> str:
    return json.dumps([r.to_dict() for r in sorted(results, key=lambda r: r.run_id)], sort_keys=True, indent=1) + "\n"


def report_of(result: RunResult) -> MetricsReport | None:
    return MetricsReport.from_dict(result.report) if result.report else None
