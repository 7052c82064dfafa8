"""``reward-lab`` command line: train, eval, sweep, advise, replay.

Exit codes: 0 success, 2 bad input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .advisor import advise, convergence_slow
from .config import ConfigError, RunConfig, parse_json, read_config
from .metrics import MetricsReport, evaluate, report_csv
from .policy import Policy
from .reward import RewardConfig
from .rollout import EpisodeLog, obs_dim, rollouts
from .sweep import SweepInterrupted, SweepPlan, execute, report_table, results_json
from .tasks import TaskConfig, TaskKind
from .train import train

OK, BAD_INPUT, FAILURE = 0, 2, 3
THREADS_ENV = "REWARD_LAB_THREADS"

log = logging.getLogger("reward_lab")


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _hash_comment(h):
    return f"# config_hash: {h}\n"


def _load_policy(path) -> Policy:
    try:
        return Policy.load(path)
    except FileNotFoundError:
        raise CliError(BAD_INPUT, f"{path}: policy file not found") from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(BAD_INPUT, f"{path}: not a readable policy ({exc})") from None


def _out_dir(cfg: RunConfig, override):
    return Path(override or cfg.output_dir)


def cmd_train(args) -> int:
    cfg = read_config(args.config)
    out = _out_dir(cfg, args.out)
    h = cfg.hash()

    def progress(it, value):
        if args.verbose:
            print(f"iteration {it}: held-out return {value:.4f}", file=sys.stderr)

    res = train(cfg.task, cfg.reward, cfg.train, cfg.arm, progress=progress)
    policy = res.policy
    policy.meta = {**policy.meta, "config_hash": h, "task_kind": cfg.task.kind.value}
    if not np.all(np.isfinite(policy.params)) or (res.curve.size and not np.all(np.isfinite(res.curve))):
        raise CliError(FAILURE, "training diverged: non-finite parameters or held-out returns")

    train_seeds = cfg.train.seed * 7919 + np.arange(cfg.train.rollouts_per_candidate)
    logs = rollouts(policy, cfg.task, cfg.reward, train_seeds, cfg.arm, config_hash=h)
    if any(l.aborted for l in logs):
        raise CliError(FAILURE, "trained policy blew up the arm simulation")

    _write(out / "policy.json", policy.to_json())
    curve = io.StringIO()
    curve.write(_hash_comment(h))
    w = csv.writer(curve, lineterminator="\n")
    w.writerow(["iteration", "heldout_return"])
    for i, v in enumerate(res.curve):
        w.writerow([i, repr(float(v))])
    _write(out / "learning_curve.csv", curve.getvalue())
    for l in logs:
        _write(out / "train_logs" / f"episode_{l.seed}.jsonl", l.to_jsonl())
    _write(out / "config.json", json.dumps({**cfg.to_dict(), "config_hash": h}, sort_keys=True, indent=2) + "\n")
    if res.discarded:
        print(f"warning: {len(res.discarded)} candidate evaluations discarded as non-finite", file=sys.stderr)
    print(f"policy written to {out / 'policy.json'}")
    return OK


def cmd_eval(args) -> int:
    policy = _load_policy(args.policy)
    cfg = read_config(args.config)
    if policy.obs_dim != obs_dim(cfg.task) or policy.layer_sizes[-1] != 6:
        raise CliError(BAD_INPUT, f"{args.policy}: layer sizes {list(policy.layer_sizes)} do not fit task "
                                  f"'{cfg.task.kind.value}' ({obs_dim(cfg.task)} observations, 6 muscles)")
    out = _out_dir(cfg, args.out)
    h = cfg.hash()
    report, logs = evaluate(policy, cfg.task, cfg.reward, cfg.eval_seeds, cfg.arm, cfg.thresholds,
                            config_hash=h, return_logs=True)
    _write(out / "report.json", report.to_json())
    _write(out / "report.csv", _hash_comment(h) + report_csv([report]))
    for l in logs:
        _write(out / "eval_logs" / f"episode_{l.seed}.jsonl", l.to_jsonl())
    print(json.dumps(report.to_dict(), sort_keys=True))
    if not report.valid:
        print(f"error: {report.invalid_reason}", file=sys.stderr)
        return FAILURE
    return OK


def _resolve_parallel(flag):
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise CliError(BAD_INPUT, f"{THREADS_ENV}={env!r} is not an integer") from None
        if n < 1:
            raise CliError(BAD_INPUT, f"{THREADS_ENV} must be >= 1")
        return n
    return 1


def read_plan(path) -> SweepPlan:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(BAD_INPUT, f"{path}: cannot read sweep plan ({exc.strerror})") from None
    doc = parse_json(text, str(path))
    allowed = {"version", "task", "reward", "axes", "repetitions", "seed", "train", "eval_seeds", "thresholds",
               "arm"}
    if not isinstance(doc, dict):
        raise CliError(BAD_INPUT, f"{path}: sweep plan must be a JSON object")
    extra = sorted(set(doc) - allowed)
    if extra:
        raise CliError(BAD_INPUT, f"{path}: unknown key '{extra[0]}'")
    if doc.get("version") != 1:
        raise CliError(BAD_INPUT, f"{path}: unsupported or missing plan version {doc.get('version')!r}")
    try:
        return SweepPlan.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(BAD_INPUT, f"{path}: invalid sweep plan: {exc}") from None


def cmd_sweep(args) -> int:
    plan = read_plan(args.plan)
    par = _resolve_parallel(args.parallel)
    out = Path(args.out or "sweep_out")
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.json"
    try:
        results = execute(plan, par, checkpoint=str(ckpt), resume=args.resume, max_runs=args.max_runs)
    except SweepInterrupted as exc:
        print(f"interrupted: {exc}", file=sys.stderr)
        return FAILURE
    except ValueError as exc:  # checkpoint from another plan
        raise CliError(BAD_INPUT, f"{ckpt}: {exc}") from None
    wide, long, rows = report_table(results)
    h = plan.hash()
    _write(out / "sweep.csv", _hash_comment(h) + wide)
    _write(out / "sweep_long.csv", _hash_comment(h) + long)
    _write(out / "results.json", json.dumps({"plan_hash": h, "results": json.loads(results_json(results))},
                                            sort_keys=True, indent=1) + "\n")
    failed = [r for r in results if r.status != "ok"]
    print(f"{len(results)} runs, {len(failed)} failed; table in {out / 'sweep.csv'}")
    for r in failed:
        print(f"failed {r.run_id}: {r.failure_reason}", file=sys.stderr)
    return FAILURE if failed else OK


def _advise_inputs(args):
    path = args.report
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(BAD_INPUT, f"{path}: cannot read report ({exc.strerror})") from None
    doc = parse_json(text, str(path))
    if not isinstance(doc, dict):
        raise CliError(BAD_INPUT, f"{path}: report must be a JSON object")
    try:
        if "report" in doc:  # bundle: report + reward + context
            extra = sorted(set(doc) - {"report", "reward", "context"})
            if extra:
                raise ValueError(f"unknown key '{extra[0]}'")
            report = MetricsReport.from_dict(doc["report"])
            reward = RewardConfig.from_dict(doc.get("reward", {}))
            ctx = doc.get("context", {})
        else:
            report = MetricsReport.from_dict(doc)
            reward, ctx = None, {}
        kind = TaskKind(report.task_kind)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(BAD_INPUT, f"{path}: malformed report: {exc}") from None
    thresholds = None
    if args.config:
        cfg = read_config(args.config)
        reward = reward or cfg.reward
        thresholds = cfg.thresholds
    if reward is None:
        raise CliError(BAD_INPUT, f"{path}: no reward weights; pass --config or use a bundle with 'reward'")
    terminates = ctx.get("bonus_terminates_trial", TaskConfig.default(kind).bonus_terminates_trial)
    slow = ctx.get("convergence_slow", False)
    if args.curve:
        slow = convergence_slow(_read_curve(args.curve))
    return report, reward, bool(terminates), bool(slow), thresholds


def _read_curve(path):
    try:
        rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
        return [float(r.split(",")[1]) for r in rows[1:]]
    except (OSError, IndexError, ValueError) as exc:
        raise CliError(BAD_INPUT, f"{path}: unreadable learning curve ({exc})") from None


def cmd_advise(args) -> int:
    report, reward, terminates, slow, thresholds = _advise_inputs(args)
    kw = {"thresholds": thresholds} if thresholds else {}
    advice = advise(report, reward, bonus_terminates_trial=terminates, convergence_slow=slow, **kw)
    if args.json:
        print(advice.to_json(), end="")
    else:
        for line in advice.lines():
            print(line)
    return OK


REPLAY_COLUMNS = ["step", "t", "fingertip_x", "fingertip_y", "target_x", "target_y", "distance",
                  "goal_reached", "event", "bonus_part", "distance_part", "effort_part", "total"]


def cmd_replay(args) -> int:
    path = args.log
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(BAD_INPUT, f"{path}: cannot read episode log ({exc.strerror})") from None
    try:
        ep = EpisodeLog.from_jsonl(text)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(FAILURE, f"{path}: {exc}") from None
    buf = io.StringIO()
    buf.write(_hash_comment(ep.config_hash))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLAY_COLUMNS)
    s = ep.steps
    for i in range(ep.n_steps):
        f, tgt = s["fingertip"][i], s["target"][i]
        w.writerow([i, repr(round((i + 1) * ep.control_dt, 10)), repr(float(f[0])), repr(float(f[1])),
                    repr(float(tgt[0])), repr(float(tgt[1])), repr(float(s["distance"][i])),
                    int(bool(s["goal_reached"][i])), int(s["event"][i]), repr(float(s["bonus_part"][i])),
                    repr(float(s["distance_part"][i])), repr(float(s["effort_part"][i])), repr(float(s["total"][i]))])
    total = ep.resum()
    if args.out:
        _write(Path(args.out), buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    if not math.isclose(total, ep.episode_return, rel_tol=0, abs_tol=1e-9):
        print(f"replayed return {total!r} differs from logged {ep.episode_return!r}", file=sys.stderr)
        return FAILURE
    print(f"replayed {ep.n_steps} steps, return {total!r}", file=sys.stderr)
    return OK


def build_parser():
    p = argparse.ArgumentParser(prog="reward-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one policy from a run config")
    t.add_argument("config")
    t.add_argument("--out", help="output directory (default: config output_dir)")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a policy on the config's evaluation seeds")
    e.add_argument("policy")
    e.add_argument("config")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run a grid sweep")
    s.add_argument("plan")
    s.add_argument("--parallel", type=int, default=None, help=f"worker processes (overrides {THREADS_ENV})")
    s.add_argument("--resume", action="store_true", help="skip runs already in the checkpoint")
    s.add_argument("--out")
    s.add_argument("--max-runs", type=int, default=None, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("advise", help="reward-design advice for a metrics report")
    a.add_argument("report")
    a.add_argument("--config", help="run config supplying reward weights and thresholds")
    a.add_argument("--curve", help="learning_curve.csv used to judge convergence speed")
    a.add_argument("--json", action="store_true")
    a.set_defaults(func=cmd_advise)

    r = sub.add_parser("replay", help="per-step CSV from an episode log")
    r.add_argument("log")
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "parallel", None) is not None and args.parallel < 1:
        print("error: --parallel must be >= 1", file=sys.stderr)
        return BAD_INPUT
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILURE


if __name__ == "__main__":
    sys.exit(main())
