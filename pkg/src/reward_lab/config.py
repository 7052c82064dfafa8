"""Run configuration documents (JSON) with strict, line-aware validation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields

from .arm import ArmParams
from .metrics import DEFAULT_EVAL_SEEDS, FlagThresholds
from .reward import RewardConfig
from .sweep import canonical_json, config_hash
from .tasks import Annulus, TaskConfig
from .train import TrainConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    arm: ArmParams = field(default_factory=ArmParams)
    task: TaskConfig = field(default_factory=lambda: TaskConfig.default("pointing"))
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_seeds: tuple = DEFAULT_EVAL_SEEDS
    thresholds: FlagThresholds = field(default_factory=FlagThresholds)
    output_dir: str = "out"

    def to_dict(self):
        return {
            "version": CONFIG_VERSION,
            "arm": self.arm.to_dict(),
            "task": self.task.to_dict(),
            "reward": self.reward.to_dict(),
            "train": self.train.to_dict(),
            "eval_seeds": list(self.eval_seeds),
            "thresholds": self.thresholds.to_dict(),
            "output_dir": self.output_dir,
        }

    def hash(self) -> str:
        # the output location does not change what a run computes
        d = self.to_dict()
        d.pop("output_dir")
        return config_hash(d)


class _Locator:
    """Maps a key path in a JSON document back to a source line."""

    def __init__(self, text, source):
        self.text = text
        self.source = source

    def line_of(self, path):
        pos = 0
        for key in path:
            m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(self.text, pos)
            if not m:
                break
            pos = m.start()
        return self.text.count("\n", 0, pos) + 1

    def error(self, path, msg):
        where = ".".join(str(p) for p in path) or "<root>"
        return ConfigError(f"{self.source}:{self.line_of(path)}: {where}: {msg}")


def parse_json(text, source="<config>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None


_SECTIONS = {
    "arm": ArmParams,
    "task": TaskConfig,
    "reward": RewardConfig,
    "train": TrainConfig,
    "thresholds": FlagThresholds,
}
_TOP_KEYS = {"version", "eval_seeds", "output_dir", *_SECTIONS}


def _check_keys(loc, path, doc, allowed):
    if not isinstance(doc, dict):
        raise loc.error(path, "expected an object")
    for k in doc:
        if k not in allowed:
            raise loc.error((*path, k), f"unknown key '{k}'")


def _build(loc, name, cls, doc):
    allowed = {f.name for f in fields(cls)}
    _check_keys(loc, (name,), doc, allowed)
    if name == "task":
        if "kind" not in doc:
            raise loc.error((name,), "missing required key 'kind'")
        if isinstance(doc.get("workspace"), dict):
            _check_keys(loc, (name, "workspace"), doc["workspace"], {f.name for f in fields(Annulus)})
    try:
        if name == "task":
            return TaskConfig.from_dict(doc)
        if hasattr(cls, "from_dict"):
            return cls.from_dict(doc)
        return cls(**doc)
    except (TypeError, ValueError, KeyError) as exc:
        msg = str(exc)
        culprit = next((k for k in sorted(doc, key=len, reverse=True) if k in msg), None)
        raise loc.error((name, culprit) if culprit else (name,), msg) from None


def load_config(text, source="<config>") -> RunConfig:
    doc = parse_json(text, source)
    loc = _Locator(text, source)
    _check_keys(loc, (), doc, _TOP_KEYS)
    if "version" not in doc:
        raise loc.error((), "missing 'version'")
    if doc["version"] != CONFIG_VERSION:
        raise loc.error(("version",), f"unsupported config version {doc['version']!r}, expected {CONFIG_VERSION}")
    if "task" not in doc:
        raise loc.error((), "missing required section 'task'")
    parts = {}
    for name, cls in _SECTIONS.items():
        if name in doc:
            parts[name] = _build(loc, name, cls, doc[name])
    if "arm" in parts:
        try:
            parts["arm"].validate()
        except ValueError as exc:
            raise loc.error(("arm",), str(exc)) from None
    seeds = doc.get("eval_seeds", list(DEFAULT_EVAL_SEEDS))
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise loc.error(("eval_seeds",), "expected a non-empty list of non-negative integers")
    out = doc.get("output_dir", "out")
    if not isinstance(out, str) or not out:
        raise loc.error(("output_dir",), "expected a non-empty string")
    cfg = RunConfig(eval_seeds=tuple(seeds), output_dir=out, **parts)
    arm_dt = cfg.arm.control_dt
    if abs(cfg.task.dt - arm_dt) > 1e-12:
        raise loc.error(("task", "dt") if "dt" in doc["task"] else ("task",),
                        f"task dt {cfg.task.dt} must equal arm control_dt {arm_dt}")
    return cfg


def read_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return load_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"


__all__ = ["ConfigError", "RunConfig", "load_config", "read_config", "dump_config", "canonical_json"]
