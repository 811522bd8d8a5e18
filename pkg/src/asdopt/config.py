"""Scenario configuration, built-in effect sets and config-file parsing.

Config files are YAML (JSON is accepted as a subset). Top-level keys other
than ``scenarios`` act as defaults for every scenario entry. An entry whose
``effect_set`` or ``n_total`` is a list expands to the cartesian product.
"""

from __future__ import annotations

import dataclasses
import itertools
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .trial_sim import INTERSECTION_TESTS, EffectSet, SimConstants, SimulationInputError

EFFECT_SETS = {
    "paper": EffectSet("paper", (0, 0.68, 0.82, 0.95, 0.91), (0, 0.13, 0.17, 0.23, 0.20)),
    "linear": EffectSet("linear", (0, 0.2, 0.4, 0.6, 0.8), (0, 0.05, 0.10, 0.15, 0.20)),
    "sigmoid": EffectSet("sigmoid", (0, 0.1, 0.2, 0.7, 0.8), (0, 0.025, 0.05, 0.175, 0.20)),
    "paper2": EffectSet("paper2", (0, 0.68, 0.82, 0.95, 0.91), (0, 0.26, 0.34, 0.46, 0.40)),
}

METHODS = ("BO", "BOGrid", "Grid", "GridSmall")
WORKERS_ENV = "ASDOPT_WORKERS"


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    effect_set: EffectSet
    n_total: int
    sim: SimConstants = SimConstants()
    methods: tuple = METHODS
    n_init: int = 16
    n_iter: int = 100
    grid_l: int = 25
    grid_small_l: int = 7
    grid_reps: int = 20
    grid_runs: int = 1
    snap_l: int = 25
    replications: int = 20
    validation_reps: int = 20
    master_seed: int = 1
    intersection_test: str = "simes"
    calibration_candidates: int = 40
    calibration_reps: int = 1000
    gp_restarts: int = 5
    output_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.intersection_test not in INTERSECTION_TESTS:
            raise ConfigError(f"intersection_test must be one of {INTERSECTION_TESTS}")
        for key in ("n_total", "replications", "validation_reps", "grid_runs", "n_init"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.n_iter < 0:
            raise ConfigError(f"n_iter must be >= 0, got {self.n_iter}")
        if min(self.grid_l, self.grid_small_l, self.snap_l) < 2:
            raise ConfigError("grid resolutions must be >= 2")
        if self.grid_reps < 2:
            raise ConfigError("grid_reps must be >= 2 for leave-one-out validation")
        self.sim.check_arms(self.effect_set.n_treatments)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["effect_set"] = self.effect_set.to_dict()
        d["sim"] = self.sim.to_dict()
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["effect_set"] = resolve_effect_set(d["effect_set"])
        d["sim"] = SimConstants(**d.get("sim", {}))
        return cls(**d)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "nsim" in kw:
            kw["sim"] = dataclasses.replace(self.sim, nsim=kw.pop("nsim"))
        return dataclasses.replace(self, **kw)


def resolve_effect_set(spec) -> EffectSet:
    if isinstance(spec, EffectSet):
        return spec
    if isinstance(spec, str):
        if spec not in EFFECT_SETS:
            raise ConfigError(f"unknown effect set {spec!r}; built-ins: {sorted(EFFECT_SETS)}")
        return EFFECT_SETS[spec]
    if isinstance(spec, dict):
        return EffectSet(spec.get("name", "inline"), tuple(spec["early"]), tuple(spec["final"]))
    raise ConfigError(f"effect_set must be a name or a mapping, got {spec!r}")


def default_workers() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


# --- file loading ---------------------------------------------------------

_FIELDS = {f.name for f in dataclasses.fields(ScenarioConfig)}


def _line_map(node, prefix=()):
    """Map key paths to 1-based source lines in a composed YAML tree."""
    out = {prefix: node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[prefix + (k.value,)] = k.start_mark.line + 1
            out.update(_line_map(v, prefix + (k.value,)))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out.update(_line_map(v, prefix + (i,)))
    return out


def _scenario_name(entry) -> str:
    es = entry["effect_set"]
    es_name = es if isinstance(es, str) else es.get("name", "inline")
    return f"{es_name}-{entry['n_total']}"


def parse_config(text: str) -> list:
    """Parse config text into resolved scenarios; errors carry source lines."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(str(exc).splitlines()[0], mark.line + 1 if mark else None) from exc
    if data is None:
        return []
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping", 1)
    lines = _line_map(root) if root is not None else {}

    defaults = {k: v for k, v in data.items() if k != "scenarios"}
    for key in defaults:
        if key not in _FIELDS - {"name"}:
            raise ConfigError(f"unknown key {key!r}", lines.get((key,)))
    entries = data.get("scenarios") or []
    if not isinstance(entries, list):
        raise ConfigError("'scenarios' must be a list", lines.get(("scenarios",)))

    scenarios = []
    for i, entry in enumerate(entries):
        where = ("scenarios", i)
        if not isinstance(entry, dict):
            raise ConfigError("scenario entry must be a mapping", lines.get(where))
        for key in entry:
            if key not in _FIELDS:
                raise ConfigError(f"unknown key {key!r}", lines.get(where + (key,)))
        merged = {**defaults, **entry}
        if "effect_set" not in merged or "n_total" not in merged:
            raise ConfigError("scenario needs effect_set and n_total", lines.get(where))
        sets = merged["effect_set"] if isinstance(merged["effect_set"], list) else [merged["effect_set"]]
        totals = merged["n_total"] if isinstance(merged["n_total"], list) else [merged["n_total"]]
        for es, nt in itertools.product(sets, totals):
            item = {**merged, "effect_set": es, "n_total": nt}
            item.setdefault("name", _scenario_name(item))
            if len(sets) * len(totals) > 1 and "name" in entry:
                item["name"] = f"{entry['name']}-{_scenario_name(item)}"
            try:
                scenarios.append(ScenarioConfig.from_dict(item))
            except ConfigError as exc:
                raise ConfigError(str(exc), exc.line or lines.get(where)) from exc
            except (SimulationInputError, TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"scenario {item['name']!r}: {exc}", lines.get(where)) from exc
    names = [s.name for s in scenarios]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ConfigError(f"duplicate scenario names {dupes}")
    return scenarios


def load_config(path) -> list:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_scenarios(scenarios) -> str:
    """Serialize resolved scenarios; ``parse_config`` reads the result back."""
    return yaml.safe_dump({"scenarios": [s.to_dict() for s in scenarios]}, sort_keys=False)
