"""Scenario files: YAML mapping onto :class:`~netchange.harness.ExperimentConfig`.

A file may name a bundled preset with ``preset: table33``; its own keys then
override the preset field by field (nested mappings are merged). Validation
errors carry the file name and line of the offending key.
"""

from __future__ import annotations

from dataclasses import replace
from importlib import resources
from pathlib import Path

import yaml

from .detector import WEIGHTS
from .harness import FAMILIES, ExperimentConfig, PolicySpec
from .models import MODEL_KINDS, build_model
from .solver import GridConfig

PRESETS = ("table31", "table32", "table33", "table34")

_TOP_KEYS = {"preset", "description", "model", "N", "weights", "gamma", "epsilon_arl", "reps", "seed",
             "workers", "grid", "policies", "max_iter"}
_GRID_KEYS = {"y_points", "y_max", "y_linear", "inner", "inner_samples", "seed"}
_POLICY_KEYS = {"slope", "c_bracket", "gamma"}


class ConfigError(ValueError):
    pass


def _plain(node, path=(), lines=None):
    """Convert a composed YAML node to Python data, recording each key path's line."""
    if lines is None:
        lines = {}
    lines.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = yaml.safe_load(yaml.serialize(k))
            lines[path + (key,)] = k.start_mark.line + 1
            out[key] = _plain(v, path + (key,), lines)[0]
        return out, lines
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, path + (i,), lines)[0] for i, v in enumerate(node.value)], lines
    return yaml.safe_load(yaml.serialize(node)), lines


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")
    return resources.files("netchange.presets").joinpath(f"{name}.yaml").read_text()


def parse_text(text: str, source: str = "<string>") -> tuple[dict, dict]:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if node is None:
        return {}, {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{source}:{node.start_mark.line + 1}: scenario must be a mapping")
    return _plain(node)


def load_scenario(name_or_path, **overrides) -> ExperimentConfig:
    """Load a preset name or a YAML file and build the experiment config."""
    path = Path(name_or_path)
    if str(name_or_path) in PRESETS and not path.exists():
        source, text = f"preset {name_or_path}", preset_text(str(name_or_path))
    else:
        if not path.is_file():
            raise ConfigError(f"scenario file {name_or_path} not found (presets: {', '.join(PRESETS)})")
        source, text = str(path), path.read_text()
    data, lines = parse_text(text, source)
    if "preset" in data:
        base, _ = parse_text(preset_text(data["preset"]), f"preset {data['preset']}")
        data = _merge(base, {k: v for k, v in data.items() if k != "preset"})
    return build_config(data, lines, source, **overrides)


def build_config(data: dict, lines: dict | None = None, source: str = "<config>", **overrides) -> ExperimentConfig:
    lines = lines or {}

    def fail(path, msg):
        path = tuple(path)
        while path and path not in lines:
            path = path[:-1]
        line = lines.get(path)
        raise ConfigError(f"{source}:{line}: {msg}" if line else f"{source}: {msg}")

    def check_keys(section, allowed, path):
        if not isinstance(section, dict):
            fail(path, f"'{'.'.join(map(str, path))}' must be a mapping")
        for key in section:
            if key not in allowed:
                fail(path + (key,), f"unknown key '{key}' (allowed: {', '.join(sorted(map(str, allowed)))})")

    check_keys(data, _TOP_KEYS, ())
    if "model" not in data:
        fail((), "missing 'model' section")
    model_spec = data["model"]
    check_keys(model_spec, set(model_spec), ("model",))
    if model_spec.get("kind") not in MODEL_KINDS:
        fail(("model", "kind"), f"unknown model kind {model_spec.get('kind')!r}; expected one of {sorted(MODEL_KINDS)}")
    try:
        model = build_model(model_spec)
    except (TypeError, ValueError) as exc:
        fail(("model",), f"invalid model: {exc}")

    weights_name = data.get("weights", "cusum")
    if weights_name not in WEIGHTS:
        fail(("weights",), f"unknown weights {weights_name!r}; expected one of {sorted(WEIGHTS)}")

    grid_spec = data.get("grid", {}) or {}
    check_keys(grid_spec, _GRID_KEYS, ("grid",))
    try:
        grid = GridConfig(**grid_spec)
    except (TypeError, ValueError) as exc:
        fail(("grid",), f"invalid grid: {exc}")

    pol_spec = data.get("policies") or {f: {} for f in FAMILIES}
    check_keys(pol_spec, set(FAMILIES), ("policies",))
    policies = []
    for fam in FAMILIES:
        if fam not in pol_spec:
            continue
        entry = pol_spec[fam] or {}
        check_keys(entry, _POLICY_KEYS, ("policies", fam))
        kw = dict(entry)
        if "c_bracket" in kw:
            br = kw["c_bracket"]
            if not (isinstance(br, list) and len(br) == 2):
                fail(("policies", fam, "c_bracket"), "c_bracket must be a two-element list")
            kw["c_bracket"] = tuple(float(v) for v in br)
        try:
            policies.append(PolicySpec(fam, **kw))
        except (TypeError, ValueError) as exc:
            fail(("policies", fam), str(exc))

    reps = data.get("reps", {}) or {}
    if isinstance(reps, int):
        reps = {"calibration": reps, "final": reps}
    check_keys(reps, {"calibration", "final"}, ("reps",))

    kw = dict(
        model=model,
        N=data.get("N", 60),
        weights=WEIGHTS[weights_name],
        policies=tuple(policies),
        gamma=float(data.get("gamma", 40.0)),
        reps_calibration=int(reps.get("calibration", 10_000)),
        reps_final=int(reps.get("final", 10_000)),
        epsilon_arl=float(data.get("epsilon_arl", 0.5)),
        grid=grid,
        seed=int(data.get("seed", 0)),
        workers=data.get("workers"),
    )
    if "max_iter" in data:
        kw["max_iter"] = int(data["max_iter"])
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "reps":
            kw["reps_calibration"] = kw["reps_final"] = int(value)
        elif key in ("y_points", "inner_samples"):
            kw["grid"] = replace(kw["grid"], **{key: value})
        else:
            kw[key] = value
    try:
        return ExperimentConfig(**kw)
    except ValueError as exc:
        fail((), str(exc))
