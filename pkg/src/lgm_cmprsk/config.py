"""TOML run configuration: simulator, data paths, model, fit options, outputs.

Relative paths are resolved against the directory holding the config
file. Unknown keys are rejected so that typos do not silently fall
back to defaults.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import models
from .errors import ConfigError, LgmError
from .gmrf import PriorSpec
from .inference import FitOptions
from .simulate import SimConfig
from .stacker import Attachment, BlockSpec, CopyLink, EffectDecl, ModelSpec

GENERATORS = ("example5", "example1")
PRESETS = {
    "count_competing_risks": models.count_competing_risks_model,
    "intercept_slope": models.intercept_slope_model,
    "copied_predictor": models.copied_predictor_model,
}


@dataclass(frozen=True)
class DataConfig:
    longitudinal: Path
    survival: Path
    family: str = "gaussian"
    n_causes: int = 1
    on_late_observation: str = "error"


@dataclass(frozen=True)
class OutputConfig:
    dir: Path | None = None
    time_points: int = 101
    group_by: str | None = None
    report: str = "text"  # text | json (what `check` prints)


@dataclass(frozen=True)
class CheckConfig:
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    n_individuals: int = 1000
    determinism_individuals: int = 200
    tolerance_scale: float = 1.0
    criteria: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)


@dataclass(frozen=True)
class RunConfig:
    path: Path | None = None
    generator: str = "example5"
    simulate: SimConfig | None = None
    data: DataConfig | None = None
    model: ModelSpec | None = None
    options: FitOptions = field(default_factory=FitOptions)
    output: OutputConfig = field(default_factory=OutputConfig)
    check: CheckConfig = field(default_factory=CheckConfig)


def _check_keys(table, allowed, where):
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(sorted(extra))}")


def _tuple(v, where, typ=float):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{where} must be a list")
    try:
        return tuple(typ(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} has a non-{typ.__name__} entry") from None


def parse_prior(obj, where) -> PriorSpec:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"{where}: prior must be a table with a 'kind'")
    params = {k: float(v) for k, v in obj.items() if k != "kind"}
    try:
        return PriorSpec(obj["kind"], params)
    except LgmError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _sim_config(t) -> tuple[str, SimConfig]:
    names = {f.name for f in fields(SimConfig)}
    _check_keys(t, names | {"generator"}, "simulate")
    gen = t.get("generator", "example5")
    if gen not in GENERATORS:
        raise ConfigError(f"[simulate] generator must be one of {GENERATORS}")
    kw = {}
    for k, v in t.items():
        if k == "generator":
            continue
        if k in ("n_obs_range", "age_range"):
            kw[k] = _tuple(v, f"simulate.{k}", int)
        elif k in ("gamma", "beta", "kappa", "shapes", "cause_intercepts"):
            kw[k] = _tuple(v, f"simulate.{k}")
        elif k in ("n_individuals", "seed"):
            kw[k] = int(v)
        elif k == "legacy_appendix":
            kw[k] = bool(v)
        else:
            kw[k] = float(v)
    try:
        return gen, SimConfig(**kw)
    except TypeError as exc:
        raise ConfigError(f"[simulate] {exc}") from None


def _data_config(t, base) -> DataConfig:
    _check_keys(t, {f.name for f in fields(DataConfig)}, "data")
    for k in ("longitudinal", "survival"):
        if k not in t:
            raise ConfigError(f"[data] missing '{k}' path")
    return DataConfig(
        longitudinal=(base / t["longitudinal"]),
        survival=(base / t["survival"]),
        family=t.get("family", "gaussian"),
        n_causes=int(t.get("n_causes", 1)),
        on_late_observation=t.get("on_late_observation", "error"),
    )


def _attachment(a, where):
    if isinstance(a, str):
        return Attachment(a)
    _check_keys(a, {"effect", "index", "weight", "groups"}, where)
    return Attachment(a["effect"], a.get("index", "id"), a.get("weight"),
                      int(a["groups"]) if "groups" in a else None)


def _block(b, where):
    _check_keys(b, {"family", "fixed", "effects", "name", "prior", "initial"}, where)
    if "family" not in b:
        raise ConfigError(f"{where}: missing family")
    return BlockSpec(
        family=b["family"],
        fixed=tuple(b.get("fixed", ["intercept"])),
        effects=tuple(_attachment(a, where) for a in b.get("effects", [])),
        name=b.get("name"),
        prior=parse_prior(b["prior"], f"{where}.prior") if "prior" in b else None,
        initial=float(b["initial"]) if "initial" in b else None,
    )


def _effect(name, e):
    where = f"model.effects.{name}"
    _check_keys(e, {"kind", "size", "priors", "scale_model", "constraint", "initial"}, where)
    priors = {k: parse_prior(v, f"{where}.priors.{k}") for k, v in e.get("priors", {}).items()}
    return EffectDecl(e.get("kind", "iid"), int(e["size"]) if "size" in e else None, priors,
                      bool(e.get("scale_model", True)), e.get("constraint"),
                      {k: float(v) for k, v in e.get("initial", {}).items()})


def _copy(c, i):
    where = f"model.copy[{i}]"
    _check_keys(c, {"source", "target", "scaling", "value", "index", "weight", "prior",
                    "slope_prior", "initial"}, where)
    for k in ("source", "target"):
        if k not in c:
            raise ConfigError(f"{where}: missing '{k}'")
    return CopyLink(
        c["source"], c["target"], c.get("scaling", "estimated"), float(c.get("value", 1.0)),
        c.get("index", "id"), c.get("weight"),
        parse_prior(c["prior"], f"{where}.prior") if "prior" in c else None,
        parse_prior(c["slope_prior"], f"{where}.slope_prior") if "slope_prior" in c else None,
        float(c.get("initial", 0.0)),
    )


def parse_model(t) -> ModelSpec:
    """Model table: either ``preset = "..."`` (+ ``[model.args]``) or explicit blocks."""
    if "preset" in t:
        _check_keys(t, {"preset", "args"}, "model")
        fn = PRESETS.get(t["preset"])
        if fn is None:
            raise ConfigError(f"unknown model preset {t['preset']!r}; choose from {sorted(PRESETS)}")
        args = dict(t.get("args", {}))
        if "covariates" in args:
            args["covariates"] = tuple(args["covariates"])
        try:
            return fn(**args)
        except TypeError as exc:
            raise ConfigError(f"[model.args] {exc}") from None
    _check_keys(t, {"longitudinal", "cause", "effects", "copy", "fixed_effect_prior_precision"}, "model")
    longs = tuple(_block(b, f"model.longitudinal[{i}]") for i, b in enumerate(t.get("longitudinal", [])))
    causes = tuple(_block(b, f"model.cause[{i}]") for i, b in enumerate(t.get("cause", [])))
    if not longs:
        raise ConfigError("[model] needs at least one [[model.longitudinal]] block")
    effects = {n: _effect(n, e) for n, e in t.get("effects", {}).items()}
    copies = tuple(_copy(c, i) for i, c in enumerate(t.get("copy", [])))
    return ModelSpec(longs, causes, effects, copies, float(t.get("fixed_effect_prior_precision", 0.001)))


def _options(t) -> FitOptions:
    names = {f.name for f in fields(FitOptions)}
    _check_keys(t, names, "options")
    kw = {k: (int(v) if k in ("max_newton", "max_evals", "max_axis_steps", "threads") else float(v))
          for k, v in t.items()}
    return FitOptions(**kw)


def _output(t, base) -> OutputConfig:
    _check_keys(t, {f.name for f in fields(OutputConfig)}, "output")
    report = t.get("report", "text")
    if report not in ("text", "json"):
        raise ConfigError("[output] report must be 'text' or 'json'")
    return OutputConfig(base / t["dir"] if "dir" in t else None, int(t.get("time_points", 101)),
                        t.get("group_by"), report)


def _check(t) -> CheckConfig:
    _check_keys(t, {f.name for f in fields(CheckConfig)}, "check")
    d = CheckConfig()
    return CheckConfig(
        seeds=_tuple(t["seeds"], "check.seeds", int) if "seeds" in t else d.seeds,
        n_individuals=int(t.get("n_individuals", d.n_individuals)),
        determinism_individuals=int(t.get("determinism_individuals", d.determinism_individuals)),
        tolerance_scale=float(t.get("tolerance_scale", d.tolerance_scale)),
        criteria=_tuple(t["criteria"], "check.criteria", int) if "criteria" in t else d.criteria,
    )


def parse_config(doc: dict, base: Path | None = None, path: Path | None = None) -> RunConfig:
    base = base or Path(".")
    _check_keys(doc, {"simulate", "data", "model", "options", "output", "check"}, "top level")
    gen, sim = ("example5", None)
    if "simulate" in doc:
        gen, sim = _sim_config(doc["simulate"])
    return RunConfig(
        path=path,
        generator=gen,
        simulate=sim,
        data=_data_config(doc["data"], base) if "data" in doc else None,
        model=parse_model(doc["model"]) if "model" in doc else None,
        options=_options(doc.get("options", {})),
        output=_output(doc.get("output", {}), base),
        check=_check(doc.get("check", {})),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, path.parent, path)
