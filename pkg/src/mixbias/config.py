"""Experiment configs: JSON, validated against ``schemas/config.schema.json``.

``load_config`` returns the resolved config (defaults filled in, CLI
overrides applied) and ``build`` turns it into model objects.  A run
manifest is accepted wherever a config is: its ``resolved_config`` is
used as-is.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from mixbias.consistency import ExperimentConfig
from mixbias.estimating import SolverOptions
from mixbias.expectation import QuadratureSpec
from mixbias.families import BasicFamily, DomainError, get_family
from mixbias.mixture import MixedModel, MixingMatrix

SCHEMA_VERSION = 1

DEFAULTS = {
    "mixing": "identity",
    "mixture_tol": 1e-9,
    "seed": 0,
    "tol_abs": 1e-10,
    "tol_rel": 1e-10,
    "max_subdivisions": 2000,
    "truncation_mass": 1e-14,
    "root_tol": 1e-10,
    "max_iter": 100,
    "scan_points": 400,
}
FAMILY_PARAM_DEFAULTS = {
    "gaussian_fixed_var": {"variance": 1.0},
    "gaussian_mean_var": {},
    "poisson": {},
    "exponential": {},
}


class ConfigError(ValueError):
    """Config does not parse or fails validation."""


def load_schema(name: str) -> dict:
    text = resources.files("mixbias").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


def _field(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def validate_config(raw: dict, source: str = "<config>") -> None:
    validator = jsonschema.Draft202012Validator(load_schema("config.schema.json"))
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"{source}: field '{_field(e.absolute_path)}': {e.message}")


def parse_text(text: str, source: str = "<config>") -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if isinstance(raw, dict) and "resolved_config" in raw:
        raw = raw["resolved_config"]
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return raw


def resolve(raw: dict, source: str = "<config>", overrides: dict | None = None) -> dict:
    """Validate, fill defaults and apply overrides; returns a new dict."""
    validate_config(raw, source)
    cfg = json.loads(json.dumps(raw))
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    for key, val in DEFAULTS.items():
        cfg.setdefault(key, val)
    params = dict(FAMILY_PARAM_DEFAULTS[cfg["family"]])
    params.update(cfg.get("family_params", {}))
    cfg["family_params"] = params
    fam = _family(cfg, source)
    cfg["components"] = [_component(fam, c, j, source) for j, c in enumerate(cfg["components"])]
    validate_config(cfg, source)
    return cfg


def load_config(path, overrides: dict | None = None) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return resolve(parse_text(text, str(path)), str(path), overrides)


def _family(cfg, source) -> BasicFamily:
    name = cfg["family"]
    allowed = set(FAMILY_PARAM_DEFAULTS[name])
    extra = set(cfg["family_params"]) - allowed
    if extra:
        raise ConfigError(
            f"{source}: field 'family_params': unknown parameter(s) {sorted(extra)} for {name}"
        )
    try:
        return get_family(name, **cfg["family_params"])
    except DomainError as exc:
        raise ConfigError(f"{source}: field 'family_params': {exc}") from None


def _component(fam: BasicFamily, comp, j, source) -> list:
    where = f"{source}: field 'components.{j}'"
    if isinstance(comp, dict):
        names = set(comp)
        if names != set(fam.param_names):
            raise ConfigError(f"{where}: expected parameters {list(fam.param_names)}, got {sorted(names)}")
        comp = [comp[name] for name in fam.param_names]
    try:
        return fam.check_theta(comp).tolist()
    except DomainError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class Setup:
    config: dict
    family: BasicFamily
    components: tuple
    model: MixedModel
    quadrature: QuadratureSpec
    solver: SolverOptions


def build(cfg: dict, source: str = "<config>") -> Setup:
    fam = get_family(cfg["family"], **cfg["family_params"])
    comps = tuple(np.asarray(c, dtype=float) for c in cfg["components"])
    K = len(comps)
    mixing = cfg["mixing"]
    if isinstance(mixing, list):
        rows = cfg.get("rows", len(mixing))
    else:
        rows = cfg.get("rows", K)
    assignment = cfg.get("assignment")
    try:
        mix = MixingMatrix.from_pattern(mixing, rows, K, assignment)
    except DomainError as exc:
        raise ConfigError(f"{source}: field 'mixing': {exc}") from None
    try:
        model = MixedModel(fam, comps, mix)
    except DomainError as exc:
        raise ConfigError(f"{source}: field 'components': {exc}") from None
    quad = QuadratureSpec(
        abs_tol=cfg["tol_abs"],
        rel_tol=cfg["tol_rel"],
        max_subdivisions=cfg["max_subdivisions"],
        truncation_mass=cfg["truncation_mass"],
    )
    scan = cfg.get("scan_interval")
    if scan is not None and not scan[0] < scan[1]:
        raise ConfigError(f"{source}: field 'scan_interval': lower end must be below upper end")
    solver = SolverOptions(
        root_tol=cfg["root_tol"],
        max_iter=cfg["max_iter"],
        scan_interval=tuple(scan) if scan is not None else None,
        scan_points=cfg["scan_points"],
    )
    _check_sections(cfg, fam, K, source)
    return Setup(cfg, fam, comps, model, quad, solver)


def _check_sections(cfg, fam, K, source):
    lam = cfg.get("lambda", {})
    if lam.get("component", 0) >= K:
        raise ConfigError(f"{source}: field 'lambda.component': index out of range for K={K}")
    if lam.get("coordinate", 0) >= fam.param_dim:
        raise ConfigError(f"{source}: field 'lambda.coordinate': family has {fam.param_dim} parameter(s)")
    grid = lam.get("grid")
    if grid and not grid["lower"] < grid["upper"]:
        raise ConfigError(f"{source}: field 'lambda.grid': lower must be below upper")
    if "theta_star" in lam:
        try:
            fam.check_theta(lam["theta_star"])
        except DomainError as exc:
            raise ConfigError(f"{source}: field 'lambda.theta_star': {exc}") from None
    if "theta" in cfg.get("regularity", {}):
        try:
            fam.check_theta(cfg["regularity"]["theta"])
        except DomainError as exc:
            raise ConfigError(f"{source}: field 'regularity.theta': {exc}") from None
    con = cfg.get("consistency")
    if con:
        sizes = con["sample_sizes"]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError(f"{source}: field 'consistency.sample_sizes': must be strictly increasing")
        if con.get("target_component", 0) >= K:
            raise ConfigError(f"{source}: field 'consistency.target_component': index out of range")
        if con.get("coordinate", 0) >= fam.param_dim:
            raise ConfigError(f"{source}: field 'consistency.coordinate': out of range")


def experiment_config(setup: Setup) -> ExperimentConfig:
    con = setup.config.get("consistency")
    if not con:
        raise ConfigError("config has no 'consistency' section")
    return ExperimentConfig(
        family=setup.family,
        components=setup.components,
        mixing=setup.config["mixing"],
        regime=con["regime"],
        sample_sizes=tuple(con["sample_sizes"]),
        replicates=con["replicates"],
        seed=setup.config["seed"],
        solver=setup.solver,
        epsilon=con.get("epsilon", 0.05),
        target=con.get("target_component", 0),
        coordinate=con.get("coordinate", 0),
        assignment=con.get("assignment", "target"),
        joint=con.get("joint", False),
    )


__all__ = [
    "ConfigError",
    "Setup",
    "build",
    "experiment_config",
    "load_config",
    "load_schema",
    "resolve",
]
