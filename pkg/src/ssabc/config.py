"""Experiment configuration: strict parsing, defaults, cross-field checks.

Configs are flat JSON documents with a ``schema_version``.  Unknown keys
are rejected (catching typos beats silently ignoring them), and every
cross-field constraint is validated here, before any compute starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParameterError
from .models import PARAM_NAMES, HestonParams, LgParams
from .rejection import DISTANCE_KINDS

__all__ = ["AbcSettings", "GridSettings", "ExperimentConfig", "load_config", "config_to_dict"]

SCHEMA_VERSION = 1

DEFAULT_PRIORS = {
    "lg": ((0.0, -0.5, 0.1), (0.99, 0.7, 2.0)),
    "heston": ((0.5, 1e-4, 0.01), (0.999, 0.01, 0.15)),
}
DEFAULT_TRUE_PARAMS = {
    "lg": (0.7, 0.1, 1.0),
    "heston": (0.92, 0.0024, 0.062),
}
DEFAULT_METHODS = ("summ-euclid", "fp", "joint-score", "marginal-score")
TABLE1_PANELS = ("A", "B", "C", "D")


@dataclass(frozen=True)
class AbcSettings:
    R: int = 50_000
    accept_quantile: float = 0.05
    fp_split_pilot: bool = False
    sim_multiplier: int = 1

    def __post_init__(self):
        if self.R < 100:
            raise ConfigError(f"abc.R must be >= 100, got {self.R}")
        if not (0.0 < self.accept_quantile <= 1.0):
            raise ConfigError(f"abc.accept_quantile must be in (0, 1], got {self.accept_quantile}")
        if self.sim_multiplier < 1:
            raise ConfigError(f"abc.sim_multiplier must be >= 1, got {self.sim_multiplier}")


@dataclass(frozen=True)
class GridSettings:
    nuisance_points: int = 15
    reference_points: int = 100
    filter_points: int = 100
    marginal_mle_points: int = 200

    def __post_init__(self):
        for name in ("nuisance_points", "reference_points", "filter_points", "marginal_mle_points"):
            v = getattr(self, name)
            if v < 5:
                raise ConfigError(f"grids.{name} must be >= 5, got {v}")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "lg"
    true_params: tuple[float, float, float] | None = None
    T: int = 400
    sn_ratio: float | None = None
    prior_lower: tuple[float, float, float] | None = None
    prior_upper: tuple[float, float, float] | None = None
    unknown_params: tuple[str, ...] = PARAM_NAMES
    methods: tuple[str, ...] = DEFAULT_METHODS
    abc: AbcSettings = field(default_factory=AbcSettings)
    grids: GridSettings = field(default_factory=GridSettings)
    two_stage: bool | None = None
    n_runs: int = 10
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"
    table1_panels: tuple[str, ...] = ("A",)

    def __post_init__(self):
        if self.model not in ("lg", "heston"):
            raise ConfigError(f"model must be 'lg' or 'heston', got {self.model!r}")
        if self.true_params is None:
            object.__setattr__(self, "true_params", DEFAULT_TRUE_PARAMS[self.model])
        if self.prior_lower is None or self.prior_upper is None:
            lo, hi = DEFAULT_PRIORS[self.model]
            object.__setattr__(self, "prior_lower", self.prior_lower or lo)
            object.__setattr__(self, "prior_upper", self.prior_upper or hi)
        if self.model == "lg" and self.sn_ratio is None:
            object.__setattr__(self, "sn_ratio", 20.0)
        if self.model == "heston" and self.sn_ratio is not None:
            raise ConfigError("sn_ratio applies to the lg model only")
        if self.T < 2:
            raise ConfigError(f"T must be >= 2, got {self.T}")
        if self.n_runs < 1:
            raise ConfigError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

        names = tuple(self.unknown_params)
        if len(names) == 0 or len(set(names)) != len(names):
            raise ConfigError("unknown_params must be a nonempty list without duplicates")
        for n in names:
            if n not in PARAM_NAMES:
                raise ConfigError(f"unknown parameter name {n!r}; valid names: {PARAM_NAMES}")
        # canonical (rho, delta, sigma_v) order regardless of input order
        object.__setattr__(self, "unknown_params", tuple(n for n in PARAM_NAMES if n in names))

        methods = tuple(self.methods)
        if len(methods) == 0:
            raise ConfigError("methods must be a nonempty list")
        for m in methods:
            if m not in DISTANCE_KINDS:
                raise ConfigError(f"unknown method {m!r}; valid methods: {DISTANCE_KINDS}")
        object.__setattr__(self, "methods", methods)

        lo = np.asarray(self.prior_lower, dtype=float)
        hi = np.asarray(self.prior_upper, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ConfigError("prior bounds must each hold 3 values (rho, delta, sigma_v)")
        if not np.all(lo < hi):
            raise ConfigError("prior needs lower < upper in every coordinate")
        object.__setattr__(self, "prior_lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "prior_upper", tuple(float(v) for v in hi))

        if self.two_stage is None:
            object.__setattr__(self, "two_stage", self.model == "heston" and len(names) >= 2)

        panels = tuple(str(p).upper() for p in self.table1_panels)
        for p in panels:
            if p not in TABLE1_PANELS:
                raise ConfigError(f"unknown table1 panel {p!r}; valid panels: {TABLE1_PANELS}")
        object.__setattr__(self, "table1_panels", panels)

        # instantiating the parameter object runs every model-level check
        # (stationarity, positivity, Feller) before any compute begins
        try:
            self.truth()
        except ParameterError as e:
            raise ConfigError(f"true_params invalid for model {self.model!r}: {e}") from e

    def truth(self):
        """The true data-generating parameter object."""
        rho, delta, sigma_v = (float(v) for v in self.true_params)
        if self.model == "lg":
            return LgParams.from_sn_ratio(rho, delta, sigma_v, self.sn_ratio)
        return HestonParams(rho, delta, sigma_v)

    def unknown_indices(self) -> tuple[int, ...]:
        return tuple(PARAM_NAMES.index(n) for n in self.unknown_params)


_TOP_KEYS = {
    "schema_version",
    "model",
    "true_params",
    "T",
    "sn_ratio",
    "prior",
    "unknown_params",
    "methods",
    "abc",
    "grids",
    "two_stage",
    "n_runs",
    "seed",
    "threads",
    "output_dir",
    "table1",
}


def _check_keys(d: dict, allowed: set, where: str):
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}; allowed: {sorted(allowed)}")


def _build_block(cls, d: dict, where: str):
    _check_keys(d, set(cls.__dataclass_fields__), where)
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"bad {where} block: {e}") from e


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "config")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}; this build reads version {SCHEMA_VERSION}")

    kwargs = {}
    for key in ("model", "T", "sn_ratio", "two_stage", "n_runs", "seed", "threads", "output_dir"):
        if key in doc:
            kwargs[key] = doc[key]
    if "true_params" in doc:
        kwargs["true_params"] = tuple(doc["true_params"])
    if "unknown_params" in doc:
        kwargs["unknown_params"] = tuple(doc["unknown_params"])
    if "methods" in doc:
        kwargs["methods"] = tuple(doc["methods"])
    if "prior" in doc:
        block = doc["prior"]
        if not isinstance(block, dict):
            raise ConfigError("prior must be an object with lower/upper lists")
        _check_keys(block, {"lower", "upper"}, "prior")
        if "lower" in block:
            kwargs["prior_lower"] = tuple(block["lower"])
        if "upper" in block:
            kwargs["prior_upper"] = tuple(block["upper"])
    if "abc" in doc:
        kwargs["abc"] = _build_block(AbcSettings, dict(doc["abc"]), "abc")
    if "grids" in doc:
        kwargs["grids"] = _build_block(GridSettings, dict(doc["grids"]), "grids")
    if "table1" in doc:
        block = doc["table1"]
        if not isinstance(block, dict):
            raise ConfigError("table1 must be an object")
        _check_keys(block, {"panels"}, "table1")
        if "panels" in block:
            kwargs["table1_panels"] = tuple(block["panels"])
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad config: {e}") from e


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Round-trippable plain-dict form (for meta.json provenance)."""
    return {
        "schema_version": SCHEMA_VERSION,
        "model": cfg.model,
        "true_params": list(cfg.true_params),
        "T": cfg.T,
        "sn_ratio": cfg.sn_ratio,
        "prior": {"lower": list(cfg.prior_lower), "upper": list(cfg.prior_upper)},
        "unknown_params": list(cfg.unknown_params),
        "methods": list(cfg.methods),
        "abc": {
            "R": cfg.abc.R,
            "accept_quantile": cfg.abc.accept_quantile,
            "fp_split_pilot": cfg.abc.fp_split_pilot,
            "sim_multiplier": cfg.abc.sim_multiplier,
        },
        "grids": {
            "nuisance_points": cfg.grids.nuisance_points,
            "reference_points": cfg.grids.reference_points,
            "filter_points": cfg.grids.filter_points,
            "marginal_mle_points": cfg.grids.marginal_mle_points,
        },
        "two_stage": cfg.two_stage,
        "n_runs": cfg.n_runs,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "output_dir": cfg.output_dir,
        "table1": {"panels": list(cfg.table1_panels)},
    }
