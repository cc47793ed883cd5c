"""Experiment configuration: typed blocks, validation and JSON/YAML loading."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

MODELS = ("polynomial", "causal_gp")
ESTIMATORS = ("closed_full", "closed_cate", "nmc", "rb", "nmc_cate")
PRIVACY = ("none", "mpc", "dp")
MECHANISMS = ("laplace", "exponential")
CLOSED_FORMS = ("closed_full", "closed_cate")


@dataclass(frozen=True)
class SiteConfig:
    source: str = "ihdp_surrogate"
    K: int = 10
    host_size: int = 200
    size_range: tuple[int, int] = (100, 400)
    min_per_arm: int = 10
    coef_scale: float = 1.0
    max_retries: int = 50

    def __post_init__(self):
        lo, hi = self.size_range
        if self.K < 1 or self.host_size < 2 or not 1 <= lo <= hi:
            raise ConfigError("sites need K >= 1, host_size >= 2 and 1 <= size_range[0] <= size_range[1]")


@dataclass(frozen=True)
class PrivacyConfig:
    epsilon: float = 100.0
    M_clip: float = 5.0
    accounting: str = "per-release"
    mechanism: str = "laplace"

    def __post_init__(self):
        if not self.epsilon > 0 or not self.M_clip > 0:
            raise ConfigError("epsilon and M_clip must be positive")
        if self.accounting not in ("per-release", "split"):
            raise ConfigError(f"unknown accounting {self.accounting!r}")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}")


@dataclass(frozen=True)
class GpConfig:
    max_iters: int = 200
    restarts: int = 1
    lengthscale_sq: float = 4.0
    noise: float = 0.5
    X0_size: int = 100


@dataclass(frozen=True)
class NmcSettings:
    N: int = 400
    M1: int = 800


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "polynomial"
    estimator: str = "closed_cate"
    privacy: str = "none"
    seed: int = 0
    degree: int = 1
    sigma2: float = 1.0
    prior_precision: float = 1.0
    # "block" uses the c-block form, "exact" the marginal with nuisance integrated out
    cate_form: str = "block"
    holdout_size: int = 2000
    ks: tuple[int, ...] = (1, 3, 5)
    prop_score_descending: bool = True
    workers: int = 1
    sites: SiteConfig = field(default_factory=SiteConfig)
    privacy_params: PrivacyConfig = field(default_factory=PrivacyConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    nmc: NmcSettings = field(default_factory=NmcSettings)

    def __post_init__(self):
        for name, value, allowed in (
            ("model", self.model, MODELS),
            ("estimator", self.estimator, ESTIMATORS),
            ("privacy", self.privacy, PRIVACY),
            ("cate_form", self.cate_form, ("block", "exact")),
        ):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if self.model == "causal_gp" and self.estimator not in CLOSED_FORMS:
            raise ConfigError("the causal GP supports closed-form estimators only")
        if self.privacy != "none" and (self.model != "polynomial" or self.estimator not in CLOSED_FORMS):
            raise ConfigError("privacy modes require the polynomial model with a closed-form estimator")
        if self.privacy != "none" and self.cate_form != "block":
            raise ConfigError("privacy modes use the c-block statistic")
        if not (self.sigma2 > 0 and self.prior_precision > 0 and self.holdout_size > 0 and self.degree >= 1):
            raise ConfigError("sigma2, prior_precision, holdout_size and degree must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def target(self) -> str:
        return "full" if self.estimator in ("closed_full", "nmc", "rb") else "c"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return _build(cls, raw)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class IllustrativeConfig:
    ratios: tuple[float, ...] = (1.0, 1.2, 1.4, 1.5, 1.6, 1.8, 2.0, 3.0, 4.0, 8.0, 16.0, 32.0)
    seeds: int = 50
    seed: int = 0
    n_host: int = 100
    n_comp: int = 100
    pool_size: int = 40_000
    holdout_size: int = 2000
    sigma2: float = 1.0
    prior_precision: float = 0.01
    # NMC columns are estimated on the first ``nmc_seeds`` seeds only
    nmc_seeds: int = 0
    nmc: NmcSettings = field(default_factory=NmcSettings)

    def __post_init__(self):
        if not self.ratios or min(self.ratios) <= 0:
            raise ConfigError("ratios must be positive")
        if self.seeds < 1 or self.n_host < 1 or self.n_comp < 1:
            raise ConfigError("seeds, n_host and n_comp must be positive")
        if max(self.ratios) * self.n_comp > self.pool_size / 4:
            raise ConfigError("pool_size too small for the largest twin")
        if not 0 <= self.nmc_seeds <= self.seeds:
            raise ConfigError("nmc_seeds must lie in 0..seeds")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "IllustrativeConfig":
        return _build(cls, raw)


def _build(cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"{cls.__name__} expects a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        default = known[name].default_factory() if known[name].default_factory is not dataclasses.MISSING else known[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value)
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> dict:
    """Read a JSON or YAML mapping; sections are ``experiment`` and ``illustrative``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return raw
