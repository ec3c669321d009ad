"""Run configuration: TOML in, plain dataclasses inside."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError, InvalidInputError
from .ou import ModelParams

EXPERIMENTS = ("simulate", "excursions", "tails", "instanton", "validate", "report")


@dataclass(frozen=True)
class Budgets:
    n_samples: int = 100_000
    n_paths: int = 16
    n_cycles: int = 100_000
    horizons: tuple = (50.0, 100.0, 200.0)
    thresholds: tuple = ()
    target_probability: float = 1e-3
    n_pilot: int = 100_000
    dt: float = 0.05
    excursion_dt: float = 0.01
    eps0: float = 0.0
    instanton_horizons: tuple = (5.0, 10.0, 20.0, 40.0)
    instanton_dt: float = 0.005
    workers: int = 1

    def __post_init__(self):
        for name in ("n_samples", "n_paths", "n_cycles", "n_pilot", "workers"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"budgets.{name} must be a positive integer, got {v!r}")
        for name in ("dt", "excursion_dt", "instanton_dt"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"budgets.{name} must be positive, got {v!r}")
        if not 0 < self.target_probability < 1:
            raise ConfigError("budgets.target_probability must lie in (0, 1)")
        if not (isinstance(self.eps0, (int, float)) and self.eps0 >= 0):
            raise ConfigError("budgets.eps0 must be >= 0 (0 selects the default)")
        for name in ("horizons", "instanton_horizons"):
            hs = tuple(float(h) for h in getattr(self, name))
            if not hs or any(not (math.isfinite(h) and h > 0) for h in hs):
                raise ConfigError(f"budgets.{name} must be a non-empty list of positive numbers")
            object.__setattr__(self, name, hs)
        ths = tuple(float(x) for x in self.thresholds)
        if any(not math.isfinite(x) for x in ths):
            raise ConfigError("budgets.thresholds must be finite")
        object.__setattr__(self, "thresholds", ths)


@dataclass(frozen=True)
class ValidateOptions:
    criteria: tuple = tuple(range(1, 12))
    # per-criterion overrides, e.g. {"2": {"rel_tol": 1e-8}}
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        crit = tuple(int(c) for c in self.criteria)
        if not crit or any(c < 1 or c > 11 for c in crit):
            raise ConfigError("validate.criteria must list criterion numbers 1..11")
        object.__setattr__(self, "criteria", crit)
        if not isinstance(self.tolerances, dict):
            raise ConfigError("validate.tolerances must be a table")


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    experiment: str
    seed: int = 20240607
    budgets: Budgets = field(default_factory=Budgets)
    output_dir: str = "out"
    validate: ValidateOptions = field(default_factory=ValidateOptions)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    def to_dict(self) -> dict:
        d = {
            "model": {"gamma": self.model.gamma, "p": self.model.p},
            "run": {"experiment": self.experiment, "seed": self.seed, "output_dir": self.output_dir},
            "budgets": {k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in asdict(self.budgets).items()},
            "validate": {"criteria": list(self.validate.criteria),
                         "tolerances": self.validate.tolerances},
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a table")
        unknown = set(d) - {"model", "run", "budgets", "validate"}
        if unknown:
            raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
        model = d.get("model", {})
        run = d.get("run", {})
        try:
            params = ModelParams(model.get("gamma", 1.0), model.get("p", 4.0))
        except (InvalidInputError, TypeError) as exc:
            raise ConfigError(f"model: {exc}") from None
        try:
            budgets = Budgets(**d.get("budgets", {}))
            validate = ValidateOptions(**d.get("validate", {}))
            extra = set(run) - {"experiment", "seed", "output_dir"}
            if extra:
                raise ConfigError(f"unknown keys in [run]: {sorted(extra)}")
            return cls(params, run.get("experiment", ""), run.get("seed", 20240607), budgets,
                       str(run.get("output_dir", "out")), validate)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (stable across key order)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def loads(text: str, **overrides) -> RunConfig:
    """Parse TOML; non-None ``overrides`` (experiment, seed, output_dir) replace ``[run]`` keys."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    run = data.setdefault("run", {})
    if not isinstance(run, dict):
        raise ConfigError("[run] must be a table")
    for key, value in overrides.items():
        if value is not None:
            run[key] = value
    return RunConfig.from_dict(data)


def load(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, **overrides)
