"""Experiment configuration: a flat TOML file of key = value pairs.

Every key is optional except ``train``.  Unknown keys are rejected so typos
cannot silently fall back to defaults.  See README.md for the full schema.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import List, Optional, Union

from .data import SAMPLING_MODES, WITH_REPLACEMENT
from .errors import ConfigError
from .losses import KINDS
from .optimizers import INITS, METHODS, OUTER_ITERATES

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SYNTHETIC_PREFIX = "synthetic:"
SYNTHETIC_KINDS = ("adult",)
DIAG_POINTS = ("optimum", "zeros", "least_squares")


@dataclass
class ExperimentConfig:
    train: str
    test: Optional[str] = None
    n_features: Optional[int] = None
    n_train: Optional[int] = None
    n_test: Optional[int] = None
    data_seed: int = 0
    scale: bool = False
    loss: str = "logistic"
    lambdas: List[float] = field(default_factory=lambda: [1e-3])
    etas: List[float] = field(default_factory=lambda: [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
    rhos: List[float] = field(default_factory=lambda: [1.0, 1e-1, 1e-2, 1e-3])
    m: int = 50
    k_max: Optional[int] = None
    ell: Optional[int] = None
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    seeds: int = 1
    methods: List[str] = field(default_factory=lambda: ["nys_sgd", "nys_svrg", "sgd", "svrg"])
    init: str = "zeros"
    sampling: str = WITH_REPLACEMENT
    outer_iterate: str = "random"
    hessian_sample: Union[str, int] = "all"
    out: str = "runs"
    workers: int = 1
    m_grid: List[Union[int, str]] = field(default_factory=lambda: [5, 10, 25, 50])
    diag_lambdas: List[float] = field(default_factory=lambda: [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    diag_seeds: int = 30
    diag_point: str = "optimum"

    @property
    def synthetic(self):
        return self.train.startswith(SYNTHETIC_PREFIX)

    def hessian_sample_size(self):
        return None if self.hessian_sample == "all" else int(self.hessian_sample)

    def resolved_m_grid(self, d):
        return [d if m == "d" else int(m) for m in self.m_grid]

    def as_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        """Short digest of everything that can change the numbers."""
        payload = {k: v for k, v in self.as_dict().items() if k not in ("out", "workers")}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self):
        def positive_list(name, values, allow_zero=False):
            if not isinstance(values, list) or not values:
                raise ConfigError(f"{name} must be a nonempty list")
            for v in values:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{name} entries must be numbers, got {v!r}")
                if v < 0 or (v == 0 and not allow_zero):
                    raise ConfigError(f"{name} entries must be {'>= 0' if allow_zero else '> 0'}, got {v!r}")

        if self.synthetic:
            kind = self.train[len(SYNTHETIC_PREFIX):]
            if kind not in SYNTHETIC_KINDS:
                raise ConfigError(f"unknown synthetic dataset {kind!r}")
            if not self.n_train:
                raise ConfigError("synthetic data needs n_train")
        else:
            for path in (self.train, self.test):
                if path is not None and not os.access(path, os.R_OK):
                    raise ConfigError(f"dataset not readable: {path}")
        if self.loss not in KINDS:
            raise ConfigError(f"loss must be one of {KINDS}")
        positive_list("lambdas", self.lambdas, allow_zero=True)
        positive_list("etas", self.etas)
        positive_list("rhos", self.rhos)
        positive_list("diag_lambdas", self.diag_lambdas)
        if not isinstance(self.methods, list) or not self.methods:
            raise ConfigError("methods must be a nonempty list")
        for method in self.methods:
            if method not in METHODS:
                raise ConfigError(f"unknown method {method!r}")
        if not isinstance(self.m_grid, list) or not self.m_grid:
            raise ConfigError("m_grid must be a nonempty list")
        for m in self.m_grid:
            if m != "d" and (isinstance(m, bool) or not isinstance(m, int) or m < 1):
                raise ConfigError(f"m_grid entries must be positive integers or 'd', got {m!r}")
        for name in ("m", "batch_size", "seeds", "workers", "diag_seeds"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("epochs", "data_seed", "seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be a nonnegative integer")
        for name in ("k_max", "ell", "n_features", "n_train", "n_test"):
            v = getattr(self, name)
            if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 0):
                raise ConfigError(f"{name} must be a nonnegative integer")
        if self.ell == 0:
            raise ConfigError("ell must be >= 1")
        if self.hessian_sample != "all" and (
            isinstance(self.hessian_sample, bool) or not isinstance(self.hessian_sample, int) or self.hessian_sample < 1
        ):
            raise ConfigError("hessian_sample must be 'all' or a positive integer")
        if self.init not in INITS or self.init == "given":
            raise ConfigError(f"init must be 'zeros' or 'least_squares'")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"sampling must be one of {SAMPLING_MODES}")
        if self.outer_iterate not in OUTER_ITERATES:
            raise ConfigError(f"outer_iterate must be one of {OUTER_ITERATES}")
        if self.diag_point not in DIAG_POINTS:
            raise ConfigError(f"diag_point must be one of {DIAG_POINTS}")
        if not isinstance(self.scale, bool):
            raise ConfigError("scale must be true or false")
        return self


def config_from_dict(raw):
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"config must be flat; {key!r} is a table")
    if "train" not in raw:
        raise ConfigError("missing required key 'train'")
    return ExperimentConfig(**raw)


def load_config(path, overrides=None):
    """Read, apply CLI overrides, and validate an experiment config."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    # dataset paths are relative to the config file
    base = os.path.dirname(os.path.abspath(path))
    for key in ("train", "test"):
        value = raw.get(key)
        if isinstance(value, str) and not value.startswith(SYNTHETIC_PREFIX) and not os.path.isabs(value):
            raw[key] = os.path.join(base, value)
    return config_from_dict(raw).validate()
