"""Experiment configuration: JSON in, fully resolved dataclass out.

Schema (all keys optional except where noted)::

    {
      "name": "synthetic",
      "dataset": {"kind": "synthetic", "gammas": [0.4, 0.7, 1.0, 1.2],
                  "n": 800, "p": 10, "rho": 0.2, "sigma2": 3.0,
                  "beta0": 0.2, "beta1": 1.2}
               | {"kind": "csv", "paths": ["a.csv", ...]}
               | {"kind": "csv_dir", "path": "dir", "pattern": "*.csv"}
               | {"kind": "manifest", "path": "manifest.json"},
      "split": {"train": 0.63, "valid": 0.27, "test": 0.10},
      "estimators": ["pite", "ols1", "ols2", "knn"],
      "replications": 10,
      "pite": {<PITE constructor arguments>},
      "knn": {"k": 5, "factual": "observed"},
      "metrics": null,
      "seed_base": 0,
      "out": "results",
      "dump_representations": true,
      "sweep": {"K": [3, 5, 8]}
    }

Relative dataset paths resolve against the config file's directory; ``out``
resolves against the working directory.
"""
import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..estimator import PITE
from ..exceptions import ConfigError

ESTIMATORS = ("pite", "ols1", "ols2", "knn")

SYNTHETIC_DEFAULTS = {
    "kind": "synthetic",
    "gammas": [0.4, 0.7, 1.0, 1.2],
    "n": 800,
    "p": 10,
    "rho": 0.2,
    "sigma2": 3.0,
    "beta0": 0.2,
    "beta1": 1.2,
}

# sweep keys accepted in addition to the PITE constructor names
SWEEP_ALIASES = {"K": "n_prototypes", "lambda": "reg_lambda", "lam": "reg_lambda"}


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: dict = field(default_factory=lambda: dict(SYNTHETIC_DEFAULTS))
    split: dict = field(default_factory=lambda: {"train": 0.63, "valid": 0.27, "test": 0.10})
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    replications: int = 30
    pite: dict = field(default_factory=dict)
    knn: dict = field(default_factory=lambda: {"k": 5, "factual": "observed"})
    metrics: list = None
    seed_base: int = 0
    out: str = "results"
    dump_representations: bool = True
    sweep: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ConfigError(f"unregistered estimators: {unknown}")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        kind = self.dataset.get("kind", "synthetic")
        if kind == "synthetic":
            self.dataset = {**SYNTHETIC_DEFAULTS, **self.dataset}
        elif kind not in ("csv", "csv_dir", "manifest"):
            raise ConfigError(f"unknown dataset kind {kind!r}")
        valid_pite = set(PITE().get_params())
        bad = set(self.pite) - valid_pite
        if bad:
            raise ConfigError(f"unknown PITE parameters: {sorted(bad)}")
        for key in self.sweep:
            if SWEEP_ALIASES.get(key, key) not in valid_pite:
                raise ConfigError(f"cannot sweep over {key!r}")

    def pite_params(self, overrides=None):
        """Resolved PITE constructor arguments (defaults filled in)."""
        params = PITE().get_params()
        params.update(self.pite)
        for k, v in (overrides or {}).items():
            params[SWEEP_ALIASES.get(k, k)] = v
        for k in ("encoder_layers", "head_layers"):
            params[k] = tuple(params[k])
        return params

    def resolve_path(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        d["pite"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.pite_params().items()}
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw):
        new = copy.deepcopy(self)
        for k, v in kw.items():
            setattr(new, k, v)
        new.__post_init__()
        return new


def load_config(path=None, **overrides):
    doc = {}
    base = "."
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = str(path.parent)
    known = {f for f in ExperimentConfig.__dataclass_fields__ if f != "base_dir"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(base_dir=base, **doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
