"""Run-configuration files: flat UTF-8 `key = value` lines with `#` comments.

Keys are namespaced with dots (dataset.*, model.*, solver.*, train.*,
attack.*, ablation.*, gradcheck.*) plus top-level `seed` and `out_dir`.
Unknown keys are rejected; path-valued keys are resolved against the config
file's directory at parse time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError

__all__ = ["RunConfig", "parse_config", "default_config"]


def _parse_bool(s):
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_bandwidth(s):
    if s.lower() in ("self_tuning", "self-tuning", "none"):
        return None
    return float(s)


def _parse_opt_int(s):
    if s.lower() in ("none", ""):
        return None
    return int(s)


def _parse_opt_float(s):
    if s.lower() in ("none", ""):
        return None
    return float(s)


def _parse_float_list(s):
    return [float(tok) for tok in s.replace(",", " ").split()]


@dataclass
class DatasetCfg:
    kind: str = "two_moons"  # two_moons | idx
    n: int = 200
    noise: float = 0.1
    test_n: int = 0
    images: str = ""
    labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    subset: int = 0  # 0 = all rows (idx datasets)
    test_subset: int = 0


@dataclass
class ModelCfg:
    hidden: int = 64
    depth: int = 3  # number of linear layers in the encoder
    out_dim: int = 2
    k: int = 10
    tau: float = 0.0
    bandwidth: Optional[float] = None  # None = self-tuning
    head: str = "gll"


@dataclass
class SolverCfg:
    tol: float = 1e-10
    max_iter: int = 0  # 0 = 10n
    p: float = 2.0
    tau: float = 0.0
    lam: float = 0.0
    mode: str = "laplace"  # laplace | soft | plaplace | poisson


@dataclass
class TrainCfg:
    epochs: int = 2000
    batch_size: int = 0
    base_per_batch: int = 10
    lr: float = 0.01
    optimizer: str = "adam"
    momentum: float = 0.9
    lr_decay: float = 1.0
    lr_decay_every: int = 0
    switch_to_gll_at: Optional[int] = None
    base_mode: str = "resample"
    target_accuracy: Optional[float] = None
    eval_ratio: float = 1.0
    eval_every: int = 1
    pgd_eps: float = 0.0
    pgd_alpha: float = 0.01
    pgd_iters: int = 5
    pgd_lo: float = 0.0
    pgd_hi: float = 1.0


@dataclass
class AttackCfg:
    kinds: str = "fgsm,ifgsm"
    eps_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    alpha: float = 0.05
    c_grid: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    iters: int = 100
    lr: float = 0.005
    lo: float = 0.0
    hi: float = 1.0
    anchors: int = 0  # labeled rows embedded with the attacked batch; 0 = len(test)
    dump: bool = False


@dataclass
class AblationCfg:
    taus: list = field(default_factory=lambda: [0.0, 0.001, 0.01, 0.1, 0.5])
    epochs: int = 20000
    include_softmax: bool = True


@dataclass
class GradcheckCfg:
    instances: int = 5
    h: float = 1e-5
    tolerance: float = 1e-4


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    dataset: DatasetCfg = field(default_factory=DatasetCfg)
    model: ModelCfg = field(default_factory=ModelCfg)
    solver: SolverCfg = field(default_factory=SolverCfg)
    train: TrainCfg = field(default_factory=TrainCfg)
    attack: AttackCfg = field(default_factory=AttackCfg)
    ablation: AblationCfg = field(default_factory=AblationCfg)
    gradcheck: GradcheckCfg = field(default_factory=GradcheckCfg)

    def encoder_sizes(self, in_dim):
        hidden = [self.model.hidden] * (self.model.depth - 1)
        return [in_dim] + hidden + [self.model.out_dim]


# dotted key -> (group attr or None, field name, parser)
_SCHEMA = {
    "seed": (None, "seed", int),
    "out_dir": (None, "out_dir", str),
    "dataset.kind": ("dataset", "kind", str),
    "dataset.n": ("dataset", "n", int),
    "dataset.noise": ("dataset", "noise", float),
    "dataset.test_n": ("dataset", "test_n", int),
    "dataset.images": ("dataset", "images", str),
    "dataset.labels": ("dataset", "labels", str),
    "dataset.test_images": ("dataset", "test_images", str),
    "dataset.test_labels": ("dataset", "test_labels", str),
    "dataset.subset": ("dataset", "subset", int),
    "dataset.test_subset": ("dataset", "test_subset", int),
    "model.hidden": ("model", "hidden", int),
    "model.depth": ("model", "depth", int),
    "model.out_dim": ("model", "out_dim", int),
    "model.k": ("model", "k", int),
    "model.tau": ("model", "tau", float),
    "model.bandwidth": ("model", "bandwidth", _parse_bandwidth),
    "model.head": ("model", "head", str),
    "solver.tol": ("solver", "tol", float),
    "solver.max_iter": ("solver", "max_iter", int),
    "solver.p": ("solver", "p", float),
    "solver.tau": ("solver", "tau", float),
    "solver.lambda": ("solver", "lam", float),
    "solver.mode": ("solver", "mode", str),
    "train.epochs": ("train", "epochs", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.base_per_batch": ("train", "base_per_batch", int),
    "train.lr": ("train", "lr", float),
    "train.optimizer": ("train", "optimizer", str),
    "train.momentum": ("train", "momentum", float),
    "train.lr_decay": ("train", "lr_decay", float),
    "train.lr_decay_every": ("train", "lr_decay_every", int),
    "train.switch_to_gll_at": ("train", "switch_to_gll_at", _parse_opt_int),
    "train.base_mode": ("train", "base_mode", str),
    "train.target_accuracy": ("train", "target_accuracy", _parse_opt_float),
    "train.eval_ratio": ("train", "eval_ratio", float),
    "train.eval_every": ("train", "eval_every", int),
    "train.pgd_eps": ("train", "pgd_eps", float),
    "train.pgd_alpha": ("train", "pgd_alpha", float),
    "train.pgd_iters": ("train", "pgd_iters", int),
    "train.pgd_lo": ("train", "pgd_lo", float),
    "train.pgd_hi": ("train", "pgd_hi", float),
    "attack.kinds": ("attack", "kinds", str),
    "attack.eps_grid": ("attack", "eps_grid", _parse_float_list),
    "attack.alpha": ("attack", "alpha", float),
    "attack.c_grid": ("attack", "c_grid", _parse_float_list),
    "attack.iters": ("attack", "iters", int),
    "attack.lr": ("attack", "lr", float),
    "attack.lo": ("attack", "lo", float),
    "attack.hi": ("attack", "hi", float),
    "attack.anchors": ("attack", "anchors", int),
    "attack.dump": ("attack", "dump", _parse_bool),
    "ablation.taus": ("ablation", "taus", _parse_float_list),
    "ablation.epochs": ("ablation", "epochs", int),
    "ablation.include_softmax": ("ablation", "include_softmax", _parse_bool),
    "gradcheck.instances": ("gradcheck", "instances", int),
    "gradcheck.h": ("gradcheck", "h", float),
    "gradcheck.tolerance": ("gradcheck", "tolerance", float),
}

_PATH_KEYS = {
    "dataset.images",
    "dataset.labels",
    "dataset.test_images",
    "dataset.test_labels",
    "out_dir",
}


def default_config() -> RunConfig:
    return RunConfig()


def parse_config(path, overrides=None) -> RunConfig:
    """Parse a config file; `overrides` maps dotted keys to value strings
    (command-line flags use this)."""
    cfg = RunConfig()
    base_dir = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`")
            key, value = (part.strip() for part in line.split("=", 1))
            entries.append((f"{path}:{lineno}", key, value))
    for origin, key, value in entries + [
        ("<override>", k, v) for k, v in (overrides or {}).items()
    ]:
        if key not in _SCHEMA:
            raise ConfigError(f"{origin}: unknown key {key!r}")
        group, attr, parser = _SCHEMA[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{origin}: bad value for {key}: {exc}") from None
        if key in _PATH_KEYS and parsed:
            parsed = os.path.normpath(os.path.join(base_dir, parsed))
        target = cfg if group is None else getattr(cfg, group)
        setattr(target, attr, parsed)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.dataset.kind not in ("two_moons", "idx"):
        raise ConfigError(f"unknown dataset kind {cfg.dataset.kind!r}")
    if cfg.model.head not in ("gll", "softmax"):
        raise ConfigError(f"unknown head {cfg.model.head!r}")
    if cfg.solver.mode not in ("laplace", "soft", "plaplace", "poisson"):
        raise ConfigError(f"unknown solver mode {cfg.solver.mode!r}")
    if cfg.train.base_mode not in ("fixed", "resample", "entropy", "l2"):
        raise ConfigError(f"unknown base mode {cfg.train.base_mode!r}")
    if cfg.dataset.kind == "idx":
        for key in ("images", "labels"):
            p = getattr(cfg.dataset, key)
            if not p:
                raise ConfigError(f"dataset.{key} is required for idx datasets")
            if not os.path.exists(p):
                raise ConfigError(f"dataset.{key}: no such file {p}")
    if cfg.model.depth < 1:
        raise ConfigError("model.depth must be at least 1")
