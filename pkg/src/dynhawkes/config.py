"""Run configuration: defaults, flat ``key = value`` files and overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ValidationError
from .training import TrainingConfig

TEN_DAYS = 10 * 24 * 3600


@dataclass
class RunConfig:
    # training
    beta0: float = 1.0
    beta1: float = 0.01
    K: int = 5
    h: int = 5
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0
    kernel: str = "exponential"
    dim: int = 32
    neg_exponent: float = 1.0
    mode: str = "deterministic"
    workers: int = 1
    # data and paths
    input: str = ""
    interval: int = TEN_DAYS
    out: str = "."
    checkpoint: str = ""
    # evaluation
    task: str = "link"
    ratio: float = 1.0
    ks: str = "10,20"
    folds: int = 5
    repeats: int = 10
    clf_l2: float = 1e-4
    clf_iterations: int = 500
    clf_lr: float = 0.1
    new_only: bool = False
    active_only: bool = False
    # gradient check
    tolerance: float = 1e-4
    gc_vertices: int = 10
    gc_snapshots: int = 3
    gc_coords: int = 100
    # sweep
    sweep_kernels: str = "exponential,power-law,rayleigh,flat"
    sweep_h: str = "1,2,3,4,5"

    def training(self) -> TrainingConfig:
        names = TrainingConfig.field_names()
        return TrainingConfig(**{n: getattr(self, n) for n in names})

    def k_list(self) -> list[int]:
        return parse_int_list(self.ks, "ks")

    def checkpoint_path(self) -> str:
        import os

        return self.checkpoint or os.path.join(self.out, "checkpoint.txt")


DOCS = {
    "beta0": "weight of the Hawkes negative-sampling term",
    "beta1": "weight of the temporal smoothness term",
    "K": "negative samples per observed edge",
    "h": "history window in snapshots",
    "lr": "SGD learning rate",
    "epochs": "passes over all observed edges",
    "batch_size": "observed edges per SGD step",
    "seed": "random seed",
    "kernel": "decay kernel: exponential, power-law, rayleigh or flat",
    "dim": "embedding dimension",
    "neg_exponent": "exponent on degree in the negative-sampling table",
    "mode": "deterministic or parallel",
    "workers": "threads in parallel mode",
    "input": "tab-separated edge list (src dst timestamp [weight])",
    "interval": "snapshot width in timestamp units",
    "out": "output directory",
    "checkpoint": "checkpoint path (default OUT/checkpoint.txt)",
    "task": "evaluation task: link, newlink or recommend",
    "ratio": "negatives per positive evaluation pair",
    "ks": "comma-separated k values for recommendation",
    "folds": "cross-validation folds",
    "repeats": "cross-validation repeats",
    "clf_l2": "logistic regression L2 penalty",
    "clf_iterations": "logistic regression gradient steps",
    "clf_lr": "logistic regression step size",
    "new_only": "recommendation truth limited to new links",
    "active_only": "recommendation candidates limited to vertices active at t",
    "tolerance": "max relative gradient error for gradcheck",
    "gc_vertices": "vertices in the gradcheck instance",
    "gc_snapshots": "snapshots in the gradcheck instance",
    "gc_coords": "coordinates compared by gradcheck",
    "sweep_kernels": "kernels visited by sweep",
    "sweep_h": "history windows visited by sweep",
}


def parse_int_list(text, name):
    try:
        out = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"{name}: expected comma-separated integers, got {text!r}") from None
    if not out:
        raise ValidationError(f"{name}: empty list")
    return out


def parse_bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(cls, key, value):
    """Convert a string ``value`` to the type of field ``key`` of ``cls``."""
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ValidationError(f"unknown config key {key!r}")
    kind = types[key]
    try:
        if kind in ("bool", bool):
            return parse_bool(value)
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
        return str(value)
    except ValueError as exc:
        raise ValidationError(f"config key {key!r}: {exc}") from None


def read_kv(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            out[key.strip()] = value.strip()
    return out


def build(cls, file_values: dict, overrides: dict):
    """Instance of ``cls`` from defaults, then file values, then overrides."""
    values = {}
    for key, raw in file_values.items():
        values[key] = coerce(cls, key, raw)
    for key, v in overrides.items():
        if v is not None:
            values[key] = v
    return cls(**values)
