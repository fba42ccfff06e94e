"""Planted-partition dynamic networks with history-dependent edge formation."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .graph import DynamicNetwork, _make_snapshot


@dataclass(frozen=True)
class PlantedSpec:
    """Parameters of the generator.

    Snapshot 1 is a blockwise Bernoulli graph.  Afterwards every edge
    survives with probability ``persistence``; every other pair forms with
    probability ``p_block + boost * sum_s A_s * exp(-rho * (t - s))`` where
    ``A_s`` marks past snapshots in which the pair was connected (the sum is
    dropped when ``decay_mode`` is ``"none"``).  ``p_in_first`` and
    ``p_out_first`` override the block probabilities for snapshot 1 only.
    """

    N: int = 100
    block_sizes: tuple = (50, 50)
    T: int = 6
    p_in: float = 0.1
    p_out: float = 0.01
    persistence: float = 0.5
    decay_mode: str = "none"
    rho: float = 1.0
    boost: float = 0.3
    seed: int = 0
    interval: int = 1
    p_in_first: float | None = None
    p_out_first: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "block_sizes", tuple(int(b) for b in self.block_sizes))
        self.validate()

    def validate(self):
        def bad(name, why):
            raise ValidationError(f"invalid spec field '{name}': {why}")

        if self.N < 2:
            bad("N", "need at least 2 vertices")
        if not self.block_sizes or any(b < 1 for b in self.block_sizes):
            bad("block_sizes", "blocks must be non-empty")
        if sum(self.block_sizes) != self.N:
            bad("block_sizes", f"sizes sum to {sum(self.block_sizes)}, expected N = {self.N}")
        if self.T < 1:
            bad("T", "need at least one snapshot")
        if not 0 <= self.p_in <= 1:
            bad("p_in", "must lie in [0, 1]")
        if not 0 <= self.p_out <= 1:
            bad("p_out", "must lie in [0, 1]")
        if self.p_out > self.p_in:
            bad("p_out", "must not exceed p_in")
        if not 0 <= self.persistence <= 1:
            bad("persistence", "must lie in [0, 1]")
        if self.decay_mode not in ("none", "exponential"):
            bad("decay_mode", "must be 'none' or 'exponential'")
        if self.rho <= 0:
            bad("rho", "must be positive")
        if self.boost < 0:
            bad("boost", "must be non-negative")
        if self.interval < 1:
            bad("interval", "must be >= 1")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


class GeneratedNetwork(NamedTuple):
    net: DynamicNetwork
    labels: np.ndarray


def block_labels(block_sizes) -> np.ndarray:
    return np.repeat(np.arange(len(block_sizes)), block_sizes)


def generate(spec: PlantedSpec) -> GeneratedNetwork:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    labels = block_labels(spec.block_sizes)
    iu, ju = np.triu_indices(spec.N, k=1)
    p_block = np.where(labels[iu] == labels[ju], spec.p_in, spec.p_out)

    same = labels[iu] == labels[ju]
    p_first = np.where(same,
                       spec.p_in if spec.p_in_first is None else spec.p_in_first,
                       spec.p_out if spec.p_out_first is None else spec.p_out_first)
    present = rng.random(len(iu)) < p_first
    excitation = np.zeros(len(iu))
    decay = np.exp(-spec.rho)
    history = [present]
    for _ in range(1, spec.T):
        if spec.decay_mode == "exponential":
            excitation = decay * (excitation + present)
            p_fresh = np.minimum(1.0, p_block + spec.boost * excitation)
        else:
            p_fresh = p_block
        kept = present & (rng.random(len(iu)) < spec.persistence)
        fresh = rng.random(len(iu)) < p_fresh
        present = kept | fresh
        history.append(present)

    snaps = []
    for t, mask in enumerate(history, start=1):
        snaps.append(_make_snapshot(t, {(int(a), int(b)): 1.0 for a, b in zip(iu[mask], ju[mask])}))
    net = DynamicNetwork(spec.N, snaps, spec.interval, start=spec.interval)
    return GeneratedNetwork(net, labels)


def write_labels(labels, fh):
    for v, b in enumerate(labels):
        fh.write(f"{v}\t{b}\n")
