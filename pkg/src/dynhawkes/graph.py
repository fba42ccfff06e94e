"""Discrete dynamic networks: edge ingestion, snapshot bucketing and queries.

A :class:`DynamicNetwork` is a sequence of weighted undirected snapshots
over a fixed vertex universe ``[0, N)``.  Snapshot ordinals are 1-based
throughout the public API, so ``net.snapshot(1)`` is the first bucket.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .alias import AliasTable
from .errors import ParseError, RejectedEdgeError, ValidationError


class TemporalEdge(NamedTuple):
    src: int
    dst: int
    timestamp: int
    weight: float = 1.0


def _lines(stream) -> Iterator[str]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    yield from stream


def ingest_edges(stream) -> list[TemporalEdge]:
    """Parse ``src<TAB>dst<TAB>timestamp[<TAB>weight]`` lines.

    ``stream`` may be a string or any iterable of lines.  Blank lines and
    lines starting with ``#`` are skipped.
    """
    edges = []
    for lineno, raw in enumerate(_lines(stream), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            raise ParseError(lineno, f"expected 3 or 4 tab-separated fields, got {len(fields)}")
        try:
            src, dst, ts = (int(f) for f in fields[:3])
            weight = float(fields[3]) if len(fields) == 4 else 1.0
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if src < 0 or dst < 0:
            raise ParseError(lineno, "vertex ids must be non-negative")
        if ts < 0:
            raise ParseError(lineno, "timestamp must be non-negative")
        if src == dst:
            raise RejectedEdgeError(lineno, f"self-loop on vertex {src}")
        if not np.isfinite(weight) or weight <= 0:
            raise ParseError(lineno, f"weight must be positive, got {weight}")
        edges.append(TemporalEdge(src, dst, ts, weight))
    return edges


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Weighted undirected edges of one time bucket.

    ``pairs`` is an ``(E, 2)`` array of ``(i, j)`` with ``i < j``, sorted
    lexicographically; ``weights`` holds the aggregated weight per pair.
    """

    index: int
    pairs: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)

    def __eq__(self, other):
        if not isinstance(other, Snapshot):
            return NotImplemented
        return (
            self.index == other.index
            and np.array_equal(self.pairs, other.pairs)
            and np.array_equal(self.weights, other.weights)
        )

    def edges(self) -> dict[frozenset, float]:
        return {
            frozenset((int(i), int(j))): float(w)
            for (i, j), w in zip(self.pairs, self.weights)
        }


class _Adjacency(NamedTuple):
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray


def _adjacency(pairs, weights, n) -> _Adjacency:
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    w = np.concatenate([weights, weights])
    order = np.lexsort((dst, src))
    src, dst, w = src[order], dst[order], w[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return _Adjacency(indptr, dst, w)


def _readonly(a):
    a.setflags(write=False)
    return a


class DynamicNetwork:
    """Immutable snapshot sequence over vertices ``0 .. vertex_count-1``.

    ``vertex_ids`` maps dense ids back to the external ids seen at
    ingestion; ``start`` is the timestamp at which snapshot 1 begins.
    """

    def __init__(self, vertex_count, snapshots, interval, start=0, vertex_ids=None):
        if vertex_count < 1:
            raise ValidationError("vertex_count must be positive")
        if interval <= 0:
            raise ValidationError("interval must be positive")
        snapshots = tuple(snapshots)
        if not snapshots:
            raise ValidationError("a dynamic network needs at least one snapshot")
        for t, snap in enumerate(snapshots, start=1):
            if snap.index != t:
                raise ValidationError(f"snapshot ordinals must be 1..T, got {snap.index} at position {t}")
            if len(snap) and (snap.pairs.min() < 0 or snap.pairs.max() >= vertex_count):
                raise ValidationError(f"snapshot {t} references a vertex outside [0, {vertex_count})")
            if len(snap) and np.any(snap.pairs[:, 0] >= snap.pairs[:, 1]):
                raise ValidationError(f"snapshot {t} pairs must satisfy i < j")
            if np.any(snap.weights <= 0):
                raise ValidationError(f"snapshot {t} has non-positive weights")
        self.vertex_count = int(vertex_count)
        self.snapshots = snapshots
        self.interval = int(interval)
        self.start = int(start)
        if vertex_ids is None:
            vertex_ids = np.arange(vertex_count)
        self.vertex_ids = _readonly(np.asarray(vertex_ids, dtype=np.int64))
        if self.vertex_ids.shape != (vertex_count,):
            raise ValidationError("vertex_ids must have one entry per vertex")
        self._adj = tuple(_adjacency(s.pairs, s.weights, self.vertex_count) for s in snapshots)
        for adj in self._adj:
            for a in adj:
                _readonly(a)
        self._edge_sets = tuple(
            frozenset(map(tuple, s.pairs.tolist())) for s in snapshots
        )

    @classmethod
    def from_edge_sets(cls, vertex_count, edge_sets, interval=1, start=0):
        """Build from per-snapshot ``{(i, j): weight}`` dicts or pair iterables."""
        snaps = []
        for t, edges in enumerate(edge_sets, start=1):
            agg: dict[tuple[int, int], float] = {}
            items = edges.items() if isinstance(edges, dict) else ((e, 1.0) for e in edges)
            for (i, j), w in items:
                if i == j:
                    raise ValidationError(f"self-loop on vertex {i} in snapshot {t}")
                key = (min(i, j), max(i, j))
                agg[key] = agg.get(key, 0.0) + float(w)
            snaps.append(_make_snapshot(t, agg))
        return cls(vertex_count, snaps, interval, start)

    @property
    def T(self) -> int:
        return len(self.snapshots)

    def __eq__(self, other):
        if not isinstance(other, DynamicNetwork):
            return NotImplemented
        return (
            self.vertex_count == other.vertex_count
            and self.interval == other.interval
            and self.start == other.start
            and np.array_equal(self.vertex_ids, other.vertex_ids)
            and self.snapshots == other.snapshots
        )

    def __repr__(self):
        return f"DynamicNetwork(N={self.vertex_count}, T={self.T}, interval={self.interval})"

    def _check_t(self, t):
        if not 1 <= t <= self.T:
            raise ValidationError(f"snapshot ordinal {t} outside [1, {self.T}]")

    def _check_vertex(self, i):
        if not 0 <= i < self.vertex_count:
            raise ValidationError(f"vertex {i} outside universe [0, {self.vertex_count})")

    def snapshot(self, t) -> Snapshot:
        self._check_t(t)
        return self.snapshots[t - 1]

    def neighbors(self, i, t) -> np.ndarray:
        """Sorted neighbor ids of ``i`` in snapshot ``t``."""
        self._check_t(t)
        self._check_vertex(i)
        adj = self._adj[t - 1]
        return adj.indices[adj.indptr[i]:adj.indptr[i + 1]]

    def neighbor_weights(self, i, t) -> np.ndarray:
        adj = self._adj[t - 1]
        return adj.weights[adj.indptr[i]:adj.indptr[i + 1]]

    def has_edge(self, i, j, t) -> bool:
        self._check_t(t)
        return (min(i, j), max(i, j)) in self._edge_sets[t - 1]

    def edge_set(self, t) -> frozenset:
        """Set of ``(i, j)`` tuples with ``i < j`` in snapshot ``t``."""
        self._check_t(t)
        return self._edge_sets[t - 1]

    def degrees(self, t) -> np.ndarray:
        """Distinct-neighbor counts in snapshot ``t``."""
        self._check_t(t)
        return np.diff(self._adj[t - 1].indptr)

    def history_window(self, t, h) -> range:
        return range(max(1, t - h), t)

    def history_arrays(self, i, t, h):
        """``(neighbors, t_h, weights)`` arrays for :func:`history_neighbors`."""
        parts = [(self.neighbors(i, th), th) for th in self.history_window(t, h)]
        if not parts:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy(), np.zeros(0)
        nb = np.concatenate([p for p, _ in parts])
        ts = np.concatenate([np.full(len(p), th, dtype=np.int64) for p, th in parts])
        ws = np.concatenate([self.neighbor_weights(i, th) for th in self.history_window(t, h)])
        return nb.astype(np.int64), ts, ws

    def summary(self) -> str:
        """Tab-separated summary: T, N and per-snapshot edge counts."""
        out = [f"T\t{self.T}", f"N\t{self.vertex_count}", "snapshot\tstart\tedges"]
        for snap in self.snapshots:
            out.append(f"{snap.index}\t{self.snapshot_start(snap.index)}\t{len(snap)}")
        return "\n".join(out) + "\n"

    def snapshot_start(self, t) -> int:
        return self.start + (t - 1) * self.interval

    def to_edge_lines(self) -> Iterator[str]:
        """Edge-list lines using external ids and bucket-start timestamps."""
        for snap in self.snapshots:
            ts = self.snapshot_start(snap.index)
            for (i, j), w in zip(snap.pairs, snap.weights):
                yield f"{self.vertex_ids[i]}\t{self.vertex_ids[j]}\t{ts}\t{float(w)!r}\n"

    def write_edges(self, fh):
        fh.writelines(self.to_edge_lines())


def _make_snapshot(t, agg: dict) -> Snapshot:
    if agg:
        keys = sorted(agg)
        pairs = np.array(keys, dtype=np.int64)
        weights = np.array([agg[k] for k in keys], dtype=np.float64)
    else:
        pairs = np.zeros((0, 2), dtype=np.int64)
        weights = np.zeros(0, dtype=np.float64)
    return Snapshot(t, _readonly(pairs), _readonly(weights))


def bucket_snapshots(edges: Iterable[TemporalEdge], interval: int, vertices=None) -> DynamicNetwork:
    """Group raw edges into half-open buckets of width ``interval`` seconds.

    Bucket ``t`` covers ``[tau_min + (t-1)*interval, tau_min + t*interval)``.
    Repeated pairs within a bucket sum their weights.  External ids are
    compacted to ``[0, N)`` in ascending order; ``vertices`` adds ids that
    should be part of the universe even without edges.
    """
    edges = list(edges)
    if interval <= 0:
        raise ValidationError("interval must be positive")
    if not edges:
        raise ValidationError("cannot bucket an empty edge list")
    ids = {e.src for e in edges} | {e.dst for e in edges}
    if vertices is not None:
        ids |= {int(v) for v in vertices}
    external = np.array(sorted(ids), dtype=np.int64)
    dense = {int(v): k for k, v in enumerate(external)}

    tau_min = min(e.timestamp for e in edges)
    tau_max = max(e.timestamp for e in edges)
    T = (tau_max - tau_min) // interval + 1
    buckets: list[dict] = [{} for _ in range(T)]
    for e in edges:
        if e.src == e.dst:
            raise ValidationError(f"self-loop on vertex {e.src}")
        if e.weight <= 0:
            raise ValidationError(f"non-positive weight {e.weight}")
        b = (e.timestamp - tau_min) // interval
        i, j = dense[e.src], dense[e.dst]
        key = (min(i, j), max(i, j))
        buckets[b].setdefault(key, []).append(float(e.weight))
    # fsum is exactly rounded, so input order cannot change the aggregate
    snaps = [
        _make_snapshot(t, {k: math.fsum(ws) for k, ws in agg.items()})
        for t, agg in enumerate(buckets, start=1)
    ]
    return DynamicNetwork(len(external), snaps, interval, start=tau_min, vertex_ids=external)


def history_neighbors(net: DynamicNetwork, i: int, t: int, h: int) -> list[tuple[int, int, float]]:
    """Neighbors of ``i`` in snapshots ``max(1, t-h) .. t-1``, oldest first."""
    net._check_t(t)
    net._check_vertex(i)
    if h < 1:
        raise ValidationError("history window must be >= 1")
    nb, ts, ws = net.history_arrays(i, t, h)
    return [(int(a), int(b), float(c)) for a, b, c in zip(nb, ts, ws)]


class NegativeTable:
    """Degree-proportional sampling distribution for one snapshot."""

    def __init__(self, probabilities: np.ndarray, t: int):
        self.t = t
        self.probabilities = _readonly(np.asarray(probabilities, dtype=np.float64))
        self._alias = AliasTable(self.probabilities)

    def __len__(self):
        return len(self.probabilities)

    def sample(self, rng, size=None):
        return self._alias.sample(rng, size)


def negative_distribution(net: DynamicNetwork, t: int, exponent: float = 1.0) -> NegativeTable:
    """Sampling table with ``P(v) ∝ deg_t(v) ** exponent`` over all vertices."""
    deg = net.degrees(t).astype(np.float64)
    if deg.sum() == 0:
        raise ValidationError(f"snapshot {t} has no edges; no negative distribution")
    mass = np.where(deg > 0, deg ** exponent, 0.0)
    return NegativeTable(mass / mass.sum(), t)
