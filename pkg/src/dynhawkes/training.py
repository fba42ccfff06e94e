"""Joint objective and SGD training.

The objective summed over snapshots is::

    L = sum_t  L_struct(t) + beta0 * L_hawkes(t) + beta1 * L_smooth(t)

``L_struct`` pulls connected vertices together, ``L_smooth`` penalizes
movement between consecutive snapshots and ``L_hawkes`` is the
negative-sampling loss on the raw intensity of every observed edge.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import sparse

from .errors import DivergenceError, SamplingExhaustedError, ValidationError
from .graph import DynamicNetwork, NegativeTable, Snapshot, negative_distribution
from .intensity import (
    EmbeddingSequence,
    HawkesParams,
    HistoryIndex,
    check_kernel,
    raw_intensity_batch,
)

log = logging.getLogger(__name__)

MAX_REJECTIONS = 10_000


@dataclass
class TrainingConfig:
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

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if self.h < 1:
            raise ValidationError("h must be >= 1")
        if not self.lr > 0:
            raise ValidationError("lr must be > 0")
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")
        if self.beta0 < 0 or self.beta1 < 0:
            raise ValidationError("beta0 and beta1 must be non-negative")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.mode not in ("deterministic", "parallel"):
            raise ValidationError("mode must be 'deterministic' or 'parallel'")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        check_kernel(self.kernel)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class EpochLoss:
    epoch: int
    structural: float
    hawkes: float
    smooth: float
    total: float


@dataclass
class TrainingState:
    emb: EmbeddingSequence
    params: HawkesParams
    epoch: int = 0
    trace: list[EpochLoss] = field(default_factory=list)

    @classmethod
    def initialize(cls, net: DynamicNetwork, config: TrainingConfig):
        rng = np.random.default_rng(config.seed)
        emb = EmbeddingSequence.initialize(net.T, net.vertex_count, config.dim, rng)
        params = HawkesParams.initialize(net.vertex_count, config.dim, rng, config.kernel)
        return cls(emb, params)

    def trace_tsv(self) -> str:
        lines = ["epoch\tL_1st\tL_DHP\tL_smooth\ttotal"]
        for e in self.trace:
            lines.append(f"{e.epoch}\t{e.structural!r}\t{e.hawkes!r}\t{e.smooth!r}\t{e.total!r}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# structural and smoothness terms


def loss_structural(snapshot: Snapshot, U_t) -> float:
    """Weighted squared distance over the snapshot's edges, each edge once."""
    U_t = np.asarray(U_t, dtype=np.float64)
    if len(snapshot) == 0:
        return 0.0
    if snapshot.pairs.max() >= len(U_t):
        raise ValidationError("snapshot references a vertex without an embedding")
    diff = U_t[snapshot.pairs[:, 0]] - U_t[snapshot.pairs[:, 1]]
    return float(snapshot.weights @ np.einsum("ed,ed->e", diff, diff))


def loss_smooth(U_t, U_prev, t) -> float:
    """Squared movement between consecutive snapshots; zero for ``t = 1``."""
    if t == 1:
        return 0.0
    diff = np.asarray(U_t, dtype=np.float64) - np.asarray(U_prev, dtype=np.float64)
    return float(np.einsum("nd,nd->", diff, diff))


def laplacians(net: DynamicNetwork):
    """Weighted graph Laplacian of every snapshot as a sparse matrix."""
    out = []
    N = net.vertex_count
    for snap in net.snapshots:
        a, b = snap.pairs[:, 0], snap.pairs[:, 1]
        adj = sparse.coo_matrix((np.concatenate([snap.weights, snap.weights]),
                                 (np.concatenate([a, b]), np.concatenate([b, a]))),
                                shape=(N, N)).tocsr()
        deg = np.asarray(adj.sum(axis=1)).ravel()
        out.append((sparse.diags(deg) - adj).tocsr())
    return out


def _structural_smooth_grad(net, U, beta1, scale, dU, laps=None):
    """Add ``scale * d(L_struct + beta1 L_smooth)/dU`` into ``dU``; return terms.

    Uses ``sum_e w_e |u_a - u_b|^2 = tr(U' L U)`` with the snapshot Laplacian.
    """
    laps = laplacians(net) if laps is None else laps
    l_struct = 0.0
    l_smooth = 0.0
    for t in range(1, net.T + 1):
        Ut = U[t - 1]
        LU = laps[t - 1] @ Ut
        l_struct += float(np.einsum("nd,nd->", Ut, LU))
        dU[t - 1] += (2.0 * scale) * LU
        if t > 1:
            diff = Ut - U[t - 2]
            l_smooth += float(np.einsum("nd,nd->", diff, diff))
            g = (2.0 * scale * beta1) * diff
            dU[t - 1] += g
            dU[t - 2] -= g
    return l_struct, l_smooth


# ---------------------------------------------------------------------------
# negative sampling


class NegativeSampler:
    """Degree-proportional negatives that avoid ``i`` and its neighbors at ``t``."""

    def __init__(self, net: DynamicNetwork, exponent=1.0):
        self.net = net
        N = net.vertex_count
        self.tables: dict[int, NegativeTable] = {}
        self._edge_keys = {}
        for t in range(1, net.T + 1):
            pairs = net.snapshots[t - 1].pairs
            keys = np.concatenate([pairs[:, 0] * N + pairs[:, 1], pairs[:, 1] * N + pairs[:, 0]])
            self._edge_keys[t] = np.sort(keys)
            if len(pairs):
                self.tables[t] = negative_distribution(net, t, exponent)

    def _invalid(self, src, draws, t):
        keys = self._edge_keys[t]
        code = src * self.net.vertex_count + draws
        pos = np.searchsorted(keys, code)
        hit = (pos < len(keys)) & (keys[np.minimum(pos, len(keys) - 1)] == code)
        return hit | (draws == src)

    def sample(self, src, t, K, rng) -> np.ndarray:
        """``(len(src), K)`` negatives for sources ``src`` at snapshot ``t``."""
        src = np.asarray(src, dtype=np.int64)
        if t not in self.tables:
            raise SamplingExhaustedError(f"snapshot {t} has no edges to sample negatives from")
        table = self.tables[t]
        out = table.sample(rng, size=(len(src), K))
        srcs = np.repeat(src[:, None], K, axis=1)
        bad = self._invalid(srcs, out, t)
        attempts = 1
        while bad.any():
            if attempts >= MAX_REJECTIONS:
                i = int(srcs[bad][0])
                raise SamplingExhaustedError(
                    f"no valid negative for vertex {i} at snapshot {t} after "
                    f"{MAX_REJECTIONS} attempts (snapshot nearly complete around it)"
                )
            redraw = table.sample(rng, size=int(bad.sum()))
            out[bad] = redraw
            bad[bad] = self._invalid(srcs[bad], redraw, t)
            attempts += 1
        return out


def sample_negatives(dist: NegativeTable, i, t, net: DynamicNetwork, K, rng) -> np.ndarray:
    """``K`` draws from ``dist`` rejecting ``i`` and its neighbors at ``t``."""
    N = net.vertex_count
    nbrs = set(net.neighbors(i, t).tolist())
    out = np.empty(K, dtype=np.int64)
    for k in range(K):
        for _ in range(MAX_REJECTIONS):
            v = int(dist.sample(rng))
            if v != i and v not in nbrs and 0 <= v < N:
                out[k] = v
                break
        else:
            raise SamplingExhaustedError(
                f"no valid negative for vertex {i} at snapshot {t} after {MAX_REJECTIONS} attempts"
            )
    return out


# ---------------------------------------------------------------------------
# Hawkes negative-sampling term


def positive_events(net: DynamicNetwork) -> np.ndarray:
    """All ``(i, j, t)`` with ``t >= 2``, both orientations of every edge."""
    rows = []
    for t in range(2, net.T + 1):
        pairs = net.snapshots[t - 1].pairs
        if len(pairs):
            tt = np.full(len(pairs), t, dtype=np.int64)
            rows.append(np.column_stack([pairs[:, 0], pairs[:, 1], tt]))
            rows.append(np.column_stack([pairs[:, 1], pairs[:, 0], tt]))
    if not rows:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(rows).astype(np.int64)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-softplus(-x))


def dhp_loss_from_raw(raw_pos, raw_neg) -> float:
    """``-sum(log sig(raw_pos)) - sum(log sig(-raw_neg))``."""
    return float(np.sum(softplus(-np.asarray(raw_pos))) + np.sum(softplus(np.asarray(raw_neg))))


def sample_event_negatives(sampler: NegativeSampler, events, K, rng) -> np.ndarray:
    """Negatives for every event, drawn snapshot by snapshot in ascending order."""
    events = np.asarray(events, dtype=np.int64).reshape(-1, 3)
    out = np.zeros((len(events), K), dtype=np.int64)
    if K == 0:
        return out
    for t in np.unique(events[:, 2]):
        sel = np.flatnonzero(events[:, 2] == t)
        out[sel] = sampler.sample(events[sel, 0], int(t), K, rng)
    return out


def dhp_loss_grad(U, params, index, events, negatives, want_grad=True):
    """Negative-sampling loss and gradients for fixed events and negatives."""
    events = np.asarray(events, dtype=np.int64).reshape(-1, 3)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(len(events), -1)
    if len(events) == 0:
        zero = (np.zeros_like(U), np.zeros_like(params.W), np.zeros_like(params.z),
                np.zeros_like(params.theta))
        return 0.0, zero
    K = negatives.shape[1]
    src = np.concatenate([events[:, 0], np.repeat(events[:, 0], K)])
    cand = np.concatenate([events[:, 1], negatives.reshape(-1)])
    t = np.concatenate([events[:, 2], np.repeat(events[:, 2], K)])
    P = len(events)
    if not want_grad:
        raw, _, _ = raw_intensity_batch(U, params, index, src, cand, t)
        return dhp_loss_from_raw(raw[:P], raw[P:]), None

    def upstream(raw):
        return np.concatenate([-sigmoid(-raw[:P]), sigmoid(raw[P:])])

    raw, _, _, grads = raw_intensity_batch(U, params, index, src, cand, t, upstream)
    return dhp_loss_from_raw(raw[:P], raw[P:]), grads


def loss_dhp_ns(positives, emb: EmbeddingSequence, net: DynamicNetwork, params: HawkesParams,
                K, rng, h=5, exponent=1.0) -> float:
    """Sampled negative log-likelihood of the observed events ``(i, j, t)``."""
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    for i, j, t in positives:
        if t < 2:
            raise ValidationError(f"event ({i}, {j}, {t}) needs t >= 2")
        if not net.has_edge(i, j, t):
            raise ValidationError(f"event ({i}, {j}, {t}) is not an edge of snapshot {t}")
    sampler = NegativeSampler(net, exponent)
    negatives = sample_event_negatives(sampler, positives, K, rng)
    loss, _ = dhp_loss_grad(emb.vectors, params, HistoryIndex(net, h), positives, negatives,
                            want_grad=False)
    return loss


# ---------------------------------------------------------------------------
# joint objective


@dataclass
class LossTerms:
    structural: float
    hawkes: float
    smooth: float
    total: float


@dataclass
class Gradients:
    U: np.ndarray
    W: np.ndarray
    z: np.ndarray
    theta: np.ndarray


def mix_loss_grad(net, U, params, config: TrainingConfig, index, events, negatives,
                  scale=1.0, want_grad=True, laps=None):
    """Joint loss with a fixed set of Hawkes events and negatives.

    ``scale`` multiplies the structural and smoothness contributions (both
    value and gradient); it is ``1`` for the full objective.
    """
    dU = np.zeros_like(U)
    l_struct, l_smooth = _structural_smooth_grad(net, U, config.beta1, scale, dU, laps)
    if config.beta0 > 0 and len(events):
        l_dhp, g = dhp_loss_grad(U, params, index, events, negatives, want_grad)
    else:
        l_dhp, g = 0.0, None
    l_struct *= scale
    l_smooth *= scale
    total = l_struct + config.beta0 * l_dhp + config.beta1 * l_smooth
    terms = LossTerms(l_struct, l_dhp, l_smooth, total)
    if not want_grad:
        return terms, None
    grads = Gradients(dU, np.zeros_like(params.W), np.zeros_like(params.z),
                      np.zeros_like(params.theta))
    if g is not None:
        b = config.beta0
        grads.U += b * g[0]
        grads.W += b * g[1]
        grads.z += b * g[2]
        grads.theta += b * g[3]
    return terms, grads


def loss_mix(net: DynamicNetwork, emb: EmbeddingSequence, params: HawkesParams,
             config: TrainingConfig, rng) -> LossTerms:
    """Full objective over all snapshots, with freshly sampled negatives."""
    events = positive_events(net)
    negatives = (sample_event_negatives(NegativeSampler(net, config.neg_exponent), events,
                                        config.K, rng)
                 if config.beta0 > 0 else np.zeros((len(events), config.K), dtype=np.int64))
    terms, _ = mix_loss_grad(net, emb.vectors, params, config, HistoryIndex(net, config.h),
                             events, negatives, want_grad=False)
    return terms


# ---------------------------------------------------------------------------
# training loop


def _check_finite(epoch, batch, terms: LossTerms):
    for name in ("structural", "hawkes", "smooth", "total"):
        v = getattr(terms, name)
        if not np.isfinite(v):
            raise DivergenceError(epoch, batch, name, v)


def _sgd_step(state: TrainingState, grads: Gradients, lr):
    state.emb.vectors -= lr * grads.U
    state.params.W -= lr * grads.W
    state.params.z -= lr * grads.z
    state.params.theta -= lr * grads.theta


def train(net: DynamicNetwork, config: TrainingConfig, state: TrainingState | None = None,
          callback=None) -> TrainingState:
    """Minimize the joint objective by mini-batch SGD.

    Each epoch shuffles the Hawkes events into batches of ``batch_size``;
    every batch also carries ``1 / n_batches`` of the structural and
    smoothness terms, so one epoch applies each term exactly once.
    """
    if state is None:
        state = TrainingState.initialize(net, config)
    if config.epochs == 0:
        return state
    rng = np.random.default_rng([config.seed, 1])
    index = HistoryIndex(net, config.h)
    laps = laplacians(net)
    sampler = NegativeSampler(net, config.neg_exponent) if config.beta0 > 0 else None
    events = positive_events(net)
    n_batches = max(1, -(-len(events) // config.batch_size))
    scale = 1.0 / n_batches

    def run_batch(epoch, b, batch, batch_rng):
        if sampler is not None and len(batch):
            negatives = sample_event_negatives(sampler, batch, config.K, batch_rng)
        else:
            negatives = np.zeros((len(batch), config.K), dtype=np.int64)
        # overflow surfaces through the divergence guard rather than as warnings
        with np.errstate(over="ignore", invalid="ignore"):
            terms, grads = mix_loss_grad(net, state.emb.vectors, state.params, config, index,
                                         batch, negatives, scale=scale, laps=laps)
        _check_finite(epoch, b, terms)
        _sgd_step(state, grads, config.lr)
        return terms

    for _ in range(config.epochs):
        epoch = state.epoch + 1
        order = rng.permutation(len(events))
        batches = [events[order[k * config.batch_size:(k + 1) * config.batch_size]]
                   for k in range(n_batches)]
        if config.mode == "parallel" and config.workers > 1:
            seeds = rng.integers(2**63, size=n_batches)
            with ThreadPoolExecutor(config.workers) as pool:
                results = list(pool.map(
                    lambda a: run_batch(epoch, a[0], a[1], np.random.default_rng(a[2])),
                    zip(range(n_batches), batches, seeds)))
        else:
            results = [run_batch(epoch, b, batch, rng) for b, batch in enumerate(batches)]

        l1 = sum(r.structural for r in results)
        ld = sum(r.hawkes for r in results)
        ls = sum(r.smooth for r in results)
        entry = EpochLoss(epoch, l1, ld, ls, l1 + config.beta0 * ld + config.beta1 * ls)
        if not np.isfinite(entry.total):
            raise DivergenceError(epoch, n_batches - 1, "total", entry.total)
        if not (np.all(np.isfinite(state.emb.vectors)) and np.all(np.isfinite(state.params.W))
                and np.all(np.isfinite(state.params.z))
                and np.all(np.isfinite(state.params.theta))):
            raise DivergenceError(epoch, n_batches - 1, "parameters", float("nan"))
        state.trace.append(entry)
        state.epoch = epoch
        log.debug("epoch %d: total %.6g", epoch, entry.total)
        if callback is not None:
            callback(state)
    return state


# ---------------------------------------------------------------------------
# gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    coordinates: list  # (group, flat index, analytic, numeric, rel error)

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance

    @property
    def failures(self):
        return [c for c in self.coordinates if c[4] > self.tolerance]

    def groups(self):
        return sorted({c[0] for c in self.coordinates})


def relative_error(analytic, numeric, floor=1e-5):
    """``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps near-zero coordinates from being judged on central
    difference roundoff (about ``eps * |loss| / step``); below it the test
    is effectively absolute at ``tolerance * floor``.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(net, emb, params, config: TrainingConfig, tolerance=1e-4, n_coords=100,
                   step=1e-5, rng=None, analytic=None) -> GradCheckReport:
    """Compare analytic gradients of the joint objective with central differences.

    Negatives are sampled once and held fixed so the objective is a
    deterministic function of the parameters.  ``analytic`` may replace the
    gradient routine (a callable returning :class:`Gradients`).
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    index = HistoryIndex(net, config.h)
    events = positive_events(net)
    if config.beta0 > 0 and len(events):
        negatives = sample_event_negatives(NegativeSampler(net, config.neg_exponent), events,
                                           config.K, rng)
    else:
        negatives = np.zeros((len(events), config.K), dtype=np.int64)
    U = emb.vectors.copy()
    p = params.copy()
    laps = laplacians(net)

    def objective():
        terms, _ = mix_loss_grad(net, U, p, config, index, events, negatives, want_grad=False,
                                 laps=laps)
        return terms.total

    if analytic is None:
        _, grads = mix_loss_grad(net, U, p, config, index, events, negatives, laps=laps)
    else:
        grads = analytic(net, U, p, config, index, events, negatives)

    groups = [("U", U, grads.U), ("W", p.W, grads.W), ("z", p.z, grads.z),
              ("theta", p.theta, grads.theta)]
    sizes = np.array([g[1].size for g in groups])
    # a guaranteed share per group, the remainder to the largest groups
    per_group = np.minimum(sizes, max(1, n_coords // 8))
    for k in np.argsort(-sizes, kind="stable"):
        short = n_coords - per_group.sum()
        if short <= 0:
            break
        per_group[k] = min(sizes[k], per_group[k] + short)

    coords = []
    for (name, arr, g), m in zip(groups, per_group):
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in rng.choice(flat.size, size=int(m), replace=False):
            orig = flat[k]
            flat[k] = orig + step
            fp = objective()
            flat[k] = orig - step
            fm = objective()
            flat[k] = orig
            numeric = (fp - fm) / (2 * step)
            a = float(gflat[k])
            coords.append((name, int(k), a, numeric, relative_error(a, numeric)))
    worst = max((c[4] for c in coords), default=0.0)
    return GradCheckReport(worst, tolerance, coords)
