"""Hawkes-style edge formation intensity with attention over history.

The raw intensity of a candidate edge ``(i, j)`` at snapshot ``t`` is::

    raw = -|u_i(t-1) - u_j(t-1)|^2
          + sum_m alpha_m * g_m * kappa(t - t_m)

where ``m`` runs over the historical neighbors ``(h_m, t_m)`` of ``i`` in the
window, ``g_m = -|u_{h_m}(t_m) - u_j(t_m)|^2`` measures how close that
neighbor was to ``j``, ``kappa`` is a decay kernel with a per-vertex rate
``delta_i`` and ``alpha`` are attention weights.  The transferred intensity
is ``exp(raw)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .errors import ValidationError
from .graph import DynamicNetwork

KERNELS = ("exponential", "power-law", "rayleigh", "flat")


def check_kernel(kind):
    if kind not in KERNELS:
        raise ValidationError(f"unknown kernel {kind!r}; expected one of {', '.join(KERNELS)}")
    return kind


def decay_kernel(kind, delta, dt):
    """Kernel value in ``(0, 1]``; ``dt`` is measured in snapshots.

    Works elementwise on arrays.  All kinds equal 1 at ``dt = 0``.
    """
    check_kernel(kind)
    delta = np.asarray(delta, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValidationError("decay rate must be positive")
    if np.any(dt < 0):
        raise ValidationError("elapsed time must be non-negative")
    if kind == "exponential":
        out = np.exp(-delta * dt)
    elif kind == "power-law":
        out = 1.0 / (1.0 + delta * dt)
    elif kind == "rayleigh":
        out = np.exp(-0.5 * delta * dt * dt)
    else:
        out = np.ones(np.broadcast(delta, dt).shape)
    return out[()] if out.ndim == 0 else out


def decay_kernel_ddelta(kind, delta, dt):
    """Partial derivative of :func:`decay_kernel` with respect to ``delta``."""
    delta = np.asarray(delta, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    if kind == "exponential":
        return -dt * np.exp(-delta * dt)
    if kind == "power-law":
        return -dt / (1.0 + delta * dt) ** 2
    if kind == "rayleigh":
        return -0.5 * dt * dt * np.exp(-0.5 * delta * dt * dt)
    return np.zeros(np.broadcast(delta, dt).shape)


class EmbeddingSequence:
    """Per-snapshot vertex embeddings stored as a ``(T, N, d)`` array."""

    def __init__(self, vectors):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 3:
            raise ValidationError("embeddings must have shape (T, N, d)")
        if not np.all(np.isfinite(vectors)):
            raise ValidationError("embeddings contain non-finite entries")
        self.vectors = vectors

    @classmethod
    def initialize(cls, T, N, dim, rng):
        s = 0.5 / dim
        return cls(rng.uniform(-s, s, size=(T, N, dim)))

    @property
    def T(self):
        return self.vectors.shape[0]

    @property
    def N(self):
        return self.vectors.shape[1]

    @property
    def dim(self):
        return self.vectors.shape[2]

    def at(self, t):
        """Embedding matrix of snapshot ``t`` (1-based)."""
        if not 1 <= t <= self.T:
            raise ValidationError(f"snapshot ordinal {t} outside [1, {self.T}]")
        return self.vectors[t - 1]

    def copy(self):
        return EmbeddingSequence(self.vectors.copy())


@dataclass
class HawkesParams:
    """Attention projection ``W``, attention vector ``z``, log decay rates ``theta``."""

    W: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    kernel: str = "exponential"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        check_kernel(self.kernel)
        n = self.z.shape[0]
        if self.W.shape != (n, n):
            raise ValidationError(f"W must be {n}x{n}, got {self.W.shape}")

    @classmethod
    def initialize(cls, N, dim, rng, kernel="exponential"):
        s = 1.0 / np.sqrt(dim)
        W = rng.uniform(-s, s, size=(dim, dim))
        z = rng.uniform(-s, s, size=dim)
        return cls(W, z, np.zeros(N), kernel)

    @property
    def delta(self):
        return np.exp(self.theta)

    def copy(self):
        return HawkesParams(self.W.copy(), self.z.copy(), self.theta.copy(), self.kernel)


class IntensityBreakdown(NamedTuple):
    base: float
    excitation: float
    raw: float
    transferred: float


def base_intensity(u_prev_i, u_prev_j) -> float:
    """Negative squared distance between two previous-snapshot embeddings."""
    a = np.asarray(u_prev_i, dtype=np.float64)
    b = np.asarray(u_prev_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"embedding length mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return -float(diff @ diff)


def attention_scores(diffs, params):
    """Clamped pre-activations ``max(0, z . relu(W |diff|))`` per row."""
    hidden = np.maximum(np.abs(diffs) @ params.W.T, 0.0)
    return np.maximum(hidden @ params.z, 0.0)


def attention_weights(history, params: HawkesParams) -> np.ndarray:
    """Normalized attention over ``[(u_i(t_h), u_h(t_h)), ...]``.

    Falls back to uniform weights when every pre-activation is zero.
    """
    if len(history) == 0:
        raise ValidationError("attention needs at least one history entry")
    ui = np.array([np.asarray(a, dtype=np.float64) for a, _ in history])
    uh = np.array([np.asarray(b, dtype=np.float64) for _, b in history])
    if ui.shape != uh.shape or ui.shape[1] != params.z.shape[0]:
        raise ValidationError("history vectors must all have length d")
    a = attention_scores(ui - uh, params)
    total = a.sum()
    if total <= 0:
        return np.full(len(a), 1.0 / len(a))
    return a / total


def conditional_intensity(i, j, t, emb: EmbeddingSequence, net: DynamicNetwork,
                          params: HawkesParams, h) -> IntensityBreakdown:
    if t < 2:
        raise ValidationError("intensity needs t >= 2 (base uses snapshot t-1)")
    if i == j:
        raise ValidationError("intensity of a self-pair is undefined")
    base = base_intensity(emb.at(t - 1)[i], emb.at(t - 1)[j])
    nb, th, _ = net.history_arrays(i, t, h)
    excitation = 0.0
    if len(nb):
        alpha = attention_weights(
            [(emb.at(s)[i], emb.at(s)[n]) for n, s in zip(nb, th)], params
        )
        delta = params.delta[i]
        for a, n, s in zip(alpha, nb, th):
            g = base_intensity(emb.at(s)[n], emb.at(s)[j])
            excitation += a * g * decay_kernel(params.kernel, delta, t - s)
    raw = base + excitation
    return IntensityBreakdown(base, float(excitation), float(raw), float(np.exp(raw)))


def edge_probability(intensities) -> np.ndarray:
    """Normalize positive transferred intensities over a candidate set."""
    lam = np.asarray(intensities, dtype=np.float64)
    if lam.size == 0:
        raise ValidationError("edge probability needs at least one candidate")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValidationError("transferred intensities must be finite and positive")
    return lam / lam.sum()


def edge_probability_from_raw(raw) -> np.ndarray:
    """Same as :func:`edge_probability` on ``exp(raw)``, without overflow."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValidationError("edge probability needs at least one candidate")
    e = np.exp(raw - raw.max())
    return e / e.sum()


class HistoryIndex:
    """Flattened historical-neighbor lists for every ``(t, i)`` with ``t >= 2``.

    Entries for key ``(t, i)`` live at ``offsets[t, i] : offsets[t, i + 1]``
    of ``neighbor`` / ``time`` (flat layout ``t * N + i``).
    """

    def __init__(self, net: DynamicNetwork, h: int):
        if h < 1:
            raise ValidationError("history window must be >= 1")
        N, T = net.vertex_count, net.T
        self.net = net
        self.h = h
        counts = np.zeros((T + 1) * N, dtype=np.int64)
        nbs, tss = [], []
        for t in range(2, T + 1):
            for i in range(N):
                nb, ts, _ = net.history_arrays(i, t, h)
                counts[t * N + i] = len(nb)
                nbs.append(nb)
                tss.append(ts)
        self.offsets = np.zeros(counts.size + 1, dtype=np.int64)
        np.cumsum(counts, out=self.offsets[1:])
        self.neighbor = np.concatenate(nbs) if nbs else np.zeros(0, dtype=np.int64)
        self.time = np.concatenate(tss) if tss else np.zeros(0, dtype=np.int64)
        self.N = N

    def span(self, t, i):
        k = t * self.N + i
        return self.offsets[k], self.offsets[k + 1]


def _ranges(starts, stops):
    """Concatenation of ``arange(a, b)`` for each pair plus the owning row."""
    lengths = stops - starts
    total = int(lengths.sum())
    owner = np.repeat(np.arange(len(starts)), lengths)
    if total == 0:
        return np.zeros(0, dtype=np.int64), owner
    base = np.repeat(starts - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
    return base + np.arange(total), owner


def _rowdot(a, b):
    return np.einsum("rd,rd->r", a, b)


def raw_intensity_batch(U, params: HawkesParams, index: HistoryIndex, src, cand, t,
                        upstream=None):
    """Vectorized raw intensities for candidate pairs ``(src[r], cand[r], t[r])``.

    ``U`` is the ``(T, N, d)`` embedding array.  Returns ``(raw, base,
    excitation)``; when ``upstream`` (the loss derivative per row, or a
    callable mapping ``raw`` to it) is given, a fourth item holds the gradients ``(dU, dW, dz, dtheta)`` of
    ``sum(upstream * raw)``.

    History entries of a source are pooled per elapsed-time slot, using
    ``|a - c|^2 = |a|^2 - 2 a.c + |c|^2``, so the cost per candidate is
    ``O(h d)`` rather than ``O(|history| d)``.
    """
    src = np.asarray(src, dtype=np.int64)
    cand = np.asarray(cand, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    T, N, d = U.shape
    h = index.h
    flat = U.reshape(T * N, d)
    if np.any(t < 2):
        raise ValidationError("intensity needs t >= 2")

    # base term, from snapshot t-1 (array row block t-2)
    prev_i = (t - 2) * N + src
    prev_c = (t - 2) * N + cand
    base_diff = flat[prev_i] - flat[prev_c]
    base = -_rowdot(base_diff, base_diff)

    # history entries of every distinct source key (t, i)
    keys = t * N + src
    ukeys, key_of_row = np.unique(keys, return_inverse=True)
    key_of_row = key_of_row.reshape(-1)
    key_t = ukeys // N
    key_i = ukeys % N
    hist, hist_key = _ranges(index.offsets[ukeys], index.offsets[ukeys + 1])
    h_nb = index.neighbor[hist]
    h_t = index.time[hist]
    row_hi = (h_t - 1) * N + key_i[hist_key]
    row_hh = (h_t - 1) * N + h_nb
    dt = key_t[hist_key] - h_t

    # attention
    uh = np.take(flat, row_hh, axis=0)
    att_diff = np.take(flat, row_hi, axis=0)
    att_diff -= uh
    absdiff = np.abs(att_diff)
    hidden = absdiff @ params.W.T
    np.maximum(hidden, 0.0, out=hidden)
    score = hidden @ params.z
    active = score > 0
    a = np.where(active, score, 0.0)
    n_keys = len(ukeys)
    totals = np.bincount(hist_key, weights=a, minlength=n_keys)
    counts = np.bincount(hist_key, minlength=n_keys)
    uniform = totals[hist_key] <= 0
    denom = np.where(uniform, 1.0, totals[hist_key])
    alpha = np.where(uniform, 1.0 / np.maximum(counts[hist_key], 1), a / denom)

    # kernel and pooled slots (key, dt)
    delta = np.exp(params.theta[key_i[hist_key]])
    kappa = np.atleast_1d(decay_kernel(params.kernel, delta, dt)) if len(dt) else np.zeros(0)
    w = alpha * kappa
    uh_sq = _rowdot(uh, uh)
    slot = hist_key * h + (dt - 1)
    n_slots = n_keys * h
    slot_mat = sparse.csr_matrix((w, (slot, np.arange(len(slot)))), shape=(n_slots, len(slot)))
    A = np.asarray(slot_mat @ uh) if len(slot) else np.zeros((n_slots, d))
    B = np.bincount(slot, weights=w, minlength=n_slots)
    C = np.bincount(hist_key, weights=w * uh_sq, minlength=n_keys)

    # expand candidate rows over occupied slots of their key
    occupied = np.bincount(slot, minlength=n_slots) > 0
    row_slots = key_of_row[:, None] * h + np.arange(h)[None, :]
    ok = occupied[row_slots]
    e_row, e_dt0 = np.nonzero(ok)
    e_slot = row_slots[e_row, e_dt0]
    e_urow = (t[e_row] - e_dt0 - 2) * N + cand[e_row]
    uc = np.take(flat, e_urow, axis=0)
    uc_sq = _rowdot(uc, uc)
    Ae = np.take(A, e_slot, axis=0)
    B_e = B[e_slot]
    contrib = 2.0 * _rowdot(Ae, uc) - B_e * uc_sq
    excitation = np.bincount(e_row, weights=contrib, minlength=len(src))
    has_hist = counts[key_of_row] > 0
    excitation = np.where(has_hist, excitation - C[key_of_row], 0.0)
    raw = base + excitation
    if upstream is None:
        return raw, base, excitation

    s = np.asarray(upstream(raw) if callable(upstream) else upstream, dtype=np.float64)
    dW = np.zeros_like(params.W)
    dz = np.zeros_like(params.z)
    dtheta = np.zeros_like(params.theta)

    # pooled slots -> slot statistics
    se2 = 2.0 * s[e_row]
    dA = np.asarray(sparse.csr_matrix((se2, (e_slot, np.arange(len(e_slot)))),
                                      shape=(n_slots, len(e_slot))) @ uc)
    dB = np.bincount(e_slot, weights=-0.5 * se2 * uc_sq, minlength=n_slots)
    dC = -np.bincount(key_of_row, weights=s * has_hist, minlength=n_keys)

    # slot statistics -> history entries
    dw = _rowdot(np.take(dA, slot, axis=0), uh) + dB[slot] + dC[hist_key] * uh_sq
    dkappa = dw * alpha
    dtheta += np.bincount(key_i[hist_key],
                          weights=dkappa * decay_kernel_ddelta(params.kernel, delta, dt) * delta,
                          minlength=len(dtheta))

    # embedding gradients from the base term, the candidates and the pooled
    # history are linear in rows of U, A and dA: one sparse product
    n_u = T * N
    sb = 2.0 * s
    rows = np.concatenate([prev_i, prev_i, prev_c, prev_c, e_urow, e_urow, row_hh, row_hh])
    cols = np.concatenate([prev_i, prev_c, prev_c, prev_i, e_urow, n_u + e_slot,
                           row_hh, n_u + n_slots + slot])
    vals = np.concatenate([-sb, sb, -sb, sb, -se2 * B_e, se2, 2.0 * w * dC[hist_key], w])
    M = sparse.csr_matrix((vals, (rows, cols)), shape=(n_u, n_u + 2 * n_slots))
    dU = np.asarray(M @ np.concatenate([flat, A, dA]))

    # attention backward, only where the normalized score depends on it
    dalpha = dw * kappa
    mean_term = np.bincount(hist_key, weights=dalpha * alpha, minlength=n_keys)
    da = np.where(uniform | ~active, 0.0, (dalpha - mean_term[hist_key]) / denom)
    dz += hidden.T @ da
    nz = np.flatnonzero(da)
    if len(nz):
        dpre = np.outer(da[nz], params.z)
        dpre *= hidden[nz] > 0
        dW += dpre.T @ absdiff[nz]
        datt = dpre @ params.W
        datt *= np.sign(att_diff[nz])
        sign = np.concatenate([np.ones(len(nz)), -np.ones(len(nz))])
        at = sparse.csr_matrix((sign, (np.concatenate([row_hi[nz], row_hh[nz]]),
                                       np.tile(np.arange(len(nz)), 2))), shape=(n_u, len(nz)))
        dU += at @ datt

    return raw, base, excitation, (dU.reshape(T, N, d), dW, dz, dtheta)
