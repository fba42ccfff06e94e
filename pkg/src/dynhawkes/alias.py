"""Vose's alias method for O(1) draws from a fixed discrete distribution."""

import numpy as np

from .errors import ValidationError


class AliasTable:
    """Alias table over outcomes ``0 .. n-1``.

    Built in O(n) from non-negative weights; each draw costs one uniform
    integer and one uniform real.
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValidationError("alias table needs a non-empty 1-D weight vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("alias weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise ValidationError("alias weights sum to zero")

        n = w.size
        self.probabilities = w / total
        scaled = self.probabilities * n
        prob = np.zeros(n)
        alias = np.arange(n)

        small = [k for k in range(n) if scaled[k] < 1.0]
        large = [k for k in range(n) if scaled[k] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are 1 up to rounding
        fallback = int(np.argmax(self.probabilities))
        for k in large + small:
            if self.probabilities[k] > 0:
                prob[k] = 1.0
                alias[k] = k
            else:
                prob[k] = 0.0
                alias[k] = fallback

        self._prob = prob
        self._alias = alias

    def __len__(self):
        return self._prob.size

    def sample(self, rng, size=None):
        """Draw outcome indices using a ``numpy.random.Generator``."""
        n = self._prob.size
        if size is None:
            k = int(rng.integers(n))
            return k if rng.random() < self._prob[k] else int(self._alias[k])
        idx = rng.integers(n, size=size)
        keep = rng.random(size) < self._prob[idx]
        return np.where(keep, idx, self._alias[idx])
