"""Versioned plain-text checkpoints of trained embeddings and parameters.

Layout (tab-separated header, then numeric sections)::

    DYNHAWKES-CHECKPOINT	1
    dim	<d>
    N	<N>
    T	<T>
    kernel	<name>
    epoch	<n>
    config	<json>
    [U]		T*N rows of d values, snapshot-major
    [W]		d rows
    [z]		1 row
    [theta]	1 row
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import CheckpointError
from .intensity import EmbeddingSequence, HawkesParams
from .training import TrainingState

MAGIC = "DYNHAWKES-CHECKPOINT"
VERSION = 1


def _row(values) -> str:
    return "\t".join(repr(float(v)) for v in values)


def dumps(state: TrainingState, config: dict) -> str:
    U = state.emb.vectors
    T, N, d = U.shape
    lines = [
        f"{MAGIC}\t{VERSION}",
        f"dim\t{d}",
        f"N\t{N}",
        f"T\t{T}",
        f"kernel\t{state.params.kernel}",
        f"epoch\t{state.epoch}",
        f"config\t{json.dumps(config, sort_keys=True)}",
        "[U]",
    ]
    lines.extend(_row(r) for r in U.reshape(T * N, d))
    lines.append("[W]")
    lines.extend(_row(r) for r in state.params.W)
    lines.append("[z]")
    lines.append(_row(state.params.z))
    lines.append("[theta]")
    lines.append(_row(state.params.theta))
    return "\n".join(lines) + "\n"


def save(path, state: TrainingState, config: dict):
    """Write atomically: a temporary file in the target directory is renamed."""
    text = dumps(state, config)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Checkpoint:
    def __init__(self, state: TrainingState, config: dict):
        self.state = state
        self.config = config

    @property
    def dim(self):
        return self.state.emb.dim

    @property
    def N(self):
        return self.state.emb.N

    @property
    def T(self):
        return self.state.emb.T


def _floats(line, n, what):
    parts = line.split("\t") if line else []
    if len(parts) != n:
        raise CheckpointError(f"{what}: expected {n} values, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise CheckpointError(f"{what}: {exc}") from None


def loads(text: str) -> Checkpoint:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic header)")
    try:
        version = int(lines[0].split("\t")[1])
    except (IndexError, ValueError):
        raise CheckpointError("unreadable checkpoint version") from None
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    header = {}
    k = 1
    while k < len(lines) and not lines[k].startswith("["):
        key, _, value = lines[k].partition("\t")
        header[key] = value
        k += 1
    try:
        d, N, T = int(header["dim"]), int(header["N"]), int(header["T"])
        kernel = header["kernel"]
        epoch = int(header.get("epoch", "0"))
        config = json.loads(header.get("config", "{}"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint header: {exc}") from None

    def section(name, rows, width):
        nonlocal k
        if k >= len(lines) or lines[k] != f"[{name}]":
            raise CheckpointError(f"missing section [{name}]")
        k += 1
        if k + rows > len(lines):
            raise CheckpointError(f"section [{name}] truncated")
        out = [_floats(lines[k + r], width, f"[{name}] row {r}") for r in range(rows)]
        k += rows
        return np.array(out, dtype=np.float64).reshape(rows, width)

    U = section("U", T * N, d).reshape(T, N, d)
    W = section("W", d, d)
    z = section("z", 1, d)[0]
    theta = section("theta", 1, N)[0]
    if k != len(lines):
        raise CheckpointError("trailing data after [theta]")
    params = HawkesParams(W, z, theta, kernel)
    state = TrainingState(EmbeddingSequence(U), params, epoch=epoch)
    return Checkpoint(state, config)


def load(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
