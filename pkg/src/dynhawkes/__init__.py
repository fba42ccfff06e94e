"""Dynamic network embedding driven by a Hawkes-process edge-formation model.

Modules:

* ``graph``: edge-list ingestion, snapshot bucketing, temporal adjacency.
* ``intensity``: decay kernels, attention, conditional intensities.
* ``training``: the joint objective, negative sampling, SGD, gradient checks.
* ``evaluation``: link prediction and recommendation harness.
* ``synth``: planted-partition generator with known dynamics.
* ``cli``: the ``dynhawkes`` command.
"""

from .errors import (
    CheckpointError,
    DivergenceError,
    DynHawkesError,
    ParseError,
    RejectedEdgeError,
    SamplingExhaustedError,
    ValidationError,
)
from .graph import DynamicNetwork, Snapshot, TemporalEdge, bucket_snapshots, ingest_edges
from .intensity import EmbeddingSequence, HawkesParams, conditional_intensity
from .synth import PlantedSpec, generate
from .training import TrainingConfig, TrainingState, gradient_check, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "DivergenceError",
    "DynHawkesError",
    "DynamicNetwork",
    "EmbeddingSequence",
    "HawkesParams",
    "ParseError",
    "PlantedSpec",
    "RejectedEdgeError",
    "SamplingExhaustedError",
    "Snapshot",
    "TemporalEdge",
    "TrainingConfig",
    "TrainingState",
    "ValidationError",
    "bucket_snapshots",
    "conditional_intensity",
    "generate",
    "gradient_check",
    "ingest_edges",
    "train",
]
