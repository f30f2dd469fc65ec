"""Toy neural Born series operator for the frequency-domain wave toolkit.

The package trains a small spectral operator network on wavefield datasets
produced by ``usct gen-dataset``, evaluates it against held-out phantoms,
and drives a surrogate-based speed-of-sound inversion whose measurements,
fields, and scores all flow through the toolkit's published interfaces.
"""
from .containers import ContainerFormatError, read_array, write_array
from .dataset import (
    GridGeometry,
    ToyWavefieldDataset,
    channels_to_complex,
    complex_to_channels,
    incident_fields,
    ring_positions,
    split_by_phantom,
)
from .fwi import (
    SurrogateFwiOptions,
    SurrogateProblem,
    SurrogateTrace,
    surrogate_reconstruct,
)
from .model import Nbso, NbsoConfig, NbsoLayer, SpectralFilter, relative_l2
from .training import (
    TrainReport,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ContainerFormatError",
    "GridGeometry",
    "Nbso",
    "NbsoConfig",
    "NbsoLayer",
    "SpectralFilter",
    "SurrogateFwiOptions",
    "SurrogateProblem",
    "SurrogateTrace",
    "ToyWavefieldDataset",
    "TrainReport",
    "channels_to_complex",
    "complex_to_channels",
    "incident_fields",
    "load_checkpoint",
    "read_array",
    "relative_l2",
    "ring_positions",
    "save_checkpoint",
    "split_by_phantom",
    "surrogate_reconstruct",
    "train",
    "write_array",
]
