"""Offline handwritten text-line recognition with a transducer model,
implemented from scratch on top of numpy: exact log-space lattice loss,
hand-derived gradients, greedy decoding, and a synthetic-data training
pipeline."""

__version__ = "0.1.0"
