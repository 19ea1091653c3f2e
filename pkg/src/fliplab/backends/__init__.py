"""Episode backends: a compiled single-resource kernel and a NumPy reference."""

from .dispatch import available_backends, resolve_backend, simulate
from .types import ActorDesc, BatchResult, LearnerRollout

__all__ = [
    "ActorDesc", "BatchResult", "LearnerRollout",
    "available_backends", "resolve_backend", "simulate",
]
