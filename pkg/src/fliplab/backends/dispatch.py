"""Backend selection: compiled single-resource kernel or NumPy reference.

Selection order for each call: explicit ``backend=`` argument, then the
``FLIPLAB_BACKEND`` environment variable (``compiled``/``python``/``auto``),
then the compiled kernel whenever it is importable and the game fits it.
Both backends share the per-role RNG streams, so which one runs never changes
heuristic-vs-heuristic results.
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import python_backend
from .types import BatchResult

try:
    from . import compiled_backend as _compiled
except ImportError:  # pragma: no cover - depends on the built extension
    _compiled = None


def available_backends() -> tuple[str, ...]:
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return tuple(names)


def resolve_backend(config, backend: str | None = None) -> str:
    """Name of the backend a ``simulate`` call would use for this game."""
    choice = backend or os.environ.get("FLIPLAB_BACKEND") or "auto"
    if choice == "python":
        return "python"
    if choice == "compiled":
        if _compiled is None:
            raise ConfigError("compiled backend requested but the extension is not built")
        if not _compiled.supports(config):
            raise ConfigError("compiled backend handles single-resource games only")
        return "compiled"
    if choice != "auto":
        raise ConfigError(f"unknown backend {choice!r}; use compiled, python, or auto")
    if _compiled is not None and _compiled.supports(config):
        return "compiled"
    return "python"


def simulate(config, defender, attacker, episode_keys, want_trace: bool = False,
             learner_side: int | None = None, backend: str | None = None) -> BatchResult:
    """Run a batch of episodes of one matchup on the selected backend."""
    name = resolve_backend(config, backend)
    impl = _compiled if name == "compiled" else python_backend
    return impl.simulate(config, defender, attacker, episode_keys,
                         want_trace=want_trace, learner_side=learner_side)
