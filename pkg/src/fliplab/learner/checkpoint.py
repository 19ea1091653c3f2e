"""Versioned binary policy checkpoints with a JSON metadata sidecar.

Layout: 8-byte magic, then little-endian uint32s (format version, obs_dim,
action_dim, hidden-layer count, hidden sizes...), then every parameter
tensor in canonical order as little-endian float32, row-major. The sidecar
`<path>.json` carries provenance (opponents, seeds, epoch) and the SHA-256
of the binary file.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .network import NetworkParams

MAGIC = b"FLIPNET1"
FORMAT_VERSION = 2


@dataclass
class PolicyCheckpoint:
    params: NetworkParams
    meta: dict = field(default_factory=dict)

    @property
    def obs_dim(self) -> int:
        return self.params.obs_dim

    @property
    def action_dim(self) -> int:
        return self.params.action_dim


def _tensor_shapes(obs_dim: int, action_dim: int, hidden: tuple[int, int]):
    h1, h2 = hidden
    policy = [(h1, obs_dim), (h1,), (h2, h1), (h2,), (action_dim, h2),
              (action_dim,)]
    value = [(h1, obs_dim), (h1,), (h2, h1), (h2,), (h2,), (1,)]
    return policy + value


def save_checkpoint(path, params: NetworkParams, meta: dict | None = None) -> str:
    """Write the binary + sidecar; returns the content hash."""
    path = Path(path)
    hidden = params.hidden
    header = MAGIC + struct.pack("<4I", FORMAT_VERSION, params.obs_dim,
                                 params.action_dim, len(hidden))
    header += struct.pack(f"<{len(hidden)}I", *hidden)
    body = b"".join(np.asarray(t, dtype="<f4").tobytes(order="C")
                    for t in params.tensors())
    blob = header + body
    digest = hashlib.sha256(blob).hexdigest()
    path.write_bytes(blob)
    sidecar = {
        "format_version": FORMAT_VERSION,
        "obs_dim": params.obs_dim,
        "action_dim": params.action_dim,
        "hidden": list(hidden),
        "sha256": digest,
    }
    sidecar.update(meta or {})
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return digest


def load_checkpoint(path) -> PolicyCheckpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 16 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a policy checkpoint (bad magic)")
    off = len(MAGIC)
    version, obs_dim, action_dim, n_hidden = struct.unpack_from("<4I", blob, off)
    off += 16
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    if n_hidden != 2:
        raise CheckpointError(f"{path}: {n_hidden} hidden layers unsupported")
    if len(blob) < off + 4 * n_hidden:
        raise CheckpointError(f"{path}: truncated header")
    hidden = struct.unpack_from(f"<{n_hidden}I", blob, off)
    off += 4 * n_hidden

    shapes = _tensor_shapes(obs_dim, action_dim, hidden)
    need = sum(int(np.prod(s)) for s in shapes) * 4
    if len(blob) - off != need:
        raise CheckpointError(
            f"{path}: body holds {len(blob) - off} bytes, expected {need}")
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        off += count * 4
        tensors.append(arr.astype(np.float64).reshape(shape))
    params = NetworkParams(*tensors)

    meta = {}
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable sidecar {sidecar}: {exc}") from exc
        stored = meta.get("sha256")
        if stored and stored != hashlib.sha256(blob).hexdigest():
            raise CheckpointError(f"{path}: content hash does not match sidecar")
    return PolicyCheckpoint(params=params, meta=meta)
