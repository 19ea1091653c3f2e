"""Policy and value networks: two small two-hidden-layer tanh perceptrons.

The actor (policy) and critic (value) are separate networks with identical
trunk shapes. Keeping them separate matters here: value-regression targets
span roughly ±50, so on a shared trunk the value gradient dominates feature
learning and the policy head is left with value-shaped features — while
shrinking the value weight instead starves the critic and with it the
bootstrapped credit assignment that multi-step strategies need.

Parameters live in float64 NumPy arrays. The observation is one-hot with
exactly two active cells per resource, so single-step forward passes sum the
corresponding first-layer columns instead of doing a full matvec. Both
backends follow the same accumulation order (active columns in cell order,
then the bias) so their activations agree to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import Action, decode_action
from ..engine import active_cells as _active_cells


@dataclass
class NetworkParams:
    # policy network
    w1: np.ndarray  # (h1, obs_dim)
    b1: np.ndarray
    w2: np.ndarray  # (h2, h1)
    b2: np.ndarray
    wp: np.ndarray  # (action_dim, h2)
    bp: np.ndarray
    # value network (same trunk shape, independent parameters)
    v1: np.ndarray  # (h1, obs_dim)
    c1: np.ndarray
    v2: np.ndarray  # (h2, h1)
    c2: np.ndarray
    wv: np.ndarray  # (h2,)
    bv: np.ndarray  # (1,)

    @property
    def obs_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def action_dim(self) -> int:
        return self.wp.shape[0]

    @property
    def hidden(self) -> tuple[int, int]:
        return (self.w1.shape[0], self.w2.shape[0])

    def names(self):
        return ("w1", "b1", "w2", "b2", "wp", "bp",
                "v1", "c1", "v2", "c2", "wv", "bv")

    def tensors(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.wp, self.bp,
                self.v1, self.c1, self.v2, self.c2, self.wv, self.bv]

    def copy(self) -> "NetworkParams":
        return NetworkParams(*[t.copy() for t in self.tensors()])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(*[np.zeros_like(t) for t in self.tensors()])

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def assign_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for t in self.tensors():
            n = t.size
            t[...] = vec[pos:pos + n].reshape(t.shape)
            pos += n
        assert pos == len(vec)


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def init_network(obs_dim: int, action_dim: int, hidden=(64, 64), seed=0) -> NetworkParams:
    """Orthogonal init, sqrt(2) gain on the trunk, near-zero heads."""
    from ..seeding import TAG_INIT, stream

    if isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = stream((seed, TAG_INIT))
    h1, h2 = hidden
    root2 = float(np.sqrt(2.0))
    return NetworkParams(
        w1=_orthogonal(rng, h1, obs_dim, root2),
        b1=np.zeros(h1),
        w2=_orthogonal(rng, h2, h1, root2),
        b2=np.zeros(h2),
        wp=_orthogonal(rng, action_dim, h2, 0.01),
        bp=np.zeros(action_dim),
        v1=_orthogonal(rng, h1, obs_dim, root2),
        c1=np.zeros(h1),
        v2=_orthogonal(rng, h2, h1, root2),
        c2=np.zeros(h2),
        wv=_orthogonal(rng, 1, h2, 0.01)[0],
        bv=np.zeros(1),
    )


# Policy logits are soft-clipped to [-LOGIT_BOUND, LOGIT_BOUND] via a scaled
# tanh.  Near zero the map is the identity, so early training is unaffected;
# at the extremes it caps how deterministic the policy can become, leaving a
# permanent exploration floor of e^(-2B)/(e^(-2B) + A - 1) per action
# (~0.3% for B=2.5, three actions) while still allowing ~99.9% peaks.
# Without the cap, an action whose probability hits ~0 early can never be
# resampled and stays extinct even when it later becomes valuable.
LOGIT_BOUND = 3.0


def bound_logits(u: np.ndarray) -> np.ndarray:
    """Soft-clip raw policy-head outputs to [-LOGIT_BOUND, LOGIT_BOUND]."""
    return LOGIT_BOUND * np.tanh(u / LOGIT_BOUND)


def forward_cells(params: NetworkParams, cells: np.ndarray):
    """Single-step forward from active cell indices.

    Returns (probs, logp, value): action probabilities, log-probabilities,
    and the state value.
    """
    z1 = params.w1[:, cells[0]].copy()
    for c in cells[1:]:
        z1 += params.w1[:, c]
    z1 += params.b1
    h1 = np.tanh(z1)
    h2 = np.tanh(params.w2 @ h1 + params.b2)
    logits = bound_logits(params.wp @ h2 + params.bp)
    y1 = params.v1[:, cells[0]].copy()
    for c in cells[1:]:
        y1 += params.v1[:, c]
    y1 += params.c1
    g1 = np.tanh(y1)
    g2 = np.tanh(params.v2 @ g1 + params.c2)
    value = float(params.wv @ g2 + params.bv[0])
    m = logits.max()
    shifted = logits - m
    ex = np.exp(shifted)
    total = ex.sum()
    probs = ex / total
    logp = shifted - np.log(total)
    return probs, logp, value


def forward_batch(params: NetworkParams, cell_idx: np.ndarray) -> dict:
    """Batched forward with cached activations for backprop.

    cell_idx has shape (N, 2R); the implied one-hot rows are never
    materialized.
    """
    w1t = params.w1.T
    z1 = w1t[cell_idx[:, 0]].copy()
    for k in range(1, cell_idx.shape[1]):
        z1 += w1t[cell_idx[:, k]]
    z1 += params.b1
    h1 = np.tanh(z1)
    z2 = h1 @ params.w2.T + params.b2
    h2 = np.tanh(z2)
    logits = bound_logits(h2 @ params.wp.T + params.bp)
    v1t = params.v1.T
    y1 = v1t[cell_idx[:, 0]].copy()
    for k in range(1, cell_idx.shape[1]):
        y1 += v1t[cell_idx[:, k]]
    y1 += params.c1
    g1 = np.tanh(y1)
    g2 = np.tanh(g1 @ params.v2.T + params.c2)
    values = g2 @ params.wv + params.bv[0]
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    ex = np.exp(shifted)
    total = ex.sum(axis=1, keepdims=True)
    logp = shifted - np.log(total)
    probs = ex / total
    return {"h1": h1, "h2": h2, "g1": g1, "g2": g2, "logits": logits,
            "logp": logp, "probs": probs, "values": values}


def sample_index(probs: np.ndarray, u: float) -> int:
    """Smallest index whose cumulative probability exceeds u."""
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


class NetPolicy:
    """Engine-protocol wrapper around NetworkParams.

    Stochastic by default (one uniform draw per step); greedy mode takes the
    argmax and consumes no randomness. After each act() the last cells,
    chosen action index, log-probability, and value stay readable, which is
    what the rollout collector uses.
    """

    def __init__(self, params: NetworkParams, memory_limit: int, greedy: bool = False):
        self.params = params
        self.memory_limit = memory_limit
        self.greedy = greedy
        self._rng = None
        self.last_cells = None
        self.last_index = 0
        self.last_logp = 0.0
        self.last_value = 0.0

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, knowledge) -> Action:
        cells = _active_cells(knowledge, self.memory_limit)
        probs, logp, value = forward_cells(self.params, cells)
        if self.greedy:
            a = int(np.argmax(probs))
        else:
            a = sample_index(probs, self._rng.random())
        self.last_cells = cells
        self.last_index = a
        self.last_logp = float(logp[a])
        self.last_value = value
        return decode_action(a, knowledge.num_resources)
