"""Rule-based agents and the spec-string grammar that names them.

Spec strings look like `periodic:phase=4,delay=random` or `awake:lambda=0.05`.
Supported kinds:

  sleep                          never acts
  random:p=0.33                  flips with fixed probability each step
  periodic:phase=P,delay=D       flips at D, D+P, D+2P, ...
  burst:phase=P,delay=D,burst=B  after D, repeats B flips then P-1 sleeps
  awake:lambda=L                 flips with hazard 1-exp(-L*t), t steps since
                                 its last flip (t=0 at episode start)
  reta:phase=P                   periodic flipper that shortens its phase when
                                 its own flips reveal it had lost the resource
  pc:phase=P,delay=D             checks at schedule slots; after a check sees
                                 the opponent owning, flips at the next slot
  pac:phase=P                    like pc with delay 0, but flips on the very
                                 next step after a detection
  upac                           alias for pac:phase=1

`delay=random` redraws the delay uniformly from {0..phase-1} at every episode
reset. Policies receive their generator through reset(rng); Random and
Awakening draw once per resource per step, schedule agents draw only the
random delay, so streams stay aligned across implementations.

With several resources the per-resource rule state is kept independently and
one action per step is arbitrated to the firing resource that acted least
recently (ties to the lowest index); detection-driven flips stay pending until
actually executed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import SLEEP, Action, ActionType, KnowledgeState
from .errors import SpecError
from .seeding import stream

RANDOM_DELAY = "random"

_KINDS = ("sleep", "random", "periodic", "burst", "awake", "reta", "pc", "pac")


@dataclass(frozen=True)
class HeuristicSpec:
    kind: str
    phase: int | None = None
    delay: int | str | None = None
    burst: int | None = None
    rate: float | None = None
    flip_prob: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise SpecError(f"unknown heuristic kind {self.kind!r}")
        if self.kind in ("periodic", "burst", "reta", "pc", "pac"):
            if self.phase is None or self.phase < 1:
                raise SpecError(f"{self.kind} needs phase >= 1, got {self.phase!r}")
        if self.delay is not None:
            if self.delay != RANDOM_DELAY and (not isinstance(self.delay, int) or self.delay < 0):
                raise SpecError(f"delay must be a non-negative int or 'random', got {self.delay!r}")
        if self.kind == "burst":
            if self.burst is None or self.burst < 1:
                raise SpecError("burst needs burst >= 1")
            if self.burst > self.phase:
                raise SpecError(
                    f"burst={self.burst} exceeds phase={self.phase}; the pattern would never sleep"
                )
        if self.kind == "awake":
            if self.rate is None or not (self.rate > 0) or not math.isfinite(self.rate):
                raise SpecError(f"awake needs a positive finite lambda, got {self.rate!r}")
        if self.kind == "random":
            if self.flip_prob is None or not 0.0 <= self.flip_prob <= 1.0:
                raise SpecError(f"random needs p in [0, 1], got {self.flip_prob!r}")

    def canonical(self) -> str:
        if self.kind == "sleep":
            return "sleep"
        if self.kind == "random":
            return f"random:p={self.flip_prob!r}"
        if self.kind == "awake":
            return f"awake:lambda={self.rate!r}"
        if self.kind == "reta":
            return f"reta:phase={self.phase}"
        if self.kind == "pac":
            return f"pac:phase={self.phase}"
        delay = self.delay if self.delay is not None else 0
        if self.kind == "periodic":
            return f"periodic:phase={self.phase},delay={delay}"
        if self.kind == "pc":
            return f"pc:phase={self.phase},delay={delay}"
        return f"burst:phase={self.phase},delay={delay},burst={self.burst}"


def _parse_value(key: str, raw: str):
    if raw == RANDOM_DELAY:
        return RANDOM_DELAY
    try:
        if key in ("phase", "delay", "burst"):
            return int(raw)
        return float(raw)
    except ValueError:
        raise SpecError(f"bad value {raw!r} for {key!r}") from None


def parse_spec(text: str) -> HeuristicSpec:
    """Parse a spec string. Raises SpecError naming the offending token."""
    text = text.strip()
    if not text:
        raise SpecError("empty agent spec")
    head, _, tail = text.partition(":")
    head = head.strip().lower()
    if head == "upac":
        if tail:
            raise SpecError("upac takes no parameters")
        return HeuristicSpec("pac", phase=1)
    if head not in _KINDS:
        raise SpecError(f"unknown heuristic kind {head!r} in {text!r}")
    fields: dict = {}
    if tail:
        for token in tail.split(","):
            key, eq, raw = token.partition("=")
            key = key.strip().lower()
            if not eq or not raw.strip():
                raise SpecError(f"malformed token {token!r} in {text!r}")
            value = _parse_value(key, raw.strip())
            if key == "lambda":
                fields["rate"] = value
            elif key == "p":
                fields["flip_prob"] = value
            elif key in ("phase", "delay", "burst"):
                fields[key] = value
            else:
                raise SpecError(f"unknown parameter {key!r} in {text!r}")
    if head == "random":
        fields.setdefault("flip_prob", 0.33)
    if head == "awake":
        fields.setdefault("rate", 0.05)
    if head in ("periodic", "burst", "pc"):
        fields.setdefault("delay", 0)
    allowed = {
        "sleep": set(),
        "random": {"flip_prob"},
        "periodic": {"phase", "delay"},
        "burst": {"phase", "delay", "burst"},
        "awake": {"rate"},
        "reta": {"phase"},
        "pc": {"phase", "delay"},
        "pac": {"phase"},
    }[head]
    extra = set(fields) - allowed
    if extra:
        raise SpecError(f"{head} does not accept {sorted(extra)} in {text!r}")
    return HeuristicSpec(head, **fields)


class HeuristicPolicy:
    """Shared plumbing: reset/act protocol, delay resolution, arbitration."""

    def __init__(self, spec: HeuristicSpec):
        self.spec = spec
        self._rng: np.random.Generator | None = None
        self._step = 0
        self._nr = 0
        self._last_acted: np.ndarray | None = None
        self._delay = 0

    def reset(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self._step = 0
        self._nr = 0
        self._last_acted = None
        if self.spec.delay == RANDOM_DELAY:
            self._delay = int(rng.random() * self.spec.phase)
        elif self.spec.delay is not None:
            self._delay = int(self.spec.delay)
        else:
            self._delay = 0
        self._reset_state()

    def _reset_state(self) -> None:
        pass

    def _alloc(self, nr: int) -> None:
        pass

    def _desires(self, knowledge: KnowledgeState) -> list:
        raise NotImplementedError

    def _after(self, chosen) -> None:
        pass

    def act(self, knowledge: KnowledgeState) -> Action:
        if self._rng is None:
            raise RuntimeError("policy used before reset()")
        if self._nr != knowledge.num_resources:
            self._nr = knowledge.num_resources
            self._last_acted = np.full(self._nr, -1, dtype=np.int64)
            self._alloc(self._nr)
        desires = self._desires(knowledge)
        chosen = None
        if desires:
            r, kind = min(desires, key=lambda d: (self._last_acted[d[0]], d[0]))
            chosen = (r, kind)
            self._last_acted[r] = self._step
        self._after(chosen)
        self._step += 1
        return Action(chosen[1], chosen[0]) if chosen else SLEEP


class SleepOnlyPolicy(HeuristicPolicy):
    def _desires(self, knowledge):
        return []


class RandomFlipPolicy(HeuristicPolicy):
    def _desires(self, knowledge):
        p = self.spec.flip_prob
        out = []
        for r in range(self._nr):
            if self._rng.random() < p:
                out.append((r, ActionType.FLIP))
        return out


class PeriodicPolicy(HeuristicPolicy):
    def _desires(self, knowledge):
        pos = self._step - self._delay
        if pos >= 0 and pos % self.spec.phase == 0:
            return [(r, ActionType.FLIP) for r in range(self._nr)]
        return []


class BurstPolicy(HeuristicPolicy):
    # Cycle after the delay: `burst` flips, then phase-1 sleeps.
    def _desires(self, knowledge):
        pos = self._step - self._delay
        if pos >= 0 and pos % (self.spec.burst + self.spec.phase - 1) < self.spec.burst:
            return [(r, ActionType.FLIP) for r in range(self._nr)]
        return []


class AwakeningPolicy(HeuristicPolicy):
    # The clock counts completed steps after the last flip, so the decision
    # right after a flip sees t=0 again; episode start behaves like a flip at
    # step -1. Flipping twice in a row is therefore impossible.
    def _alloc(self, nr):
        self._t_since = np.zeros(nr, dtype=np.int64)

    def _desires(self, knowledge):
        out = []
        for r in range(self._nr):
            u = self._rng.random()
            p = 1.0 - math.exp(-self.spec.rate * self._t_since[r])
            if u < p:
                out.append((r, ActionType.FLIP))
        return out

    def _after(self, chosen):
        self._t_since += 1
        if chosen is not None:
            self._t_since[chosen[0]] = 0


class RetaliatingPolicy(HeuristicPolicy):
    """Periodic flipper whose effective phase reacts to what its flips reveal.

    A flip reveal showing the opponent owning, or showing a recapture that
    happened this very step, means control had been lost: the effective phase
    halves (floored, clamped to max(1, phase//2)). A reveal showing quietly
    held control relaxes it by one, up to the starting phase.
    """

    def _reset_state(self):
        self._min_eff = max(1, self.spec.phase // 2)

    def _alloc(self, nr):
        self._eff = np.full(nr, self.spec.phase, dtype=np.int64)
        self._next_flip = np.zeros(nr, dtype=np.int64)
        self._await = np.zeros(nr, dtype=bool)
        self._flip_step = np.full(nr, -1, dtype=np.int64)

    def _desires(self, knowledge):
        me, opp = knowledge.player, knowledge.opponent
        for r in range(self._nr):
            if not self._await[r]:
                continue
            owner = knowledge.observed_owner[r]
            recaptured = (owner == me
                          and knowledge.observed_capture_age[r] == knowledge.own_flip_age[r]
                          and self._flip_step[r] > 0)
            if owner == opp or recaptured:
                self._eff[r] = max(self._min_eff, self._eff[r] // 2)
            else:
                self._eff[r] = min(self.spec.phase, self._eff[r] + 1)
            self._next_flip[r] = self._flip_step[r] + self._eff[r]
            self._await[r] = False
        return [(r, ActionType.FLIP) for r in range(self._nr)
                if self._step >= self._next_flip[r]]

    def _after(self, chosen):
        if chosen is not None:
            self._await[chosen[0]] = True
            self._flip_step[chosen[0]] = self._step


class PeriodicCheckPolicy(HeuristicPolicy):
    """Checks on a schedule; a detection turns the next slot into a Flip."""

    def _alloc(self, nr):
        self._pending = np.zeros(nr, dtype=bool)
        self._await_check = np.zeros(nr, dtype=bool)

    def _slot(self):
        pos = self._step - self._delay
        return pos >= 0 and pos % self.spec.phase == 0

    def _desires(self, knowledge):
        for r in range(self._nr):
            if self._await_check[r]:
                if knowledge.observed_owner[r] == knowledge.opponent:
                    self._pending[r] = True
                self._await_check[r] = False
        if not self._slot():
            return []
        return [(r, ActionType.FLIP if self._pending[r] else ActionType.CHECK)
                for r in range(self._nr)]

    def _after(self, chosen):
        if chosen is None:
            return
        r, kind = chosen
        if kind == ActionType.FLIP:
            self._pending[r] = False
        else:
            self._await_check[r] = True


class AggressiveCheckPolicy(HeuristicPolicy):
    """Checks on a schedule; a detection triggers a Flip on the next step.

    Unlike PeriodicCheck, every own reveal feeds detection: when the recapture
    flip itself shows the opponent still holding (a simultaneous contest), the
    agent flips again on the following step instead of waiting for a slot.
    """

    def _alloc(self, nr):
        self._await_reveal = np.zeros(nr, dtype=bool)
        self._flip_at = np.full(nr, -1, dtype=np.int64)

    def _desires(self, knowledge):
        for r in range(self._nr):
            if self._await_reveal[r]:
                if knowledge.observed_owner[r] == knowledge.opponent:
                    self._flip_at[r] = self._step
                self._await_reveal[r] = False
        out = []
        on_slot = self._step % self.spec.phase == 0
        for r in range(self._nr):
            if self._flip_at[r] >= 0 and self._step >= self._flip_at[r]:
                out.append((r, ActionType.FLIP))
            elif on_slot:
                out.append((r, ActionType.CHECK))
        return out

    def _after(self, chosen):
        if chosen is None:
            return
        r, kind = chosen
        if kind == ActionType.FLIP:
            self._flip_at[r] = -1
        self._await_reveal[r] = True


_POLICY_CLASSES = {
    "sleep": SleepOnlyPolicy,
    "random": RandomFlipPolicy,
    "periodic": PeriodicPolicy,
    "burst": BurstPolicy,
    "awake": AwakeningPolicy,
    "reta": RetaliatingPolicy,
    "pc": PeriodicCheckPolicy,
    "pac": AggressiveCheckPolicy,
}


def make_heuristic(spec: HeuristicSpec | str, seed=None) -> HeuristicPolicy:
    """Instantiate the policy for a spec (string or HeuristicSpec).

    The policy still expects reset(rng) before play; passing a seed here only
    pre-seeds it for direct poking in tests and scripts.
    """
    if isinstance(spec, str):
        spec = parse_spec(spec)
    policy = _POLICY_CLASSES[spec.kind](spec)
    if seed is not None:
        policy.reset(stream(seed))
    return policy


def grammar_help() -> str:
    """One-line-per-kind grammar summary, used by the CLI help text."""
    return "\n".join([
        "agent spec grammar:",
        "  sleep",
        "  random:p=0.33",
        "  periodic:phase=4,delay=random   (delay: int or 'random', default 0)",
        "  burst:phase=8,delay=random,burst=3",
        "  awake:lambda=0.05",
        "  reta:phase=4",
        "  pc:phase=4,delay=random",
        "  pac:phase=4",
        "  upac   (alias for pac:phase=1)",
    ])
