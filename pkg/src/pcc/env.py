"""Multi-example execution state: v value slots tracked in lockstep across the
example set, with stepping, slot dropping, a solution test, and a collision-
resistant fingerprint for beam deduplication."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

from .dsl import (
    Failure,
    FailReason,
    Kind,
    Statement,
    Value,
    apply_operator,
    kind_of,
    value_in_range,
)


class EnvError(Exception):
    pass


class InconsistentExamplesError(EnvError):
    """Examples of one problem disagree on input kinds."""


class NoFreeSlotError(EnvError):
    """step_environment called with every slot live."""


class NotLiveError(EnvError):
    """drop_variable called on a NULL slot."""


@dataclass(frozen=True)
class Example:
    inputs: tuple
    output: Value


def value_from_json(obj) -> Value:
    if isinstance(obj, bool):
        raise ValueError("booleans are not values")
    if isinstance(obj, int):
        value: Value = obj
    elif isinstance(obj, list):
        if not all(isinstance(x, int) and not isinstance(x, bool) for x in obj):
            raise ValueError(f"list value must hold integers: {obj!r}")
        value = tuple(obj)
    else:
        raise ValueError(f"not a value: {obj!r}")
    if not value_in_range(value):
        raise ValueError(f"value out of domain: {obj!r}")
    return value


def value_to_json(value: Value):
    return value if isinstance(value, int) else list(value)


def example_from_json(obj: dict) -> Example:
    inputs = tuple(value_from_json(x) for x in obj["inputs"])
    return Example(inputs, value_from_json(obj["output"]))


def example_to_json(ex: Example) -> dict:
    return {"inputs": [value_to_json(v) for v in ex.inputs], "output": value_to_json(ex.output)}


@dataclass(frozen=True)
class ExampleState:
    slots: tuple  # per-slot Value | None (None = NULL)
    output: Value


@dataclass(frozen=True)
class Environment:
    """Shared slot layout across all examples of one problem.

    provenance[s] is the creation index of the value in slot s (inputs are
    0..n-1, statement j's result is n+j) or None for a NULL slot. history
    holds the executed statements with operands as creation indices, which is
    exactly the solved program once renumbered (it already is).
    """

    input_kinds: tuple[Kind, ...]
    states: tuple[ExampleState, ...]
    provenance: tuple
    history: tuple[Statement, ...]
    last_slot: Optional[int]

    @property
    def v(self) -> int:
        return len(self.provenance)

    @property
    def k(self) -> int:
        return len(self.states)

    def live(self, slot: int) -> bool:
        return self.provenance[slot] is not None

    @property
    def live_count(self) -> int:
        return sum(1 for p in self.provenance if p is not None)

    def free_slot(self) -> Optional[int]:
        for s, p in enumerate(self.provenance):
            if p is None:
                return s
        return None


def init_environment(examples: list[Example] | tuple[Example, ...], v: int) -> Environment:
    if not examples:
        raise ValueError("need at least one example")
    kinds = tuple(kind_of(x) for x in examples[0].inputs)
    if not kinds:
        raise ValueError("examples need at least one input")
    for ex in examples:
        if tuple(kind_of(x) for x in ex.inputs) != kinds:
            raise InconsistentExamplesError("examples disagree on input kinds")
        for val in ex.inputs:
            if not value_in_range(val):
                raise ValueError(f"input out of domain: {val!r}")
        if not value_in_range(ex.output):
            raise ValueError(f"output out of domain: {ex.output!r}")
    n = len(kinds)
    if n > v:
        raise ValueError(f"{n} inputs do not fit in {v} slots")
    pad = (None,) * (v - n)
    states = tuple(ExampleState(ex.inputs + pad, ex.output) for ex in examples)
    return Environment(
        input_kinds=kinds,
        states=states,
        provenance=tuple(range(n)) + pad,
        history=(),
        last_slot=None,
    )


def step_environment(env: Environment, stmt: Statement) -> Environment | Failure:
    """Execute one statement across all examples; one bad example invalidates
    the edge. Requires a free slot (the caller drops first if needed)."""
    op = stmt.func.op
    if len(stmt.operands) != op.arity:
        raise ValueError("statement operand count != operator arity")
    v = env.v
    ref = env.states[0].slots
    for idx, k in zip(stmt.operands, op.operand_kinds):
        if not 0 <= idx < v:
            return Failure(FailReason.MALFORMED)
        if env.provenance[idx] is None:
            return Failure(FailReason.NULL_OPERAND)
        if kind_of(ref[idx]) is not k:
            return Failure(FailReason.TYPE_MISMATCH)
    free = env.free_slot()
    if free is None:
        raise NoFreeSlotError(f"all {v} slots live")

    lam = stmt.func.lam
    results = []
    for state in env.states:
        args = tuple(state.slots[i] for i in stmt.operands)
        r = apply_operator(op, lam, args)
        if isinstance(r, Failure):
            return r
        results.append(r)

    new_states = tuple(
        ExampleState(s.slots[:free] + (r,) + s.slots[free + 1 :], s.output)
        for s, r in zip(env.states, results)
    )
    creation = len(env.input_kinds) + len(env.history)
    new_prov = env.provenance[:free] + (creation,) + env.provenance[free + 1 :]
    recorded = Statement(stmt.func, tuple(env.provenance[i] for i in stmt.operands))
    return Environment(
        input_kinds=env.input_kinds,
        states=new_states,
        provenance=new_prov,
        history=env.history + (recorded,),
        last_slot=free,
    )


def drop_variable(env: Environment, slot: int) -> Environment:
    if not 0 <= slot < env.v:
        raise ValueError(f"slot {slot} out of range")
    if env.provenance[slot] is None:
        raise NotLiveError(f"slot {slot} is not live")
    new_states = tuple(
        ExampleState(s.slots[:slot] + (None,) + s.slots[slot + 1 :], s.output)
        for s in env.states
    )
    new_prov = env.provenance[:slot] + (None,) + env.provenance[slot + 1 :]
    return Environment(
        input_kinds=env.input_kinds,
        states=new_states,
        provenance=new_prov,
        history=env.history,
        last_slot=None if env.last_slot == slot else env.last_slot,
    )


def is_solved(env: Environment) -> bool:
    """True iff the most recently produced value equals the target in every
    example (kind-sensitive; INT 3 does not solve a LIST [3] target)."""
    last = env.last_slot
    if last is None:
        return False
    return all(s.slots[last] == s.output for s in env.states)


def env_fingerprint(env: Environment) -> int:
    """64-bit content hash over slot values, liveness, and outputs.

    Histories are deliberately excluded: distinct statement orders that land
    in the same state collapse to one fingerprint.
    """
    data = repr(tuple((s.slots, s.output) for s in env.states))
    h = hashlib.blake2b(data.encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")
