"""Training corpus generation: random type-valid programs, redundancy pruning,
semantic dedup on a fixed probe bank, backward interval propagation for input
sampling, JSONL dataset IO, and supervision-row construction with forced
garbage collection."""

from __future__ import annotations

import json
import hashlib
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .dsl import (
    FUNCTION_CLASSES,
    INT_MAX,
    INT_MIN,
    MAX_LIST_LEN,
    Failure,
    FunctionClass,
    Kind,
    Lambda,
    Program,
    Statement,
    Value,
    build_vocabulary,
    format_program,
    parse_program,
    run_program,
)
from .env import (
    Environment,
    Example,
    ExampleState,
    drop_variable,
    example_from_json,
    example_to_json,
    init_environment,
    step_environment,
)

log = logging.getLogger(__name__)

DATASET_VERSION = 1
PROBE_COUNT = 16
REJECT_BUDGET = 1000
_PROBE_SEED = 217


class DatagenError(Exception):
    pass


class InfeasibleError(DatagenError):
    """Backward propagation emptied an interval; the program cannot execute
    in-range on any input."""


class GenerationFailedError(DatagenError):
    """Rejection-sampling budget exhausted."""


class TooManyLiveVarsError(DatagenError):
    """A record needs more simultaneously live values than the slot count."""


# ---------------------------------------------------------------------------
# Probe bank and semantic signatures

_INT_PROBES = (0, 1, 2, 3, 5, 10, 19, 20, -1, -7, 255, -256)


def _probe_list(i: int, rng: np.random.Generator) -> tuple:
    def rand_list(length, lo=INT_MIN, hi=INT_MAX):
        return tuple(int(x) for x in rng.integers(lo, hi + 1, size=length))

    if i == 0:
        return ()
    if i == 1:
        return (0,)
    if i == 2:
        return (int(rng.integers(INT_MIN, 0)),)
    if i == 3:
        return rand_list(5, INT_MIN, -1)
    if i == 4:
        return rand_list(MAX_LIST_LEN)
    if i == 5:
        return (int(rng.integers(-20, 21)),) * 8
    if i == 6:
        return tuple(sorted(rand_list(10)))
    if i == 7:
        return tuple(sorted(rand_list(10), reverse=True))
    return rand_list(int(rng.integers(1, MAX_LIST_LEN + 1)))


def _probe_int(i: int, rng: np.random.Generator) -> int:
    if i < len(_INT_PROBES):
        return _INT_PROBES[i]
    return int(rng.integers(INT_MIN, INT_MAX + 1))


@lru_cache(maxsize=None)
def probe_bank(input_kinds: tuple[Kind, ...]) -> tuple[tuple, ...]:
    """16 fixed probe input tuples per input-kind signature: empty lists,
    singletons, negatives, duplicates, sorted runs, max-length lists, plus
    seeded random fill. Constant across runs."""
    codes = [0 if k is Kind.INT else 1 for k in input_kinds]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([_PROBE_SEED] + codes)))
    probes = []
    for i in range(PROBE_COUNT):
        inputs = tuple(
            _probe_int(i, rng) if k is Kind.INT else _probe_list(i, rng)
            for k in input_kinds
        )
        probes.append(inputs)
    return tuple(probes)


def semantic_signature(p: Program, probes: Optional[tuple] = None) -> int:
    """64-bit hash of the program's behavior on the probe bank. Failures
    collapse to one token regardless of reason."""
    if probes is None:
        probes = probe_bank(p.input_kinds)
    h = hashlib.blake2b(digest_size=8)
    h.update(";".join(k.value for k in p.input_kinds).encode())
    for inputs in probes:
        out = run_program(p, inputs)
        h.update(b"F" if isinstance(out, Failure) else repr(out).encode())
        h.update(b"|")
    return int.from_bytes(h.digest(), "little")


# ---------------------------------------------------------------------------
# Program sampling

_SIG_LIST = (Kind.LIST,)
_SIG_INT_LIST = (Kind.INT, Kind.LIST)
_SIG_LIST_LIST = (Kind.LIST, Kind.LIST)


def _class_count(fc: FunctionClass, a: int, b: int) -> int:
    sig = fc.op.operand_kinds
    if sig == _SIG_LIST:
        return b
    if sig == _SIG_INT_LIST:
        return a * b
    return b * b


def sample_kind_signature(rng: np.random.Generator) -> tuple[Kind, ...]:
    """1..3 inputs, kinds uniform, conditioned on at least one LIST."""
    n = int(rng.integers(1, 4))
    while True:
        kinds = tuple(Kind.INT if rng.integers(2) == 0 else Kind.LIST for _ in range(n))
        if Kind.LIST in kinds:
            return kinds


def sample_statement(slot_kinds: list[Kind], rng: np.random.Generator) -> Statement:
    """Uniform over all type-valid statements for the current slot kinds."""
    int_slots = [i for i, k in enumerate(slot_kinds) if k is Kind.INT]
    list_slots = [i for i, k in enumerate(slot_kinds) if k is Kind.LIST]
    a, b = len(int_slots), len(list_slots)
    total = sum(_class_count(fc, a, b) for fc in FUNCTION_CLASSES)
    if total == 0:
        raise ValueError("no type-valid statement for these slot kinds")
    u = int(rng.integers(total))
    for fc in FUNCTION_CLASSES:
        count = _class_count(fc, a, b)
        if u >= count:
            u -= count
            continue
        sig = fc.op.operand_kinds
        if sig == _SIG_LIST:
            return Statement(fc, (list_slots[u],))
        if sig == _SIG_INT_LIST:
            return Statement(fc, (int_slots[u // b], list_slots[u % b]))
        return Statement(fc, (list_slots[u // b], list_slots[u % b]))
    raise AssertionError("unreachable")


def sample_program(
    length: int,
    rng: np.random.Generator,
    input_kinds: Optional[tuple[Kind, ...]] = None,
) -> Program:
    if length < 1:
        raise ValueError("length must be >= 1")
    kinds = sample_kind_signature(rng) if input_kinds is None else input_kinds
    slot_kinds = list(kinds)
    statements = []
    for _ in range(length):
        stmt = sample_statement(slot_kinds, rng)
        statements.append(stmt)
        slot_kinds.append(stmt.func.op.returns)
    return Program(kinds, tuple(statements))


def has_redundant_variables(p: Program) -> bool:
    """True iff some input or intermediate is not on the dependency path to
    the final statement."""
    n = len(p.input_kinds)
    m = len(p.statements)
    if m == 0:
        return n > 0
    needed = {n + m - 1}
    for j in range(m - 1, -1, -1):
        if n + j in needed:
            needed.update(p.statements[j].operands)
    return len(needed) < n + m


# ---------------------------------------------------------------------------
# Backward interval propagation

FULL_INT = (INT_MIN, INT_MAX)


@dataclass(frozen=True)
class IntervalConstraint:
    lo: int = INT_MIN
    hi: int = INT_MAX
    max_len: int = MAX_LIST_LEN


def _meet(c: IntervalConstraint, lo: int, hi: int, max_len: Optional[int] = None) -> IntervalConstraint:
    nlo, nhi = max(c.lo, lo), min(c.hi, hi)
    nlen = c.max_len if max_len is None else min(c.max_len, max_len)
    if nlo > nhi or nlen < 0:
        raise InfeasibleError(f"interval emptied: [{nlo},{nhi}] len<={nlen}")
    return IntervalConstraint(nlo, nhi, nlen)


@lru_cache(maxsize=4096)
def _unary_inverse_hull(lam_name: str, lo: int, hi: int) -> tuple[int, int]:
    """Hull of {x in domain : f(x) in [lo,hi]} by scanning the 512-value domain."""
    from .dsl import LAMBDA_BY_NAME

    f = LAMBDA_BY_NAME[lam_name].fn
    xs = [x for x in range(INT_MIN, INT_MAX + 1) if lo <= f(x) <= hi]
    if not xs:
        raise InfeasibleError(f"no preimage for {lam_name} into [{lo},{hi}]")
    return xs[0], xs[-1]


@lru_cache(maxsize=4096)
def _filter_pass_hull(lam_name: str, lo: int, hi: int) -> tuple[int, int]:
    """Hull of {x : not p(x) or x in [lo,hi]}: dropped elements are free."""
    from .dsl import LAMBDA_BY_NAME

    f = LAMBDA_BY_NAME[lam_name].fn
    xs = [x for x in range(INT_MIN, INT_MAX + 1) if not f(x) or lo <= x <= hi]
    if not xs:
        raise InfeasibleError(f"no admissible element for FILTER {lam_name}")
    return xs[0], xs[-1]


def propagate_bounds(p: Program) -> list[IntervalConstraint]:
    """Walk statements backward, tightening operand intervals from result
    intervals. Loose by design; rejection sampling closes the gap."""
    n = len(p.input_kinds)
    cons = [IntervalConstraint() for _ in range(n + len(p.statements))]

    for j in range(len(p.statements) - 1, -1, -1):
        stmt = p.statements[j]
        r = cons[n + j]
        name = stmt.func.op.name
        lam = stmt.func.lam
        ops = stmt.operands

        if name in ("HEAD", "LAST", "MINIMUM", "MAXIMUM", "REVERSE", "SORT"):
            cons[ops[0]] = _meet(cons[ops[0]], r.lo, r.hi, r.max_len if name in ("REVERSE", "SORT") else None)
        elif name in ("TAKE", "DROP"):
            cons[ops[0]] = _meet(cons[ops[0]], 0, MAX_LIST_LEN)
            cons[ops[1]] = _meet(cons[ops[1]], r.lo, r.hi)
        elif name == "ACCESS":
            cons[ops[0]] = _meet(cons[ops[0]], 0, MAX_LIST_LEN - 1)
            cons[ops[1]] = _meet(cons[ops[1]], r.lo, r.hi)
        elif name == "SUM":
            bound = max(1, max(abs(r.lo), abs(r.hi)) // max(1, cons[ops[0]].max_len))
            cons[ops[0]] = _meet(cons[ops[0]], -bound, bound)
        elif name == "MAP":
            lo, hi = _unary_inverse_hull(lam.name, r.lo, r.hi)
            cons[ops[0]] = _meet(cons[ops[0]], lo, hi, r.max_len)
        elif name == "FILTER":
            lo, hi = _filter_pass_hull(lam.name, r.lo, r.hi)
            cons[ops[0]] = _meet(cons[ops[0]], lo, hi)
        elif name == "COUNT":
            _meet(r, 0, MAX_LIST_LEN)  # feasibility only
        elif name == "ZIPWITH":
            cons = _zipwith_rule(cons, ops, lam, r)
        elif name == "SCANL1":
            cons[ops[0]] = _scanl1_rule(cons[ops[0]], lam, r)
        else:
            raise AssertionError(name)

    return cons[:n]


def _zipwith_rule(cons, ops, lam: Lambda, r: IntervalConstraint):
    x, y = cons[ops[0]], cons[ops[1]]
    if lam.name == "+":
        cons[ops[0]] = _meet(x, r.lo - y.hi, r.hi - y.lo)
        cons[ops[1]] = _meet(y, r.lo - cons[ops[0]].hi, r.hi - cons[ops[0]].lo)
    elif lam.name == "-":
        cons[ops[0]] = _meet(x, r.lo + y.lo, r.hi + y.hi)
        cons[ops[1]] = _meet(y, cons[ops[0]].lo - r.hi, cons[ops[0]].hi - r.lo)
    elif lam.name == "*":
        b = math.isqrt(max(abs(r.lo), abs(r.hi)))
        cons[ops[0]] = _meet(x, -b, b)
        cons[ops[1]] = _meet(y, -b, b)
    elif lam.name == "MIN":
        cons[ops[0]] = _meet(x, r.lo, INT_MAX)
        cons[ops[1]] = _meet(y, r.lo, INT_MAX)
    else:  # MAX
        cons[ops[0]] = _meet(x, INT_MIN, r.hi)
        cons[ops[1]] = _meet(y, INT_MIN, r.hi)
    return cons


def _scanl1_rule(c: IntervalConstraint, lam: Lambda, r: IntervalConstraint) -> IntervalConstraint:
    if lam.name in ("+", "-"):
        bound = max(1, max(abs(r.lo), abs(r.hi)) // max(1, c.max_len))
        return _meet(c, -bound, bound, r.max_len)
    if lam.name == "*":
        return _meet(c, -3, 3, r.max_len)
    if lam.name == "MIN":
        return _meet(c, r.lo, INT_MAX, r.max_len)
    if lam.name == "MAX":
        return _meet(c, INT_MIN, r.hi, r.max_len)
    raise AssertionError(lam.name)


# ---------------------------------------------------------------------------
# Input sampling and dataset construction


def _draw_input(kind: Kind, c: IntervalConstraint, rng: np.random.Generator) -> Value:
    if kind is Kind.INT:
        return int(rng.integers(c.lo, c.hi + 1))
    length = int(rng.integers(1, c.max_len + 1))
    return tuple(int(x) for x in rng.integers(c.lo, c.hi + 1, size=length))


def sample_inputs(
    p: Program,
    constraints: list[IntervalConstraint],
    k: int,
    rng: np.random.Generator,
    max_rejects: int = REJECT_BUDGET,
) -> list[Example]:
    """Draw k distinct examples executing the program in-range; counts every
    failed or duplicate draw against the rejection budget."""
    examples: list[Example] = []
    seen: set = set()
    rejects = 0
    while len(examples) < k:
        inputs = tuple(_draw_input(kd, c, rng) for kd, c in zip(p.input_kinds, constraints))
        if inputs in seen:
            rejects += 1
        else:
            out = run_program(p, inputs)
            if isinstance(out, Failure):
                rejects += 1
            else:
                seen.add(inputs)
                examples.append(Example(inputs, out))
                continue
        if rejects >= max_rejects:
            raise GenerationFailedError(
                f"{rejects} rejected attempts for {format_program(p)}"
            )
    return examples


@dataclass(frozen=True)
class DatasetRecord:
    program: Optional[Program]  # None in problems-only files
    examples: tuple[Example, ...]


@dataclass
class DatasetConfig:
    count: int
    max_len: int
    k: int = 5
    seed: int = 0
    min_len: int = 1


def generate_records(
    config: DatasetConfig,
    exclude_signatures: Iterable[int] = (),
    log_every: int = 0,
) -> list[DatasetRecord]:
    """Sample records until `count` survive redundancy pruning, corpus-wide
    signature dedup, feasibility, and example sampling. Deterministic per seed."""
    if not 1 <= config.min_len <= config.max_len:
        raise ValueError("need 1 <= min_len <= max_len")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    seen: set[int] = set(exclude_signatures)
    records: list[DatasetRecord] = []
    attempts = 0
    cap = max(1_000_000, 1_000 * config.count)
    while len(records) < config.count:
        attempts += 1
        if attempts > cap:
            raise GenerationFailedError(
                f"attempt cap {cap} hit with {len(records)}/{config.count} records"
            )
        length = int(rng.integers(config.min_len, config.max_len + 1))
        p = sample_program(length, rng)
        if has_redundant_variables(p):
            continue
        sig = semantic_signature(p)
        if sig in seen:
            continue
        try:
            constraints = propagate_bounds(p)
            examples = sample_inputs(p, constraints, config.k, rng)
        except (InfeasibleError, GenerationFailedError):
            continue
        seen.add(sig)
        records.append(DatasetRecord(p, tuple(examples)))
        if log_every and len(records) % log_every == 0:
            log.info("generated %d/%d records (%d attempts)", len(records), config.count, attempts)
    return records


def dataset_manifest(config: DatasetConfig) -> dict:
    manifest = {"version": DATASET_VERSION, "max_len": config.max_len, "k": config.k, "seed": config.seed}
    if config.min_len != 1:
        manifest["min_len"] = config.min_len
    return manifest


def record_to_json(record: DatasetRecord) -> dict:
    obj = {}
    if record.program is not None:
        obj["program"] = format_program(record.program)
    obj["examples"] = [example_to_json(ex) for ex in record.examples]
    return obj


def record_from_json(obj: dict) -> DatasetRecord:
    program = parse_program(obj["program"]) if obj.get("program") else None
    examples = tuple(example_from_json(e) for e in obj["examples"])
    return DatasetRecord(program, examples)


def write_dataset(path: str | Path, records: Iterable[DatasetRecord], manifest: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(manifest, separators=(",", ":")) + "\n")
        for record in records:
            fh.write(json.dumps(record_to_json(record), separators=(",", ":")) + "\n")


def read_dataset(path: str | Path) -> tuple[dict, list[DatasetRecord]]:
    """Read a dataset/problems file. The manifest line is optional so plain
    record files work as problem sets."""
    manifest: dict = {}
    records: list[DatasetRecord] = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if i == 0 and "version" in obj:
                manifest = obj
                continue
            records.append(record_from_json(obj))
    return manifest, records


def build_dataset(
    config: DatasetConfig,
    path: str | Path,
    exclude_signatures: Iterable[int] = (),
) -> list[DatasetRecord]:
    records = generate_records(config, exclude_signatures, log_every=max(1, config.count // 10))
    write_dataset(path, records, dataset_manifest(config))
    return records


def corpus_signatures(records: Iterable[DatasetRecord]) -> set[int]:
    return {semantic_signature(r.program) for r in records}


# ---------------------------------------------------------------------------
# Supervision rows


@dataclass(frozen=True)
class TrainingRow:
    """One pre-statement snapshot: the environment the guide sees, the
    statement/function it should predict, and per-slot drop supervision
    (labels meaningful only where drop_mask is True)."""

    states: tuple[ExampleState, ...]
    next_statement: int
    next_function: int
    drop_labels: tuple[bool, ...]
    drop_mask: tuple[bool, ...]

    @property
    def v(self) -> int:
        return len(self.drop_labels)

    @property
    def k(self) -> int:
        return len(self.states)


def make_training_rows(record: DatasetRecord, v: int) -> list[TrainingRow]:
    """Re-execute the record under a v-slot budget, dropping the lowest-index
    slot with no future use whenever slots run out. Raises TooManyLiveVarsError
    if some step has no droppable slot."""
    p = record.program
    n = len(p.input_kinds)
    m = len(p.statements)
    vocab = build_vocabulary(v)

    last_use = [-1] * (n + m)
    for j, stmt in enumerate(p.statements):
        for c in stmt.operands:
            last_use[c] = j

    if n > v:
        raise TooManyLiveVarsError(f"{n} inputs exceed {v} slots")
    env = init_environment(list(record.examples), v)
    rows: list[TrainingRow] = []
    for j, stmt in enumerate(p.statements):
        slot_of = {c: s for s, c in enumerate(env.provenance) if c is not None}
        try:
            rewritten = Statement(stmt.func, tuple(slot_of[c] for c in stmt.operands))
        except KeyError as e:  # pragma: no cover - dropped operand is impossible
            raise AssertionError(f"operand {e} was dropped while still needed")

        labels = tuple(
            c is not None and last_use[c] < j for c in env.provenance
        )
        mask = tuple(c is not None for c in env.provenance)
        rows.append(
            TrainingRow(env.states, vocab.index_of(rewritten), stmt.func.index, labels, mask)
        )

        if env.free_slot() is None:
            droppable = [s for s in range(v) if labels[s]]
            if not droppable:
                raise TooManyLiveVarsError(
                    f"step {j}: {v} slots all live with future uses"
                )
            env = drop_variable(env, droppable[0])
        stepped = step_environment(env, rewritten)
        if isinstance(stepped, Failure):  # pragma: no cover - records re-execute clean
            raise AssertionError(f"record failed to re-execute: {stepped}")
        env = stepped
    return rows
