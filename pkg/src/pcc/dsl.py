"""Bounded integer/list DSL: value domain, lambda table, operators, statement
vocabulary, program text format, and a deterministic interpreter.

Values are plain Python ints (INT) and tuples of ints (LIST). Integers live in
[-256, 255]; lists hold at most 20 elements. Any operation whose result leaves
that domain fails rather than truncating.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

INT_MIN = -256
INT_MAX = 255
MAX_LIST_LEN = 20

# INT values are ints, LIST values are tuples of ints.
Value = int | tuple


class Kind(enum.Enum):
    INT = "INT"
    LIST = "LIST"


def kind_of(value: Value) -> Kind:
    return Kind.INT if isinstance(value, int) else Kind.LIST


def value_in_range(value: Value) -> bool:
    """Check the domain invariant: ints in [-256,255], lists of length <= 20."""
    if isinstance(value, int):
        return INT_MIN <= value <= INT_MAX
    if not isinstance(value, tuple) or len(value) > MAX_LIST_LEN:
        return False
    return all(isinstance(x, int) and INT_MIN <= x <= INT_MAX for x in value)


class FailReason(enum.Enum):
    EMPTY_INPUT = "EMPTY_INPUT"
    OUT_OF_RANGE = "OUT_OF_RANGE"
    INDEX_OUT_OF_BOUNDS = "INDEX_OUT_OF_BOUNDS"
    TYPE_MISMATCH = "TYPE_MISMATCH"
    NULL_OPERAND = "NULL_OPERAND"
    MALFORMED = "MALFORMED"


@dataclass(frozen=True)
class Failure:
    """Expected execution failure; a value-level outcome, not an exception."""

    reason: FailReason


_FAIL_EMPTY = Failure(FailReason.EMPTY_INPUT)
_FAIL_RANGE = Failure(FailReason.OUT_OF_RANGE)
_FAIL_INDEX = Failure(FailReason.INDEX_OUT_OF_BOUNDS)


def trunc_div(a: int, b: int) -> int:
    """Integer division truncating toward zero."""
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b > 0) else -q


@dataclass(frozen=True)
class Lambda:
    name: str
    arity: int
    returns_bool: bool
    fn: Callable = field(compare=False, repr=False)


UNARY_INT_LAMBDAS = (
    Lambda("+1", 1, False, lambda x: x + 1),
    Lambda("-1", 1, False, lambda x: x - 1),
    Lambda("*2", 1, False, lambda x: x * 2),
    Lambda("/2", 1, False, lambda x: trunc_div(x, 2)),
    Lambda("*(-1)", 1, False, lambda x: -x),
    Lambda("**2", 1, False, lambda x: x * x),
    Lambda("*3", 1, False, lambda x: x * 3),
    Lambda("/3", 1, False, lambda x: trunc_div(x, 3)),
    Lambda("*4", 1, False, lambda x: x * 4),
    Lambda("/4", 1, False, lambda x: trunc_div(x, 4)),
)

PREDICATE_LAMBDAS = (
    Lambda(">0", 1, True, lambda x: x > 0),
    Lambda("<0", 1, True, lambda x: x < 0),
    Lambda("%2==0", 1, True, lambda x: x % 2 == 0),
    Lambda("%2==1", 1, True, lambda x: x % 2 == 1),
)

BINARY_INT_LAMBDAS = (
    Lambda("+", 2, False, lambda x, y: x + y),
    Lambda("-", 2, False, lambda x, y: x - y),
    Lambda("*", 2, False, lambda x, y: x * y),
    Lambda("MIN", 2, False, min),
    Lambda("MAX", 2, False, max),
)

LAMBDAS = UNARY_INT_LAMBDAS + PREDICATE_LAMBDAS + BINARY_INT_LAMBDAS
LAMBDA_BY_NAME = {lam.name: lam for lam in LAMBDAS}
assert len(LAMBDAS) == 19


def eval_lambda(lam: Lambda, args: tuple) -> int | bool:
    if len(args) != lam.arity:
        raise ValueError(f"lambda {lam.name} expects {lam.arity} args, got {len(args)}")
    return lam.fn(*args)


class LambdaKind(enum.Enum):
    UNARY_INT = "unary_int"
    PREDICATE = "predicate"
    BINARY_INT = "binary_int"


LAMBDAS_FOR_KIND = {
    LambdaKind.UNARY_INT: UNARY_INT_LAMBDAS,
    LambdaKind.PREDICATE: PREDICATE_LAMBDAS,
    LambdaKind.BINARY_INT: BINARY_INT_LAMBDAS,
}


@dataclass(frozen=True)
class Operator:
    name: str
    operand_kinds: tuple[Kind, ...]
    lambda_kind: Optional[LambdaKind]
    returns: Kind
    fn: Callable = field(compare=False, repr=False)

    @property
    def arity(self) -> int:
        return len(self.operand_kinds)


def _op_head(lam, xs):
    return xs[0] if xs else _FAIL_EMPTY


def _op_last(lam, xs):
    return xs[-1] if xs else _FAIL_EMPTY


def _op_take(lam, n, xs):
    return xs[: max(0, min(n, len(xs)))]


def _op_drop(lam, n, xs):
    return xs[max(0, min(n, len(xs))) :]


def _op_access(lam, n, xs):
    if 0 <= n < len(xs):
        return xs[n]
    return _FAIL_INDEX


def _op_minimum(lam, xs):
    return min(xs) if xs else _FAIL_EMPTY


def _op_maximum(lam, xs):
    return max(xs) if xs else _FAIL_EMPTY


def _op_reverse(lam, xs):
    return xs[::-1]


def _op_sort(lam, xs):
    return tuple(sorted(xs))


def _op_sum(lam, xs):
    return sum(xs)


def _op_map(lam, xs):
    f = lam.fn
    return tuple(f(x) for x in xs)


def _op_filter(lam, xs):
    f = lam.fn
    return tuple(x for x in xs if f(x))


def _op_count(lam, xs):
    f = lam.fn
    return sum(1 for x in xs if f(x))


def _op_zipwith(lam, xs, ys):
    f = lam.fn
    return tuple(f(a, b) for a, b in zip(xs, ys))


def _op_scanl1(lam, xs):
    if not xs:
        return ()
    f = lam.fn
    acc = xs[0]
    out = [acc]
    for x in xs[1:]:
        acc = f(acc, x)
        out.append(acc)
    return tuple(out)


_I = Kind.INT
_L = Kind.LIST

OPERATORS = (
    Operator("HEAD", (_L,), None, _I, _op_head),
    Operator("LAST", (_L,), None, _I, _op_last),
    Operator("TAKE", (_I, _L), None, _L, _op_take),
    Operator("DROP", (_I, _L), None, _L, _op_drop),
    Operator("ACCESS", (_I, _L), None, _I, _op_access),
    Operator("MINIMUM", (_L,), None, _I, _op_minimum),
    Operator("MAXIMUM", (_L,), None, _I, _op_maximum),
    Operator("REVERSE", (_L,), None, _L, _op_reverse),
    Operator("SORT", (_L,), None, _L, _op_sort),
    Operator("SUM", (_L,), None, _I, _op_sum),
    Operator("MAP", (_L,), LambdaKind.UNARY_INT, _L, _op_map),
    Operator("FILTER", (_L,), LambdaKind.PREDICATE, _L, _op_filter),
    Operator("COUNT", (_L,), LambdaKind.PREDICATE, _I, _op_count),
    Operator("ZIPWITH", (_L, _L), LambdaKind.BINARY_INT, _L, _op_zipwith),
    Operator("SCANL1", (_L,), LambdaKind.BINARY_INT, _L, _op_scanl1),
)
OPERATOR_BY_NAME = {op.name: op for op in OPERATORS}
assert len(OPERATORS) == 15

# Operators whose results can leave the value domain and need a range check.
_RANGE_CHECKED = frozenset({"SUM", "MAP", "ZIPWITH", "SCANL1"})


@dataclass(frozen=True)
class FunctionClass:
    """An operator together with its lambda (if any); the search-level token."""

    op: Operator
    lam: Optional[Lambda]
    index: int

    @property
    def name(self) -> str:
        return self.op.name if self.lam is None else f"{self.op.name},{self.lam.name}"

    @property
    def arity(self) -> int:
        return self.op.arity


def _build_function_classes() -> tuple[FunctionClass, ...]:
    classes = []
    for op in OPERATORS:
        if op.lambda_kind is None:
            classes.append(FunctionClass(op, None, len(classes)))
        else:
            for lam in LAMBDAS_FOR_KIND[op.lambda_kind]:
                classes.append(FunctionClass(op, lam, len(classes)))
    return tuple(classes)


FUNCTION_CLASSES = _build_function_classes()
FUNCTION_CLASS_BY_NAME = {fc.name: fc for fc in FUNCTION_CLASSES}
N_FUNCTION_CLASSES = len(FUNCTION_CLASSES)
assert N_FUNCTION_CLASSES == 38


def apply_operator(op: Operator, lam: Optional[Lambda], args: tuple) -> Value | Failure:
    """Apply one operator to already-valid operand values.

    Execution failures (empty list, bad index, out-of-range result) come back
    as Failure values; calling with the wrong operand count/kinds or the wrong
    lambda kind is a contract violation and raises.
    """
    if len(args) != len(op.operand_kinds):
        raise ValueError(f"{op.name} expects {op.arity} operands, got {len(args)}")
    for a, k in zip(args, op.operand_kinds):
        if kind_of(a) is not k:
            raise ValueError(f"{op.name} operand kind mismatch")
    if (lam is None) != (op.lambda_kind is None):
        raise ValueError(f"{op.name} lambda presence mismatch")
    if lam is not None and lam not in LAMBDAS_FOR_KIND[op.lambda_kind]:
        raise ValueError(f"{op.name} cannot take lambda {lam.name}")

    result = op.fn(lam, *args)
    if isinstance(result, Failure):
        return result
    if op.name in _RANGE_CHECKED:
        if isinstance(result, int):
            if not INT_MIN <= result <= INT_MAX:
                return _FAIL_RANGE
        else:
            for x in result:
                if not INT_MIN <= x <= INT_MAX:
                    return _FAIL_RANGE
    return result


@dataclass(frozen=True)
class Statement:
    func: FunctionClass
    operands: tuple[int, ...]


@dataclass(frozen=True)
class Program:
    input_kinds: tuple[Kind, ...]
    statements: tuple[Statement, ...]


def validate_program(p: Program) -> None:
    """Raise ValueError if a statement reads a future/invalid slot or has the
    wrong operand count."""
    if not p.input_kinds:
        raise ValueError("program needs at least one input")
    n = len(p.input_kinds)
    for i, stmt in enumerate(p.statements):
        if len(stmt.operands) != stmt.func.arity:
            raise ValueError(f"statement {i}: operand count != arity")
        for slot in stmt.operands:
            if not 0 <= slot < n + i:
                raise ValueError(f"statement {i}: reads undefined slot {slot}")


def run_program(p: Program, inputs: tuple) -> Value | Failure:
    """Execute a program on one input tuple; returns the last statement's value."""
    if len(inputs) != len(p.input_kinds):
        raise ValueError("input arity mismatch")
    for val, k in zip(inputs, p.input_kinds):
        if kind_of(val) is not k:
            raise ValueError("input kind mismatch")
        if not value_in_range(val):
            raise ValueError(f"input out of domain: {val!r}")
    if not p.statements:
        raise ValueError("program has no statements")

    slots: list[Value] = list(inputs)
    result: Value | Failure = None  # set in loop
    for stmt in p.statements:
        op = stmt.func.op
        args = []
        for idx in stmt.operands:
            if not 0 <= idx < len(slots):
                return Failure(FailReason.MALFORMED)
            args.append(slots[idx])
        for a, k in zip(args, op.operand_kinds):
            if kind_of(a) is not k:
                return Failure(FailReason.TYPE_MISMATCH)
        result = apply_operator(op, stmt.func.lam, tuple(args))
        if isinstance(result, Failure):
            return result
        slots.append(result)
    return result


class StatementVocabulary:
    """All (function class, operand tuple) combinations over v slots, in fixed
    table order then lexicographic operand order. Not type-filtered."""

    def __init__(self, v: int):
        if v < 1:
            raise ValueError("vocabulary needs v >= 1")
        self.v = v
        entries: list[Statement] = []
        for fc in FUNCTION_CLASSES:
            if fc.arity == 1:
                for a in range(v):
                    entries.append(Statement(fc, (a,)))
            else:
                for a in range(v):
                    for b in range(v):
                        entries.append(Statement(fc, (a, b)))
        self.entries = tuple(entries)
        self._index = {stmt: i for i, stmt in enumerate(entries)}

    def __len__(self) -> int:
        return len(self.entries)

    def index_of(self, stmt: Statement) -> int:
        return self._index[stmt]

    def entry_at(self, i: int) -> Statement:
        return self.entries[i]

    def __contains__(self, stmt: Statement) -> bool:
        return stmt in self._index

    def content_hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(f"v={self.v}\n".encode())
        for stmt in self.entries:
            h.update(format_statement(stmt).encode())
            h.update(b"\n")
        return h.hexdigest()


@lru_cache(maxsize=None)
def build_vocabulary(v: int) -> StatementVocabulary:
    return StatementVocabulary(v)


@dataclass
class ParseError(Exception):
    message: str
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.message}"


def format_statement(stmt: Statement) -> str:
    parts = [stmt.func.op.name]
    if stmt.func.lam is not None:
        parts.append(stmt.func.lam.name)
    parts.extend(str(i) for i in stmt.operands)
    return ",".join(parts)


def format_program(p: Program) -> str:
    text = ";".join(k.value for k in p.input_kinds)
    for stmt in p.statements:
        text += "|" + format_statement(stmt)
    return text


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    start = text.rfind("\n", 0, offset) + 1
    return line, offset - start + 1


def parse_program(text: str) -> Program:
    """Parse the pipe-separated program format; inverse of format_program."""

    def fail(msg: str, offset: int):
        line, col = _line_col(text, offset)
        raise ParseError(msg, line, col)

    if not text:
        fail("empty program text", 0)

    segments: list[tuple[str, int]] = []
    pos = 0
    for seg in text.split("|"):
        segments.append((seg, pos))
        pos += len(seg) + 1

    kinds: list[Kind] = []
    head, head_off = segments[0]
    off = head_off
    for tok in head.split(";"):
        if tok == "INT":
            kinds.append(Kind.INT)
        elif tok == "LIST":
            kinds.append(Kind.LIST)
        else:
            fail(f"unknown input kind {tok!r}", off)
        off += len(tok) + 1

    statements: list[Statement] = []
    for seg, seg_off in segments[1:]:
        fields = seg.split(",")
        op = OPERATOR_BY_NAME.get(fields[0])
        if op is None:
            fail(f"unknown operator {fields[0]!r}", seg_off)
        rest = fields[1:]
        lam = None
        if op.lambda_kind is not None:
            if not rest:
                fail(f"{op.name} needs a lambda", seg_off)
            lam = LAMBDA_BY_NAME.get(rest[0])
            if lam is None or lam not in LAMBDAS_FOR_KIND[op.lambda_kind]:
                fail(f"bad lambda {rest[0]!r} for {op.name}", seg_off + len(fields[0]) + 1)
            rest = rest[1:]
        if len(rest) != op.arity:
            fail(f"{op.name} expects {op.arity} operands, got {len(rest)}", seg_off)
        operands = []
        for tok in rest:
            if not tok.isdigit():
                fail(f"bad slot index {tok!r}", seg_off)
            slot = int(tok)
            if slot >= len(kinds) + len(statements):
                fail(f"statement reads undefined slot {slot}", seg_off)
            operands.append(slot)
        fc_name = op.name if lam is None else f"{op.name},{lam.name}"
        statements.append(Statement(FUNCTION_CLASS_BY_NAME[fc_name], tuple(operands)))

    return Program(tuple(kinds), tuple(statements))
