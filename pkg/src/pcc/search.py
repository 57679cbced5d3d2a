"""Guided synthesis: beam expansion with learned slot dropping, a restarting
beam schedule that widens until the space is covered, and a width-limited DFS
baseline. Solved programs are always re-validated by re-execution."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dsl import Failure, Program, build_vocabulary, run_program
from .env import (
    Environment,
    Example,
    drop_variable,
    env_fingerprint,
    init_environment,
    is_solved,
    step_environment,
)
from .model import Prediction


class SoundnessError(Exception):
    """A search reported a program that does not reproduce the examples."""


class SearchStatus(enum.Enum):
    SOLVED = "solved"
    TIMEOUT = "timeout"


@dataclass
class SearchStats:
    nodes: int = 0
    model_evals: int = 0
    restarts: int = 0
    wall_time: float = 0.0
    exhausted: bool = False


@dataclass
class SearchResult:
    status: SearchStatus
    program: Optional[Program]
    stats: SearchStats


@dataclass(frozen=True)
class SearchNode:
    env: Environment
    score: float  # cumulative log-probability, <= 0
    depth: int


@dataclass
class CABConfig:
    max_length: int
    timeout: Optional[float] = None
    alpha0: int = 100
    beta0: int = 10
    c: int = 10


@dataclass
class DFSConfig:
    max_length: int
    timeout: Optional[float] = None
    width: int = 10


class UniformGuide:
    """Flat prior: every statement equally likely, every drop probability 1/2.
    Ties are then broken by vocabulary index, which makes search behavior a
    deterministic enumeration schedule."""

    def __init__(self, v: int):
        self.v = v
        self.vocab = build_vocabulary(v)
        n = len(self.vocab)
        from .dsl import N_FUNCTION_CLASSES

        self._pred = Prediction(
            statement_logprobs=np.full(n, -math.log(n)),
            drop_probs=np.full(v, 0.5),
            function_logprobs=np.full(N_FUNCTION_CLASSES, -math.log(N_FUNCTION_CLASSES)),
        )

    def predict(self, env: Environment) -> Prediction:
        return self._pred

    def predict_batch(self, envs: Sequence[Environment]) -> list[Prediction]:
        return [self._pred] * len(envs)


class _Deadline:
    def __init__(self, timeout: Optional[float]):
        self.at = None if timeout is None else time.perf_counter() + timeout

    def expired(self) -> bool:
        return self.at is not None and time.perf_counter() >= self.at


def _choose_drop(
    env: Environment,
    stmt_operands: tuple[int, ...],
    drop_probs: np.ndarray,
    rng: Optional[np.random.Generator],
) -> int:
    """Pick the slot to free when all v are live: highest drop probability
    among slots not read by the pending statement, ties to the lowest index.
    With an rng, a seeded uniform choice replaces the learned policy."""
    used = set(stmt_operands)
    candidates = [s for s in range(env.v) if s not in used]
    if not candidates:
        raise ValueError("statement uses every slot; nothing to drop")
    if rng is not None:
        return candidates[int(rng.integers(len(candidates)))]
    best = candidates[0]
    best_p = drop_probs[best]
    for s in candidates[1:]:
        if drop_probs[s] > best_p:
            best, best_p = s, drop_probs[s]
    return best


def _expand_pred(
    node: SearchNode,
    pred: Prediction,
    beta: int,
    vocab,
    rng: Optional[np.random.Generator] = None,
    random_drop: bool = False,
) -> list[SearchNode]:
    """Try the top-beta statements; failures consume budget. Children come
    back in non-increasing score order."""
    order = np.argsort(-pred.statement_logprobs, kind="stable")[:beta]
    full = node.env.live_count == node.env.v
    children: list[SearchNode] = []
    for stmt_idx in order:
        stmt = vocab.entry_at(int(stmt_idx))
        env = node.env
        if full:
            if len(set(stmt.operands)) >= env.v:
                continue  # every slot is an operand; nothing can be freed
            slot = _choose_drop(env, stmt.operands, pred.drop_probs, rng if random_drop else None)
            env = drop_variable(env, slot)
        stepped = step_environment(env, stmt)
        if isinstance(stepped, Failure):
            continue
        children.append(
            SearchNode(stepped, node.score + float(pred.statement_logprobs[stmt_idx]), node.depth + 1)
        )
    return children


def expand(
    node: SearchNode,
    guide,
    beta: int,
    rng: Optional[np.random.Generator] = None,
    random_drop: bool = False,
) -> list[SearchNode]:
    return _expand_pred(node, guide.predict(node.env), beta, guide.vocab, rng, random_drop)


def reconstruct_program(node: SearchNode) -> Program:
    """Provenance replay: the environment history is the executed statement
    sequence with operands already in creation order; drops are elided."""
    env = node.env
    return Program(env.input_kinds, env.history)


def _validated(node: SearchNode, examples: Sequence[Example]) -> Program:
    program = reconstruct_program(node)
    for ex in examples:
        out = run_program(program, ex.inputs)
        if isinstance(out, Failure) or out != ex.output:
            raise SoundnessError(
                f"reconstructed program does not reproduce examples: {program}"
            )
    return program


class _BeamStatus(enum.Enum):
    SOLVED = "solved"
    EXHAUSTED = "exhausted"
    DEADLINE = "deadline"


@dataclass
class _BeamOutcome:
    status: _BeamStatus
    node: Optional[SearchNode]
    complete: bool


def _beam_search(
    examples: Sequence[Example],
    guide,
    alpha: int,
    beta: int,
    max_length: int,
    deadline: _Deadline,
    stats: SearchStats,
    rng: Optional[np.random.Generator] = None,
    random_drop: bool = False,
) -> _BeamOutcome:
    """One level-synchronous beam pass. `complete` reports whether the pass
    covered the whole space to max_length (no alpha or beta truncation)."""
    root = SearchNode(init_environment(list(examples), guide.v), 0.0, 0)
    beam = [root]
    vocab = guide.vocab
    truncated = beta < len(vocab)

    for _ in range(max_length):
        if deadline.expired():
            return _BeamOutcome(_BeamStatus.DEADLINE, None, False)
        preds = guide.predict_batch([node.env for node in beam])
        stats.model_evals += len(beam)

        dedup: dict[int, SearchNode] = {}
        for node, pred in zip(beam, preds):
            if deadline.expired():
                return _BeamOutcome(_BeamStatus.DEADLINE, None, False)
            stats.nodes += 1
            for child in _expand_pred(node, pred, beta, vocab, rng, random_drop):
                if is_solved(child.env):
                    return _BeamOutcome(_BeamStatus.SOLVED, child, False)
                fp = env_fingerprint(child.env)
                kept = dedup.get(fp)
                if kept is None or child.score > kept.score:
                    dedup[fp] = child

        children = sorted(dedup.values(), key=lambda nd: -nd.score)
        if len(children) > alpha:
            children = children[:alpha]
            truncated = True
        if not children:
            break
        beam = children

    return _BeamOutcome(_BeamStatus.EXHAUSTED, None, not truncated)


def cab(
    examples: Sequence[Example],
    guide,
    config: CABConfig,
    rng: Optional[np.random.Generator] = None,
    random_drop: bool = False,
) -> SearchResult:
    """Restarting beam schedule: iteration i runs a beam with alpha0*2^i and
    beta0+c*i. Stops on a solution, the deadline, or full coverage."""
    start = time.perf_counter()
    deadline = _Deadline(config.timeout)
    stats = SearchStats()
    iteration = 0
    while True:
        alpha = config.alpha0 * (2 ** iteration)
        beta = config.beta0 + config.c * iteration
        outcome = _beam_search(
            examples, guide, alpha, beta, config.max_length, deadline, stats, rng, random_drop
        )
        stats.restarts = iteration
        stats.wall_time = time.perf_counter() - start
        if outcome.status is _BeamStatus.SOLVED:
            program = _validated(outcome.node, examples)
            return SearchResult(SearchStatus.SOLVED, program, stats)
        if outcome.status is _BeamStatus.DEADLINE:
            return SearchResult(SearchStatus.TIMEOUT, None, stats)
        if outcome.complete:
            stats.exhausted = True
            return SearchResult(SearchStatus.TIMEOUT, None, stats)
        iteration += 1


def dfs(
    examples: Sequence[Example],
    guide,
    config: DFSConfig,
    rng: Optional[np.random.Generator] = None,
    random_drop: bool = False,
) -> SearchResult:
    """Depth-first baseline: at each node try the top-`width` statements in
    model order, diving into the best child first."""
    start = time.perf_counter()
    deadline = _Deadline(config.timeout)
    stats = SearchStats()
    root = SearchNode(init_environment(list(examples), guide.v), 0.0, 0)
    stack = [root]
    while stack:
        if deadline.expired():
            stats.wall_time = time.perf_counter() - start
            return SearchResult(SearchStatus.TIMEOUT, None, stats)
        node = stack.pop()
        if node.depth >= config.max_length:
            continue
        stats.nodes += 1
        stats.model_evals += 1
        pred = guide.predict(node.env)
        children = _expand_pred(node, pred, config.width, guide.vocab, rng, random_drop)
        for child in children:
            if is_solved(child.env):
                stats.wall_time = time.perf_counter() - start
                program = _validated(child, examples)
                return SearchResult(SearchStatus.SOLVED, program, stats)
        stack.extend(reversed(children))
    stats.exhausted = True
    stats.wall_time = time.perf_counter() - start
    return SearchResult(SearchStatus.TIMEOUT, None, stats)
