"""Evaluation metrics: solved-ratio curves, ground-truth-length versus
solution-length matrices, an n-gram consensus similarity over function-class
token streams, and per-function failure attribution."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

from .dsl import FUNCTION_CLASSES, Program


class EmptyProgramError(ValueError):
    pass


DEFAULT_TIME_THRESHOLDS = (0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 60.0, 120.0, 300.0, 600.0, 1000.0, 2000.0, 5000.0)
DEFAULT_RATIO_THRESHOLDS = (5, 10, 20, 40, 60, 70, 80, 90, 99)
NGRAM_MAX = 4
SCALE = 10.0


@dataclass
class ProblemResult:
    solved: bool
    time_s: float
    program: Optional[Program]  # solution if solved
    nodes: int = 0
    restarts: int = 0


def program_tokens(p: Program) -> tuple[int, ...]:
    """A program as its function-class index stream; operands are ignored."""
    return tuple(stmt.func.index for stmt in p.statements)


def _ngrams(tokens: tuple[int, ...], n: int) -> Counter:
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


@dataclass
class CorpusStats:
    """Document frequencies of function-class n-grams over a background corpus."""

    n_docs: int
    df: dict[int, Counter]

    @classmethod
    def from_programs(cls, programs: Sequence[Program]) -> "CorpusStats":
        df: dict[int, Counter] = {n: Counter() for n in range(1, NGRAM_MAX + 1)}
        for p in programs:
            tokens = program_tokens(p)
            for n in range(1, NGRAM_MAX + 1):
                for gram in set(_ngrams(tokens, n)):
                    df[n][gram] += 1
        return cls(len(programs), df)

    def idf(self, n: int, gram) -> float:
        return math.log(max(1, self.n_docs) / max(1, self.df[n].get(gram, 0)))


def cider_score(candidate: Program, truth: Program, stats: CorpusStats) -> float:
    """Average tf-idf cosine over n-gram orders 1..min(4, len(c), len(t)),
    scaled to [0, 10]. Identity scores 10; token-disjoint programs score 0."""
    ct = program_tokens(candidate)
    tt = program_tokens(truth)
    if not ct or not tt:
        raise EmptyProgramError("similarity needs non-empty programs")
    n_max = min(NGRAM_MAX, len(ct), len(tt))
    sims = []
    for n in range(1, n_max + 1):
        gc = {g: c * stats.idf(n, g) for g, c in _ngrams(ct, n).items()}
        gt = {g: c * stats.idf(n, g) for g, c in _ngrams(tt, n).items()}
        dot = sum(w * gt[g] for g, w in gc.items() if g in gt)
        nc = math.sqrt(sum(w * w for w in gc.values()))
        nt = math.sqrt(sum(w * w for w in gt.values()))
        sims.append(dot / (nc * nt) if nc > 0 and nt > 0 else 0.0)
    return SCALE * sum(sims) / len(sims)


def solved_ratio_curve(
    results: Sequence[ProblemResult],
    thresholds: Sequence[float] = DEFAULT_TIME_THRESHOLDS,
) -> list[tuple[float, float]]:
    """Percentage of problems solved within each time threshold. Monotone
    non-decreasing by construction."""
    if not results:
        raise ValueError("no results")
    total = len(results)
    times = sorted(r.time_s for r in results if r.solved)
    curve = []
    for t in thresholds:
        solved = sum(1 for x in times if x <= t)
        curve.append((t, 100.0 * solved / total))
    return curve


def time_to_ratio(
    results: Sequence[ProblemResult],
    ratios: Sequence[int] = DEFAULT_RATIO_THRESHOLDS,
) -> list[tuple[int, Optional[float]]]:
    """Smallest recorded per-problem time by which each solved percentage is
    reached, or None when the run never gets there."""
    if not results:
        raise ValueError("no results")
    total = len(results)
    times = sorted(r.time_s for r in results if r.solved)
    table: list[tuple[int, Optional[float]]] = []
    for ratio in ratios:
        need = math.ceil(ratio * total / 100)
        table.append((ratio, times[need - 1] if 0 < need <= len(times) else None))
    return table


def length_matrix(
    results: Sequence[ProblemResult],
    truth_lengths: Sequence[int],
) -> dict[int, dict[int, float]]:
    """Rows: ground-truth length; columns: solution length; entries: percent
    of the row's solved problems. Every row sums to 100."""
    counts: dict[int, Counter] = {}
    for r, gt_len in zip(results, truth_lengths):
        if not r.solved:
            continue
        counts.setdefault(gt_len, Counter())[len(r.program.statements)] += 1
    matrix: dict[int, dict[int, float]] = {}
    for gt_len in sorted(counts):
        row_total = sum(counts[gt_len].values())
        matrix[gt_len] = {
            pred_len: 100.0 * c / row_total
            for pred_len, c in sorted(counts[gt_len].items())
        }
    return matrix


def function_failure_stats(
    results: Sequence[ProblemResult],
    truths: Sequence[Program],
) -> list[tuple[str, float, int, int]]:
    """(class name, failure ratio, unsolved occurrences, total occurrences)
    per function class appearing in the ground truth, hardest first."""
    total: Counter = Counter()
    failed: Counter = Counter()
    for r, truth in zip(results, truths):
        seen = set(program_tokens(truth))
        for fc_idx in seen:
            total[fc_idx] += 1
            if not r.solved:
                failed[fc_idx] += 1
    rows = []
    for fc_idx in total:
        rows.append(
            (
                FUNCTION_CLASSES[fc_idx].name,
                failed[fc_idx] / total[fc_idx],
                failed[fc_idx],
                total[fc_idx],
                fc_idx,
            )
        )
    rows.sort(key=lambda row: (-row[1], row[4]))
    return [(name, ratio, bad, tot) for name, ratio, bad, tot, _ in rows]


def assemble_report(
    results: Sequence[ProblemResult],
    truths: Sequence[Program],
    corpus_stats: CorpusStats,
    zero_times: bool = False,
    time_thresholds: Sequence[float] = DEFAULT_TIME_THRESHOLDS,
    ratio_thresholds: Sequence[int] = DEFAULT_RATIO_THRESHOLDS,
) -> dict:
    if len(results) != len(truths):
        raise ValueError("results and truths must align")
    if zero_times:
        results = [
            ProblemResult(r.solved, 0.0, r.program, r.nodes, r.restarts) for r in results
        ]
    truth_lengths = [len(p.statements) for p in truths]
    ciders = []
    per_problem = []
    for r, truth in zip(results, truths):
        entry = {
            "status": "solved" if r.solved else "timeout",
            "time_s": r.time_s,
            "gt_len": len(truth.statements),
            "pred_len": len(r.program.statements) if r.solved else None,
            "cider": None,
        }
        if r.solved:
            entry["cider"] = cider_score(r.program, truth, corpus_stats)
            ciders.append(entry["cider"])
        per_problem.append(entry)

    return {
        "problems": len(results),
        "solved": sum(1 for r in results if r.solved),
        "curve": [[t, pct] for t, pct in solved_ratio_curve(results, time_thresholds)],
        "time_to_ratio": [[ratio, t] for ratio, t in time_to_ratio(results, ratio_thresholds)],
        "length_matrix": {
            str(gt): {str(p): pct for p, pct in row.items()}
            for gt, row in length_matrix(results, truth_lengths).items()
        },
        "cider_mean": sum(ciders) / len(ciders) if ciders else None,
        "function_failures": [list(row) for row in function_failure_stats(results, truths)],
        "per_problem": per_problem,
    }
