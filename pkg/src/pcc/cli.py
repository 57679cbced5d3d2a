"""Command-line harness: corpus generation, guide training, synthesis runs,
and report assembly. Exit codes: 0 success, 1 diagnostic, 2 internal error."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import datagen, metrics
from .dsl import ParseError, format_program, parse_program
from .env import Example
from .model import CheckpointError, NeuralGuide, load_checkpoint, save_checkpoint
from .search import CABConfig, DFSConfig, SearchStatus, cab, dfs
from .training import TrainConfig, fit

log = logging.getLogger("pcc")


class CLIError(Exception):
    """Bad flags or files; reported as a diagnostic with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a training corpus")
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--max-len", type=int, required=True)
    gen.add_argument("--k", type=int, default=5)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--min-len", type=int, default=1)
    gen.add_argument("--disjoint-from", help="dataset whose behaviors to exclude")
    gen.add_argument("--out", required=True)

    train = sub.add_parser("train", help="train the search guide")
    train.add_argument("--dataset", required=True)
    train.add_argument("--v", type=int, default=8, help="slot count")
    train.add_argument("--epochs", type=int, default=10)
    train.add_argument("--lr", type=float, default=0.001)
    train.add_argument("--batch", type=int, default=100)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--no-function-head", action="store_true")
    train.add_argument("--no-drop-head", action="store_true")
    train.add_argument("--out", required=True)

    synth = sub.add_parser("synth", help="synthesize programs for a problem set")
    synth.add_argument("--model", required=True)
    synth.add_argument("--problems", required=True)
    synth.add_argument("--timeout", type=float, required=True)
    synth.add_argument("--max-len", type=int, required=True)
    synth.add_argument("--search", choices=("cab", "dfs"), default="cab")
    synth.add_argument("--dfs-width", type=int, default=10)
    synth.add_argument("--random-drop", action="store_true")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="score a synthesis run")
    ev.add_argument("--results", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--corpus", required=True, help="background corpus for similarity stats")
    ev.add_argument("--report", required=True)
    ev.add_argument("--no-times", action="store_true")
    return parser


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"no such file: {path}")
    return p


def cmd_gen(args) -> int:
    exclude: set[int] = set()
    if args.disjoint_from:
        _, other = datagen.read_dataset(_require_file(args.disjoint_from))
        exclude = {datagen.semantic_signature(r.program) for r in other if r.program}
        log.info("excluding %d behaviors from %s", len(exclude), args.disjoint_from)
    config = datagen.DatasetConfig(
        count=args.count, max_len=args.max_len, k=args.k, seed=args.seed, min_len=args.min_len
    )
    try:
        records = datagen.build_dataset(config, args.out, exclude_signatures=exclude)
    except (ValueError, datagen.DatagenError) as e:
        raise CLIError(str(e))
    log.info("wrote %d records to %s", len(records), args.out)
    return 0


def cmd_train(args) -> int:
    _, records = datagen.read_dataset(_require_file(args.dataset))
    if not records:
        raise CLIError("dataset has no records")
    rows = []
    skipped = 0
    for record in records:
        if record.program is None:
            raise CLIError("dataset record without a program cannot supervise training")
        try:
            rows.extend(datagen.make_training_rows(record, args.v))
        except datagen.TooManyLiveVarsError:
            skipped += 1
    if skipped:
        log.info("skipped %d records needing more than %d live slots", skipped, args.v)
    if not rows:
        raise CLIError("no usable training rows")
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        disable_function_head=args.no_function_head,
        disable_drop_head=args.no_drop_head,
    )
    log.info("training on %d rows (v=%d)", len(rows), args.v)
    params, history = fit(rows, config)
    save_checkpoint(
        params,
        args.out,
        extra_meta={
            "trained_rows": len(rows),
            "seed": args.seed,
            "no_function_head": args.no_function_head,
            "no_drop_head": args.no_drop_head,
        },
    )
    log.info(
        "saved %s (best epoch %d, held-out top-1 %.4f)",
        args.out,
        history.best_epoch,
        history.val_accuracy[history.best_epoch] if history.val_accuracy else float("nan"),
    )
    return 0


_WORKER_STATE: dict = {}


def _init_worker(params, args_dict):
    _WORKER_STATE["guide"] = NeuralGuide(params)
    _WORKER_STATE["args"] = args_dict


def _solve_one(job):
    index, examples = job
    guide = _WORKER_STATE["guide"]
    a = _WORKER_STATE["args"]
    rng = np.random.Generator(np.random.PCG64(a["seed"] + index)) if a["random_drop"] else None
    if a["search"] == "cab":
        result = cab(
            examples, guide, CABConfig(max_length=a["max_len"], timeout=a["timeout"]),
            rng=rng, random_drop=a["random_drop"],
        )
    else:
        result = dfs(
            examples, guide,
            DFSConfig(max_length=a["max_len"], timeout=a["timeout"], width=a["dfs_width"]),
            rng=rng, random_drop=a["random_drop"],
        )
    return index, {
        "status": result.status.value,
        "program": format_program(result.program) if result.program else None,
        "time_s": result.stats.wall_time,
        "nodes": result.stats.nodes,
        "restarts": result.stats.restarts,
    }


def cmd_synth(args) -> int:
    try:
        params = load_checkpoint(_require_file(args.model))
    except CheckpointError as e:
        raise CLIError(f"cannot load model: {e}")
    _, records = datagen.read_dataset(_require_file(args.problems))
    if not records:
        raise CLIError("problem file has no records")
    problems: list[tuple[int, list[Example]]] = [
        (i, list(r.examples)) for i, r in enumerate(records)
    ]
    args_dict = {
        "search": args.search,
        "max_len": args.max_len,
        "timeout": args.timeout,
        "dfs_width": args.dfs_width,
        "random_drop": args.random_drop,
        "seed": args.seed,
    }
    workers = int(os.environ.get("PCC_THREADS", "1"))
    outputs: list[dict] = [None] * len(problems)  # type: ignore[list-item]
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(params, args_dict)
        ) as pool:
            for index, line in pool.map(_solve_one, problems):
                outputs[index] = line
    else:
        _init_worker(params, args_dict)
        for i, job in enumerate(problems):
            index, line = _solve_one(job)
            outputs[index] = line
            if (i + 1) % 10 == 0:
                log.info("solved %d/%d problems",
                         sum(1 for o in outputs if o and o["status"] == "solved"), i + 1)
    with open(args.out, "w") as fh:
        for line in outputs:
            fh.write(json.dumps(line, separators=(",", ":")) + "\n")
    solved = sum(1 for o in outputs if o["status"] == "solved")
    log.info("%d/%d solved, results in %s", solved, len(outputs), args.out)
    return 0


def _read_results(path: Path) -> list[metrics.ProblemResult]:
    results = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                status = obj["status"]
                if status not in ("solved", "timeout"):
                    raise ValueError(f"bad status {status!r}")
                program = None
                if status == "solved":
                    program = parse_program(obj["program"])
                results.append(
                    metrics.ProblemResult(
                        solved=status == "solved",
                        time_s=float(obj["time_s"]),
                        program=program,
                        nodes=int(obj.get("nodes", 0)),
                        restarts=int(obj.get("restarts", 0)),
                    )
                )
            except (KeyError, ValueError, ParseError) as e:
                raise CLIError(f"{path}:{line_no}: bad result record: {e}")
    return results


def cmd_eval(args) -> int:
    results = _read_results(_require_file(args.results))
    if not results:
        raise CLIError("results file is empty")
    _, truth_records = datagen.read_dataset(_require_file(args.truth))
    truths = [r.program for r in truth_records]
    if any(p is None for p in truths):
        raise CLIError("truth records must carry programs")
    if len(results) != len(truths):
        raise CLIError(f"{len(results)} results vs {len(truths)} truth records")
    _, corpus_records = datagen.read_dataset(_require_file(args.corpus))
    corpus_programs = [r.program for r in corpus_records if r.program]
    if not corpus_programs:
        raise CLIError("corpus has no programs")
    stats = metrics.CorpusStats.from_programs(corpus_programs)
    report = metrics.assemble_report(results, truths, stats, zero_times=args.no_times)
    with open(args.report, "w") as fh:
        json.dump(report, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    print(f"solved {report['solved']}/{report['problems']}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "gen": cmd_gen,
            "train": cmd_train,
            "synth": cmd_synth,
            "eval": cmd_eval,
        }[args.command]
        return handler(args)
    except CLIError as e:
        print(f"pcc: error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
