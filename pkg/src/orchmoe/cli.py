"""Command-line entry points: train, gradcheck, compare, analyze.

Exit codes: 0 success, 2 validation, 3 numerical failure, 4 IO.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, ConfigError, ContractError, EvaluationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

log = logging.getLogger("orchmoe")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_train(args) -> int:
    from .config import load_config
    from .harness import train_run

    cfg = load_config(args.config, seed=args.seed, out=args.out)
    report = train_run(cfg)
    print(f"{cfg.architecture}: mean eval MSE {report['final_mean_eval_loss']:.6g}, "
          f"{report['trainable_params']} trainable params -> {Path(cfg.output_dir) / 'report.json'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_all

    results = run_all()
    width = max(len(n) for n in results)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err < TOLERANCE else "FAIL"
        print(f"{name.ljust(width)}  max_rel_err={err:.3e}  {status}")
        worst = max(worst, err)
    print(f"{len(results)} checks, worst {worst:.3e}, tolerance {TOLERANCE:g}")
    return EXIT_OK if worst < TOLERANCE else EXIT_NUMERIC


def cmd_compare(args) -> int:
    from .config import load_config
    from .harness import compare, format_table

    paths = list(args.configs or []) + list(args.config or [])
    configs = [load_config(p, seed=args.seed) for p in paths]
    out = args.out or configs[0].output_dir
    table = compare(configs, out_dir=out)
    sys.stdout.write(format_table(table))
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analysis import (
        AllocationSnapshot,
        aggregate_layers,
        cluster_tasks,
        cut_largest_gap,
        dendrogram_document,
        export_snapshot,
        normalize_rows,
        validate_json,
    )
    from .harness import make_suite, restore_estimator, task_skill_usage
    from .skill_router import eval_allocation, hard_allocation

    est, cfg, header = restore_estimator(args.checkpoint)
    out = Path(args.out or Path(args.checkpoint).parent / "analysis")
    out.mkdir(parents=True, exist_ok=True)
    step = int(header.get("rng", {}).get("step", 0))
    ext = args.format
    written = []
    if est.architecture == "orchmoe":
        mats = []
        for li, layer in enumerate(est.model_.layers):
            alloc = eval_allocation(layer.skill_alloc).data
            mats.append(alloc)
            snap = AllocationSnapshot(li, step, normalize_rows(alloc))
            export_snapshot(snap, out / f"allocation_layer{li}_normalized.{ext}", ext)
            hard = AllocationSnapshot(li, step, hard_allocation(layer.skill_alloc))
            export_snapshot(hard, out / f"allocation_layer{li}_hard.{ext}", ext)
            if ext == "json":
                validate_json(snap.to_dict(), "allocation_snapshot.schema.json")
                validate_json(hard.to_dict(), "allocation_snapshot.schema.json")
            written += [f"allocation_layer{li}_normalized.{ext}", f"allocation_layer{li}_hard.{ext}"]
        root = cluster_tasks(np.stack(mats))
        doc = dendrogram_document(root, cut_largest_gap(root), source="abstract-task allocation")
        validate_json(doc, "dendrogram.schema.json")
        (out / "dendrogram.json").write_text(json.dumps(doc, indent=1) + "\n")
        written.append("dendrogram.json")

        suite = make_suite(cfg)
        usage = task_skill_usage(est, suite)
        task_root = cluster_tasks(np.stack(usage))
        labels = cut_largest_gap(task_root)
        tdoc = dendrogram_document(task_root, labels, source="real-task skill usage")
        validate_json(tdoc, "dendrogram.schema.json")
        (out / "task_dendrogram.json").write_text(json.dumps(tdoc, indent=1) + "\n")
        usage_snap = AllocationSnapshot(None, step, aggregate_layers(np.stack(usage)))
        export_snapshot(usage_snap, out / f"task_skill_usage.{ext}", ext)
        written += ["task_dendrogram.json", f"task_skill_usage.{ext}"]
        (out / "planted_groups.json").write_text(json.dumps({"groups": suite.groups.tolist()}) + "\n")
        written.append("planted_groups.json")
    else:
        return _fail(EXIT_VALIDATION, f"analyze needs an orchmoe checkpoint, got {est.architecture}")
    for name in written:
        print(out / name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="orchmoe", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one architecture from a run config")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--out", type=Path)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gradcheck", help="run every registered finite-difference check")
    g.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("compare", help="train several configs on one suite and tabulate")
    c.add_argument("configs", nargs="*", type=Path)
    c.add_argument("--config", action="append", type=Path)
    c.add_argument("--out", type=Path)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("analyze", help="normalize allocations and cluster tasks from a checkpoint")
    a.add_argument("checkpoint", type=Path)
    a.add_argument("--out", type=Path)
    a.add_argument("--format", choices=("json", "csv"), default="json")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        return _fail(EXIT_VALIDATION, f"{getattr(args, 'config', '') or ''}: {e}".lstrip(": "))
    except CheckpointFormatError as e:
        return _fail(EXIT_VALIDATION, str(e))
    except EvaluationError as e:
        return _fail(EXIT_NUMERIC, str(e))
    except ContractError as e:
        return _fail(EXIT_VALIDATION, str(e))
    except OSError as e:
        return _fail(EXIT_IO, str(e))


if __name__ == "__main__":
    sys.exit(main())
