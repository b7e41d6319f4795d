"""Training, evaluation, transfer and comparison runs over synthetic suites."""

from __future__ import annotations

import copy
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .analysis import AllocationSnapshot, export_snapshot
from .checkpoint import encode, load_checkpoint, restore_into
from .config import PARAM_MATCH_TOLERANCE, RunConfig, config_from_dict, param_gap
from .data import SyntheticTaskSuite, generate_suite, spawn_tasks
from .errors import ContractError
from .estimator import MultiAdapterRegressor
from .model import param_count
from .skill_router import CounterRNG

logger = logging.getLogger(__name__)

REPORT_FORMAT = "orchmoe-run-report"
TRANSFER_SPAWN = 1
TRANSFER_PROTOCOL = "router-only"


def make_suite(cfg: RunConfig) -> SyntheticTaskSuite:
    s = cfg.suite
    return generate_suite(
        s.T_real, s.G, s.n_train, s.n_eval, cfg.model.d, s.noise_std, cfg.suite_seed,
        n_tokens=cfg.model.n_tokens, depth=cfg.model.depth, group_rank=s.group_rank,
        group_scale=s.group_scale, perturb_rank=s.perturb_rank, perturb_scale=s.perturb_scale,
        token_jitter=s.token_jitter,
    )


def make_estimator(cfg: RunConfig, base_weights) -> MultiAdapterRegressor:
    o, r = cfg.optimizer, cfg.router
    return MultiAdapterRegressor(
        architecture=cfg.architecture,
        base_weights=[np.asarray(w) for w in base_weights],
        n_abstract_tasks=cfg.n_abstract_tasks,
        n_skills=r.S,
        rank=r.r,
        top_k=r.k,
        lr_max=o.lr_max,
        weight_decay=o.weight_decay,
        warmup_ratio=o.warmup_ratio,
        epochs=o.epochs,
        batch_size=o.batch_size,
        random_state=cfg.seed,
    )


def expected_params(cfg: RunConfig) -> int:
    return param_count(
        cfg.architecture, cfg.model.d, cfg.model.depth, cfg.router.S, cfg.router.r,
        n_tasks=cfg.n_abstract_tasks, n_real_tasks=cfg.suite.T_real,
    )


def per_task_mse(est: MultiAdapterRegressor, x: np.ndarray, y: np.ndarray, task_offset: int = 0) -> list:
    """x, y shaped (tasks, n, n_tokens, d); one MSE per task."""
    out = []
    for t in range(x.shape[0]):
        ids = np.full(x.shape[1], t + task_offset, dtype=np.int64)
        out.append(est.mse(x[t], y[t], ids if est.architecture == "task-id" else None))
    return out


def task_skill_usage(est: MultiAdapterRegressor, suite: SyntheticTaskSuite) -> Optional[list]:
    """Per layer, a T_real x S matrix of mean eval-mode skill gates per real task."""
    if est.architecture != "orchmoe":
        return None
    per_layer = [np.zeros((suite.n_tasks, est.n_skills)) for _ in est.model_.layers]
    for t in range(suite.n_tasks):
        for li, r in enumerate(est.routing_summary(suite.eval_x[t])):
            per_layer[li][t] = r["gates"].mean(axis=0)
    return per_layer


def allocation_snapshots(est: MultiAdapterRegressor, x_eval: np.ndarray) -> list:
    if est.architecture != "orchmoe":
        return []
    snaps = []
    for li, r in enumerate(est.routing_summary(x_eval)):
        snaps.append(
            AllocationSnapshot(
                layer=li,
                step=int(est.step_),
                matrix=r["allocation"],
                task_weight_stats=r["task_weights"].mean(axis=0),
                raw_logit_means=r["task_logits"].mean(axis=0),
            )
        )
    return snaps


def check_param_match(configs: Sequence[RunConfig]) -> list:
    counts = [expected_params(c) for c in configs]
    if any(c.parameter_matched for c in configs):
        for i in range(len(counts)):
            for j in range(i + 1, len(counts)):
                gap = param_gap(counts[i], counts[j])
                if gap > PARAM_MATCH_TOLERANCE:
                    raise ContractError(
                        f"trainable counts differ by {gap:.1%} ({configs[i].architecture}: {counts[i]}, "
                        f"{configs[j].architecture}: {counts[j]}); limit is {PARAM_MATCH_TOLERANCE:.0%}"
                    )
    return counts


def train_run(cfg: RunConfig, out_dir=None, write: bool = True) -> dict:
    """Train one architecture on the configured suite and build its report.

    With ``write`` the report, checkpoint and final allocation snapshots go
    to ``out_dir`` (default: the config's output_dir).
    """
    suite = make_suite(cfg)
    est = make_estimator(cfg, suite.base_weights)
    x, y, ids = suite.flat("train")
    x_eval_flat = suite.eval_x.reshape((-1,) + suite.eval_x.shape[2:])
    eval_hist: list = []
    snapshots: list = []

    def on_epoch(epoch, e):
        eval_hist.append(per_task_mse(e, suite.eval_x, suite.eval_y))
        snapshots.extend(allocation_snapshots(e, x_eval_flat))
        logger.info("%s epoch %d: train %.6g eval %.6g", cfg.architecture, epoch, e.history_["train_loss"][-1], np.mean(eval_hist[-1]))

    est.fit(x, y, ids, callback=on_epoch)
    usage = task_skill_usage(est, suite)
    final = eval_hist[-1]
    report = {
        "format": REPORT_FORMAT,
        "version": 1,
        "config": cfg.to_dict(),
        "architecture": cfg.architecture,
        "trainable_params": est.trainable_count(),
        "suite_checksum": suite.checksum(),
        "train_loss": est.history_["train_loss"],
        "step_loss": est.history_["step_loss"],
        "eval_loss": eval_hist,
        "final_eval_loss": final,
        "final_mean_eval_loss": float(np.mean(final)),
        "allocation_snapshots": [s.to_dict() for s in snapshots],
        "task_skill_usage": None if usage is None else [u.tolist() for u in usage],
        "checkpoint": "checkpoint.bin",
        "transfer": None,
    }
    if cfg.transfer is not None and cfg.architecture != "task-id":
        new_suite = spawn_tasks(suite, cfg.transfer.n_new, TRANSFER_SPAWN)
        report["transfer"] = evaluate_transfer(est, suite, new_suite, cfg.transfer.n_shot, cfg.transfer.epochs)
    if write:
        out = Path(out_dir if out_dir is not None else cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        rng_state = {"seed": int(est.noise_.seed), "step": int(est.step_)}
        (out / "checkpoint.bin").write_bytes(encode(est.model_, cfg.to_dict(), rng_state))
        (out / "report.json").write_text(report_json(report))
        final_snaps = snapshots[-len(est.model_.layers):] if snapshots else []
        for s in final_snaps:
            export_snapshot(s, out / f"allocation_layer{s.layer}.json", "json")
    report["_estimator"] = est
    report["_suite"] = suite
    return report


def report_json(report: dict) -> str:
    public = {k: v for k, v in report.items() if not k.startswith("_")}
    return json.dumps(public, indent=1) + "\n"


def evaluate_transfer(
    source,
    train_suite: SyntheticTaskSuite,
    new_suite: SyntheticTaskSuite,
    n_shot: int,
    epochs: int = 5,
) -> dict:
    """Adapt only router parameters on ``n_shot`` samples per unseen task, then evaluate.

    ``source`` is a fitted estimator or a checkpoint path. Skills and base
    weights stay frozen; an architecture without routers is evaluated as is.
    """
    est = restore_estimator(source)[0] if isinstance(source, (str, Path)) else copy.deepcopy(source)
    overlap = set(map(tuple, train_suite.task_keys)) & set(map(tuple, new_suite.task_keys))
    if overlap:
        raise ContractError(f"transfer suite shares {len(overlap)} task(s) with the training suite, e.g. {sorted(overlap)[0]}")
    if est.architecture == "task-id":
        raise ContractError("task-id routing has no table rows for unseen tasks")
    if n_shot > new_suite.train_x.shape[1]:
        raise ContractError(f"n_shot={n_shot} exceeds the {new_suite.train_x.shape[1]} training samples per new task")
    if n_shot > 0 and epochs > 0:
        xs = new_suite.train_x[:, :n_shot].reshape((-1,) + new_suite.train_x.shape[2:])
        ys = new_suite.train_y[:, :n_shot].reshape(xs.shape)
        est.adapt_routers(xs, ys, epochs=epochs)
    losses = per_task_mse(est, new_suite.eval_x, new_suite.eval_y)
    return {
        "protocol": TRANSFER_PROTOCOL,
        "n_shot": int(n_shot),
        "epochs": int(epochs),
        "adapted_params": int(sum(p.data.size for p in est.model_.router_parameters())) if n_shot and epochs else 0,
        "per_task": losses,
        "mean": float(np.mean(losses)),
    }


def restore_estimator(path) -> tuple[MultiAdapterRegressor, RunConfig, dict]:
    """Rebuild a fitted estimator from a checkpoint file."""
    header, tensors = load_checkpoint(path)
    cfg = config_from_dict(header["config"])
    depth = cfg.model.depth
    base = [tensors[f"layer{i}.w0"] for i in range(depth)]
    est = make_estimator(cfg, base)
    est.model_ = est._build(cfg.suite.T_real)
    restore_into(est.model_, tensors)
    est.n_real_tasks_ = cfg.suite.T_real
    est.n_features_in_ = cfg.model.d
    rng = header.get("rng", {})
    est.noise_ = CounterRNG(rng.get("seed", cfg.seed))
    est.step_ = int(rng.get("step", 0))
    est.history_ = {"train_loss": [], "step_loss": []}
    return est, cfg, header


def _suite_signature(cfg: RunConfig) -> tuple:
    s = cfg.suite
    return (cfg.suite_seed, cfg.model.d, cfg.model.depth, cfg.model.n_tokens, s.T_real, s.G, s.n_train, s.n_eval,
            s.noise_std, s.group_rank, s.group_scale, s.perturb_rank, s.perturb_scale, s.token_jitter)


def compare(configs: Sequence[RunConfig], out_dir=None, write: bool = True) -> dict:
    """Train every config on one shared suite and tabulate final eval losses."""
    if len(configs) < 2:
        raise ContractError("compare needs at least two configs")
    sigs = {_suite_signature(c) for c in configs}
    if len(sigs) != 1:
        raise ContractError("configs describe different suites (seed or suite parameters differ)")
    counts = check_param_match(configs)
    rows = []
    for i, cfg in enumerate(configs):
        sub = None if out_dir is None else Path(out_dir) / f"run{i}_{cfg.architecture}"
        rep = train_run(cfg, out_dir=sub, write=write and sub is not None)
        rows.append(
            {
                "architecture": cfg.architecture,
                "trainable_params": rep["trainable_params"],
                "final_eval_loss": rep["final_eval_loss"],
                "mean_eval_loss": rep["final_mean_eval_loss"],
            }
        )
        assert rep["trainable_params"] == counts[i]
    table = {"suite_seed": configs[0].suite_seed, "rows": rows, "ranking": [r["architecture"] for r in sorted(rows, key=lambda r: r["mean_eval_loss"])]}
    if write and out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(json.dumps(table, indent=1) + "\n")
        (out / "comparison.txt").write_text(format_table(table))
    return table


def format_table(table: dict) -> str:
    rows = table["rows"]
    n_tasks = len(rows[0]["final_eval_loss"]) if rows else 0
    header = ["architecture", "params", "mean_mse"] + [f"task{t}" for t in range(n_tasks)]
    body = [
        [r["architecture"], str(r["trainable_params"]), f"{r['mean_eval_loss']:.6g}"] + [f"{v:.4g}" for v in r["final_eval_loss"]]
        for r in rows
    ]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in [header] + body]
    return "\n".join(lines) + "\n"
