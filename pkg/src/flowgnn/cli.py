"""Command-line pipelines: generate, train, evaluate, report.

Every command writes a run manifest before doing any work; re-running with
``--from-manifest`` replays the recorded command and reproduces its output
files byte for byte in single-threaded mode. All randomness flows from the
manifest's seed; when ``--seed`` is omitted one is drawn from OS entropy
and recorded.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import multiprocessing
import os
import secrets
import sys

import numpy as np

from . import __version__
from .cells import CellKind
from .errors import ConfigError, DataError, NumericError, SimulationError
from .model import ModelConfig, build_params, load_checkpoint, save_checkpoint
from .netgraph import (
    QueueConfig,
    Sample,
    TrafficConfig,
    TRAFFIC_MODELS,
    POLICIES,
    build_sample,
    fat_tree_topology,
    grid_topology,
    power_law_topology,
    read_dataset,
    serialize_sample,
)
from .numcore import AdamState
from .report import Series, grouped_bar_chart, line_chart, write_rows
from .simulator import SimConfig, label_sample
from .trainer import TrainConfig, evaluate, train

DEFAULT_EPOCHS = {"delay": 50, "jitter": 100, "loss": 50, "multi": 50}


def _out_path(path: str) -> str:
    base = os.environ.get("FLOWGNN_OUT_DIR")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _parse_range(text: str, kind=float) -> float | tuple:
    """'400..2000' becomes a (lo, hi) range, '400' a single value."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return (kind(lo), kind(hi))
    return kind(text)


def _write_manifest(path, command, argv, resolved, inputs=None, artifacts=None):
    payload = {
        "tool": "flowgnn",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "resolved": resolved,
        "inputs": inputs or {},
        "artifacts": artifacts or [],
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


def _finalize_manifest(path, payload, output_hashes, wall_clock_s=None):
    # wall time is informational; replay identity is defined over the data
    # artifacts, not the manifest itself
    payload = dict(payload)
    payload["output_hashes"] = output_hashes
    if wall_clock_s is not None:
        payload["wall_clock_s"] = wall_clock_s
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    return secrets.randbits(32)


# ---------------------------------------------------------------------------
# generate


def _sample_seeds(root_seed: int, index: int) -> tuple[int, int, int]:
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=(index,))
    a, b, c = ss.generate_state(3, dtype=np.uint64)
    return int(a), int(b), int(c)


def _generate_one(task) -> str:
    (index, seed, cfg) = task
    topo_seed, sample_seed, sim_seed = _sample_seeds(seed, index)
    rng = np.random.default_rng(topo_seed)
    kind = cfg["topology"]
    if kind == "power-law":
        lo, hi = cfg["nodes"] if isinstance(cfg["nodes"], tuple) else (cfg["nodes"], cfg["nodes"])
        n = int(rng.integers(int(lo), int(hi) + 1))
        topo = power_law_topology(n, seed=topo_seed, capacity_bps=cfg["capacity"])
    elif kind == "fat-tree":
        topo = fat_tree_topology(cfg["k"], capacity_bps=cfg["capacity"])
    else:
        topo = grid_topology(cfg["rows"], cfg["cols"], capacity_bps=cfg["capacity"])

    models = tuple(TRAFFIC_MODELS) if cfg["traffic"] == "mixed" else (cfg["traffic"],)
    policies = tuple(POLICIES) if cfg["policy"] == "mixed" else (cfg["policy"],)
    sample = build_sample(
        topo,
        cfg["flows"],
        TrafficConfig(models=models, max_lambda_bps=cfg["max_lambda"]),
        QueueConfig(policies=policies, buffer_bits=cfg["queue_size"]),
        seed=sample_seed,
    )
    labeled = label_sample(
        sample,
        SimConfig(duration_s=cfg["duration"], warmup_s=cfg["warmup"], seed=sim_seed),
    )
    return serialize_sample(labeled)


def cmd_generate(args, argv) -> int:
    seed = _resolve_seed(args)
    out = _out_path(args.out)
    cfg = {
        "topology": args.topology,
        "nodes": _parse_range(args.nodes, int) if args.nodes else None,
        "k": args.k,
        "rows": args.rows,
        "cols": args.cols,
        "samples": args.samples,
        "flows": args.flows,
        "traffic": args.traffic,
        "policy": args.policy,
        "queue_size": _parse_range(args.queue_size),
        "capacity": args.capacity,
        "max_lambda": _parse_range(args.max_lambda),
        "duration": args.duration,
        "warmup": args.warmup,
    }
    if args.topology == "power-law" and cfg["nodes"] is None:
        raise ConfigError("power-law topologies need --nodes (for example --nodes 8..12)")
    if args.topology == "fat-tree" and args.k is None:
        raise ConfigError("fat-tree topologies need --k")
    if args.topology == "grid" and (args.rows is None or args.cols is None):
        raise ConfigError("grid topologies need --rows and --cols")

    manifest_path = out + ".manifest.json"
    resolved = {"seed": seed, "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()}, "out": out}
    payload = _write_manifest(manifest_path, "generate", argv, resolved, artifacts=[out])

    tasks = [(i, seed, cfg) for i in range(args.samples)]
    if args.workers > 1:
        with multiprocessing.Pool(args.workers) as pool:
            lines = pool.map(_generate_one, tasks)
    else:
        lines = [_generate_one(t) for t in tasks]
    with open(out, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")

    _finalize_manifest(manifest_path, payload, {out: _sha256_file(out)})
    print(f"wrote {args.samples} labeled samples to {out} (seed {seed})")
    return 0


# ---------------------------------------------------------------------------
# train / evaluate


def _run_identity_hash(model_config: ModelConfig, task: str, lr: float, batch: int) -> str:
    payload = {"model": model_config.to_json(), "task": task, "lr": lr, "batch": batch}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _split_dataset(samples: list[Sample], val_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_val = max(1, int(round(val_fraction * len(samples)))) if len(samples) > 1 else 0
    val_idx = set(int(i) for i in order[:n_val])
    train_set = [samples[i] for i in range(len(samples)) if i not in val_idx]
    val_set = [samples[i] for i in sorted(val_idx)]
    return train_set, val_set


def _metrics_rows(metrics, task: str, epoch_offset: int = 0):
    rows = []
    for e, v in enumerate(metrics.train_loss):
        rows.append([e + epoch_offset, "train", task, repr(v)])
    for e, v in enumerate(metrics.val_loss):
        rows.append([e + epoch_offset, "val", task, repr(v)])
    for t, entry in sorted(metrics.task_metrics.items()):
        rows.append(["summary", "val", f"{t}_mape", repr(entry["mape"])])
        rows.append(["summary", "val", f"{t}_mae", repr(entry["mae"])])
    return rows


def _save_state(path, params, adam, train_cfg, epoch_offset, train_loss, val_loss, run_hash):
    tensors = {
        name: {"shape": list(t.values.shape), "values": t.values.reshape(-1).tolist()}
        for name, t in params.tensors.items()
    }
    names = list(params.tensors)
    payload = {
        "format_version": 1,
        "run_hash": run_hash,
        "model_config": params.config.to_json(),
        "train_config": train_cfg.to_json(),
        "epoch_offset": epoch_offset,
        "train_loss": train_loss,
        "val_loss": val_loss,
        "tensors": tensors,
        "adam": {
            "t": adam.t,
            "m": {n: m.reshape(-1).tolist() for n, m in zip(names, adam.m or [])},
            "v": {n: v.reshape(-1).tolist() for n, v in zip(names, adam.v or [])},
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def _load_state(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as err:
        raise DataError(f"cannot read training state {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise DataError(f"malformed training state: {err.msg} at byte offset {err.pos}") from err


def cmd_train(args, argv) -> int:
    seed = _resolve_seed(args)
    out_dir = _out_path(args.out)
    os.makedirs(out_dir, exist_ok=True)
    dataset_path = _out_path(args.dataset)
    samples = read_dataset(dataset_path)
    if not samples:
        raise DataError(f"dataset {dataset_path} is empty")
    for s in samples:
        if s.labels is None:
            raise DataError("training needs a labeled dataset")

    epochs = args.epochs if args.epochs is not None else DEFAULT_EPOCHS[args.task]
    model_config = ModelConfig(
        hidden_dim=args.hidden,
        iterations=args.iterations,
        cell_kind=CellKind.parse(args.cell),
        readout_hidden=args.readout_hidden or args.hidden,
        seed=seed,
    )
    train_config = TrainConfig(
        learning_rate=args.lr,
        epochs=epochs,
        samples_per_update=args.batch,
        task=args.task,
        task_weights={"delay": 1.0, "jitter": 1.0, "loss": 1.0} if args.task == "multi" else {},
        seed=seed,
        patience=args.patience,
    )
    run_hash = _run_identity_hash(model_config, args.task, args.lr, args.batch)

    initial_params = None
    adam = AdamState(learning_rate=args.lr)
    epoch_offset = 0
    prev_train_loss: list[float] = []
    prev_val_loss: list[float] = []
    if args.resume:
        state = _load_state(_out_path(args.resume))
        stored_model = ModelConfig.from_json(state["model_config"])
        stored_hash = _run_identity_hash(
            stored_model,
            state["train_config"]["task"],
            state["train_config"]["learning_rate"],
            state["train_config"]["samples_per_update"],
        )
        if state.get("run_hash") != run_hash or stored_hash != run_hash:
            raise ConfigError(
                "resume state does not match this run's configuration "
                f"(state {state.get('run_hash', '?')[:12]} vs flags {run_hash[:12]})"
            )
        model_config = stored_model
        initial_params = build_params(model_config)
        initial_params.load_values(
            {
                name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
                for name, entry in state["tensors"].items()
            }
        )
        names = list(initial_params.tensors)
        adam.t = int(state["adam"]["t"])
        if state["adam"]["m"]:
            adam.m = [
                np.asarray(state["adam"]["m"][n]).reshape(initial_params.tensors[n].values.shape)
                for n in names
            ]
            adam.v = [
                np.asarray(state["adam"]["v"][n]).reshape(initial_params.tensors[n].values.shape)
                for n in names
            ]
        epoch_offset = int(state["epoch_offset"])
        prev_train_loss = list(state["train_loss"])
        prev_val_loss = list(state["val_loss"])

    manifest_path = os.path.join(out_dir, "manifest.json")
    resolved = {
        "seed": seed,
        "model_config": model_config.to_json(),
        "train_config": train_config.to_json(),
        "run_hash": run_hash,
        "val_fraction": args.val_fraction,
        "resume": args.resume,
        "out": out_dir,
    }
    artifacts = [
        os.path.join(out_dir, "checkpoint.json"),
        os.path.join(out_dir, "state.json"),
        os.path.join(out_dir, "metrics.csv"),
    ]
    payload = _write_manifest(
        manifest_path,
        "train",
        argv,
        resolved,
        inputs={"dataset": dataset_path, "dataset_sha256": _sha256_file(dataset_path)},
        artifacts=artifacts,
    )

    train_set, val_set = _split_dataset(samples, args.val_fraction, seed)
    params, metrics = train(
        train_set, val_set, model_config, train_config,
        initial_params=initial_params, adam_state=adam,
    )

    save_checkpoint(params, artifacts[0])
    _save_state(
        artifacts[1],
        params,
        adam,
        train_config,
        epoch_offset + len(metrics.train_loss),
        prev_train_loss + metrics.train_loss,
        prev_val_loss + metrics.val_loss,
        run_hash,
    )
    # the state file keeps the full series so a resumed run's CSV continues
    # the original epoch numbering
    all_metrics_rows = []
    for e, v in enumerate(prev_train_loss):
        all_metrics_rows.append([e, "train", args.task, repr(v)])
    for e, v in enumerate(prev_val_loss):
        all_metrics_rows.append([e, "val", args.task, repr(v)])
    all_metrics_rows += _metrics_rows(metrics, args.task, epoch_offset=epoch_offset)
    write_rows(artifacts[2], ["epoch", "split", "task", "value"], all_metrics_rows)

    _finalize_manifest(
        manifest_path,
        payload,
        {p: _sha256_file(p) for p in artifacts},
        wall_clock_s=metrics.wall_clock_s,
    )
    summary = {t: round(m["mape"], 6) for t, m in metrics.task_metrics.items()}
    print(f"trained {args.cell} on {len(train_set)} samples ({len(val_set)} validation); val MAPE {summary}")
    return 0


def cmd_evaluate(args, argv) -> int:
    out_dir = _out_path(args.out)
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = _out_path(args.checkpoint)
    dataset_path = _out_path(args.dataset)
    params = load_checkpoint(checkpoint_path)
    samples = read_dataset(dataset_path)
    for s in samples:
        if s.labels is None:
            raise DataError("evaluation needs a labeled dataset")

    manifest_path = os.path.join(out_dir, "manifest.json")
    metrics_path = os.path.join(out_dir, "metrics.csv")
    payload = _write_manifest(
        manifest_path,
        "evaluate",
        argv,
        {"task": args.task, "out": out_dir, "model_config": params.config.to_json()},
        inputs={
            "dataset": dataset_path,
            "dataset_sha256": _sha256_file(dataset_path),
            "checkpoint": checkpoint_path,
            "checkpoint_sha256": _sha256_file(checkpoint_path),
        },
        artifacts=[metrics_path],
    )
    metrics = evaluate(params, samples, args.task)
    write_rows(metrics_path, ["epoch", "split", "task", "value"], _metrics_rows(metrics, args.task))
    _finalize_manifest(
        manifest_path,
        payload,
        {metrics_path: _sha256_file(metrics_path)},
        wall_clock_s=metrics.wall_clock_s,
    )
    entry = metrics.task_metrics[args.task]
    print(f"evaluated {args.task} on {entry['flows']} flows: MAPE {entry['mape']:.6f}, MAE {entry['mae']:.6g}")
    return 0


# ---------------------------------------------------------------------------
# report


def _load_run(run_dir):
    manifest_path = os.path.join(run_dir, "manifest.json")
    metrics_path = os.path.join(run_dir, "metrics.csv")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as err:
        raise DataError(f"cannot read run manifest in {run_dir}: {err}") from err
    series: dict[str, list[tuple[int, float]]] = {"train": [], "val": []}
    summary: dict[str, float] = {}
    task = None
    try:
        with open(metrics_path, "r", encoding="utf-8") as fh:
            header = fh.readline()
            for line in fh:
                epoch, split, t, value = line.rstrip("\n").split(",")
                if epoch == "summary":
                    summary[t] = float(value)
                else:
                    series[split].append((int(epoch), float(value)))
                    task = t
    except OSError as err:
        raise DataError(f"cannot read metrics in {run_dir}: {err}") from err
    cell = manifest.get("resolved", {}).get("model_config", {}).get("cell_kind", "?")
    return {"dir": run_dir, "cell": cell, "task": task, "series": series, "summary": summary, "manifest": manifest}


def cmd_report(args, argv) -> int:
    out_dir = _out_path(args.out)
    os.makedirs(out_dir, exist_ok=True)
    runs = [_load_run(_out_path(d)) for d in args.runs]
    if not runs:
        raise ConfigError("report needs at least one run directory")

    manifest_path = os.path.join(out_dir, "manifest.json")
    payload = _write_manifest(
        manifest_path,
        "report",
        argv,
        {"runs": [r["dir"] for r in runs], "out": out_dir},
        inputs={r["dir"]: r["manifest"].get("output_hashes", {}) for r in runs},
    )

    artifacts = []
    # per-task comparison tables: cell kinds as columns
    metrics_by_task: dict[str, dict[str, float]] = {}
    for run in runs:
        for key, value in run["summary"].items():
            task, metric = key.rsplit("_", 1)
            metrics_by_task.setdefault(f"{task}_{metric}", {})[run["cell"]] = value
    for key in sorted(metrics_by_task):
        cells = sorted(metrics_by_task[key])
        table_path = os.path.join(out_dir, f"comparison_{key}.csv")
        write_rows(
            table_path,
            ["metric"] + cells,
            [[key] + [repr(metrics_by_task[key][c]) for c in cells]],
        )
        artifacts.append(table_path)

    # validation-loss-per-epoch curves
    curves = [
        Series(
            label=f"{run['cell']} ({os.path.basename(run['dir'])})",
            xs=[float(e) for e, _ in run["series"]["val"]],
            ys=[v for _, v in run["series"]["val"]],
        )
        for run in runs
        if run["series"]["val"]
    ]
    if curves:
        chart_path = os.path.join(out_dir, "loss_curves.svg")
        line_chart(chart_path, curves, "Validation loss per epoch", "epoch", "loss")
        artifacts.append(chart_path)

    # final-metric bars grouped per task
    groups = []
    for key in sorted(metrics_by_task):
        bars = [(cell, metrics_by_task[key][cell]) for cell in sorted(metrics_by_task[key])]
        groups.append((key, bars))
    if groups:
        bars_path = os.path.join(out_dir, "final_metrics.svg")
        grouped_bar_chart(bars_path, groups, "Final validation metrics", "value")
        artifacts.append(bars_path)

    _finalize_manifest(manifest_path, payload, {p: _sha256_file(p) for p in artifacts})
    print(f"report written to {out_dir} ({len(artifacts)} artifacts)")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowgnn",
        description="Flow-level network performance prediction toolkit",
    )
    parser.add_argument("--from-manifest", help="replay a recorded run", default=None)
    sub = parser.add_subparsers(dest="command")

    g = sub.add_parser("generate", help="generate a labeled dataset with the packet simulator")
    g.add_argument("--topology", choices=["power-law", "fat-tree", "grid"], required=True)
    g.add_argument("--nodes", help="node count or range, e.g. 10 or 8..12")
    g.add_argument("--k", type=int, help="fat-tree arity")
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.add_argument("--samples", type=int, default=1)
    g.add_argument("--flows", type=int, default=10)
    g.add_argument("--traffic", choices=list(TRAFFIC_MODELS) + ["mixed"], default="poisson")
    g.add_argument("--policy", choices=list(POLICIES) + ["mixed"], default="fifo")
    g.add_argument("--queue-size", default="32000", help="buffer bits, value or range")
    g.add_argument("--capacity", type=float, default=4000.0, help="link capacity in bits/s")
    g.add_argument("--max-lambda", default="800..2400", help="per-sample traffic intensity in bits/s")
    g.add_argument("--duration", type=float, default=200.0, help="simulated seconds per sample")
    g.add_argument("--warmup", type=float, default=None, help="defaults to 10%% of duration")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a labeled dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--cell", choices=["rnn", "gru", "lstm"], default="gru")
    t.add_argument("--task", choices=["delay", "jitter", "loss", "multi"], default="delay")
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--iterations", type=int, default=8)
    t.add_argument("--readout-hidden", type=int, default=None)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--epochs", type=int, default=None, help="task-specific default when omitted")
    t.add_argument("--batch", type=int, default=8, help="samples per gradient update")
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--resume", default=None, help="state.json of a previous run")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a labeled dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--task", choices=["delay", "jitter", "loss"], default="delay")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="comparison tables and SVG charts across runs")
    r.add_argument("--runs", nargs="+", required=True, help="train/evaluate output directories")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return parser


def _replay_from_manifest(path: str) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as err:
        raise DataError(f"cannot read manifest {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise DataError(f"malformed manifest: {err.msg} at byte offset {err.pos}") from err
    argv = list(manifest.get("argv", []))
    if not argv:
        raise DataError(f"manifest {path} records no command line")
    seed = manifest.get("resolved", {}).get("seed")
    if seed is not None and "--seed" not in argv:
        argv += ["--seed", str(seed)]
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.from_manifest:
        argv = _replay_from_manifest(_out_path(args.from_manifest))
        args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.func(args, argv)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (DataError, SimulationError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
