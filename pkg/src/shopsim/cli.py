"""Command-line entry point for the full pipeline.

Subcommands: sweep, collect, train, eval, tune, analyze. Every run writes a
JSON manifest (atomically, last) listing its inputs and produced artifacts;
exit code 0 means the manifest exists. Seed and output directory may also be
set through the SHOPSIM_SEED / SHOPSIM_OUT environment variables.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import workflows
from .agents import DEFAULT_HYPERPARAMS, POLICY_KINDS, Policy, PolicySpec
from .catalog import generate_catalog, generate_customers
from .config import ConfigError, SimConfig, config_hash, load_config
from .dataset import OfflineDataset
from .features import rank_features
from .metrics import compute_metrics, load_eval_runs, save_eval_runs


class CliError(RuntimeError):
    """User-facing command failure with an actionable message."""


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("SHOPSIM_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seed_override(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SHOPSIM_SEED")
    return int(env) if env else None


def _load_sim_config(args) -> tuple[SimConfig, dict]:
    if not args.config:
        raise CliError("--config is required for this command")
    raw = load_config(args.config)
    cfg = SimConfig.from_dict(raw.get("sim", {}))
    seed = _seed_override(args)
    if seed is not None:
        cfg = cfg.replace(rng_seed=seed)
    return cfg, raw


def _write_manifest(out: Path, command: str, args, cfg_hash: str, seed,
                    outputs: list[Path], started: float) -> Path:
    manifest = {
        "command": command,
        "config_path": str(args.config) if args.config else None,
        "config_hash": cfg_hash,
        "master_seed": seed,
        "outputs": [str(p) for p in outputs],
        "elapsed_seconds": round(time.time() - started, 3),
    }
    path = out / f"manifest_{command}.json"
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, path)
    return path


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, quoting=csv.QUOTE_MINIMAL)
        writer.writeheader()
        writer.writerows(rows)


def _load_dataset(args) -> OfflineDataset:
    path = Path(args.dataset)
    if not path.exists():
        raise CliError(f"dataset not found: {path} (run `shopsim collect` first)")
    dataset = OfflineDataset.load(path)
    if args.config:
        cfg, _ = _load_sim_config(args)
        if config_hash(cfg) != config_hash(dataset.config):
            raise CliError("dataset was collected under a different config; "
                           "drop --config or point at the matching one")
    return dataset


# --- subcommands -------------------------------------------------------------


def cmd_sweep(args) -> list[Path]:
    cfg, raw = _load_sim_config(args)
    section = raw.get("sweep", {})
    levels = args.levels or section.get("levels") or list(cfg.action_grid)
    result = workflows.static_sweep(
        cfg, levels=[float(x) for x in levels],
        n_sims=args.sims or section.get("n_sims", 100),
        n_customers=args.customers or section.get("n_customers", 100),
        horizon=args.horizon or section.get("horizon", 70),
        window=args.window or section.get("window", 20),
        jobs=args.jobs)
    out = _out_dir(args)
    path = out / "sweep.csv"
    _write_csv(path, result.rows(),
               ["level", "revenue_mean", "revenue_se", "retention_mean", "retention_se"])
    return [path]


def cmd_collect(args) -> list[Path]:
    cfg, raw = _load_sim_config(args)
    section = raw.get("collect", {})
    dataset = workflows.collect_offline(
        cfg,
        batch_size=args.batch_size or section.get("batch_size", 100),
        n_batches=args.batches or section.get("n_batches", 10),
        horizon=args.horizon or section.get("horizon"),
        jobs=args.jobs)
    out = _out_dir(args)
    path = out / "dataset.npz"
    dataset.save(path)
    return [path]


def _parse_params(pairs: list[str]) -> dict:
    params = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise CliError(f"--param expects name=value, got {pair!r}")
        key, value = pair.split("=", 1)
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    return params


def cmd_train(args) -> list[Path]:
    dataset = _load_dataset(args)
    raw = load_config(args.config) if args.config else {}
    section = raw.get("train", {})
    params = dict(section.get("agents", {}).get(args.agent, {}))
    params.update(_parse_params(args.param))
    if args.agent == "static" and args.level is not None:
        params["level"] = args.level
    spec = PolicySpec(args.agent, params)
    n_agent = args.n_agents or section.get("n_agent", 10)

    out = _out_dir(args)
    paths = []
    from . import seeds
    for k in range(n_agent):
        agent_seed = seeds.mix_key(dataset.seed, seeds.TAG_POLICY, k)
        policy = workflows.train_policy(spec, dataset, agent_seed, args.n_train)
        path = out / f"ckpt_{args.agent}_{k:02d}.npz"
        policy.save(path)
        paths.append(path)
    return paths


def cmd_eval(args) -> list[Path]:
    dataset = _load_dataset(args)
    ckpts = []
    for pattern in args.checkpoints:
        p = Path(pattern)
        found = sorted(p.glob("ckpt_*.npz")) if p.is_dir() else [p]
        ckpts.extend(found)
    if not ckpts:
        raise CliError("no checkpoints found (run `shopsim train` first)")
    raw = load_config(args.config) if args.config else {}
    section = raw.get("eval", {})
    n_eval = args.n_eval or section.get("n_eval", 10)
    t_eval = args.t_eval or section.get("t_eval", 20)

    catalog = generate_catalog(dataset.config)
    population = generate_customers(dataset.config)
    runs = []
    for path in ckpts:
        if not path.exists():
            raise CliError(f"checkpoint not found: {path}")
        policy = Policy.load(path)
        runs.append(workflows.evaluate_policy(policy, dataset, catalog, population,
                                              n_eval, t_eval, agent_seed=policy.seed))
    kinds = {r.kind for r in runs}
    if len(kinds) > 1:
        raise CliError(f"checkpoints mix policy kinds: {sorted(kinds)}")
    out = _out_dir(args)
    path = out / f"eval_{runs[0].kind}.npz"
    save_eval_runs(path, runs)
    return [path]


def cmd_tune(args) -> list[Path]:
    dataset = _load_dataset(args)
    raw = load_config(args.config) if args.config else {}
    section = raw.get("tune", {})
    result = workflows.tune(
        args.agent, dataset,
        n_tune=args.n_tune or section.get("n_tune", 20),
        n_agent=section.get("n_agent", 3),
        n_eval=section.get("n_eval", 10),
        t_eval=section.get("t_eval", 20),
        jobs=args.jobs)
    out = _out_dir(args)
    best = out / f"tune_best_{args.agent}.json"
    best.write_text(json.dumps({"kind": result.kind, "best_trial": result.best_trial,
                                "best_objective": result.best_objective,
                                "best_params": result.best_params}, indent=2))
    log = out / f"tune_trials_{args.agent}.jsonl"
    with open(log, "w") as fh:
        for trial in result.trials:
            fh.write(json.dumps(trial) + "\n")
    return [best, log]


def cmd_analyze(args) -> list[Path]:
    dataset = _load_dataset(args)
    random_runs = load_eval_runs(Path(args.random_eval))
    if random_runs[0].kind != "random":
        raise CliError(f"--random-eval must hold random-policy runs, "
                       f"got {random_runs[0].kind!r}")
    eval_runs = {}
    for path in args.eval:
        runs = load_eval_runs(Path(path))
        eval_runs[runs[0].kind] = runs

    out = _out_dir(args)
    outputs = []
    metric_rows = []
    for kind, runs in eval_runs.items():
        report = compute_metrics(runs, random_runs)
        path = out / f"metrics_{kind}.json"
        path.write_text(report.to_json())
        outputs.append(path)
        for metric, value in report.normalized_mean.items():
            metric_rows.append({
                "policy": kind, "metric": metric,
                "raw_mean": report.raw_mean[metric], "raw_se": report.raw_se[metric],
                "normalized_mean": value,
                "normalized_se": report.normalized_se[metric],
                "p_value_revenue": report.p_value_revenue})
    csv_path = out / "metrics.csv"
    _write_csv(csv_path, metric_rows,
               ["policy", "metric", "raw_mean", "raw_se", "normalized_mean",
                "normalized_se", "p_value_revenue"])
    outputs.append(csv_path)

    catalog = generate_catalog(dataset.config)
    population = generate_customers(dataset.config)
    segments = workflows.segment_analysis(catalog, population, eval_runs, dataset)
    seg_path = out / "segments.json"
    seg_path.write_text(json.dumps(segments.to_dict(), indent=2, sort_keys=True))
    outputs.append(seg_path)

    T = dataset.horizon
    flat_h = dataset.features[:, :, :T, :].reshape(-1, dataset.features.shape[3])
    flat_r = dataset.rewards.reshape(-1)
    n = min(len(flat_r), args.mi_samples)
    ranking = rank_features(flat_h[:n], flat_r[:n])
    rank_path = out / "feature_ranking.csv"
    _write_csv(rank_path, [{"feature": k, "score": f"{v:.6f}"} for k, v in ranking],
               ["feature", "score"])
    outputs.append(rank_path)
    return outputs


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shopsim",
        description="Retail customer-journey simulator and coupon-targeting benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_dataset=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory (default: cwd)")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker parallelism")
        if needs_dataset:
            p.add_argument("--dataset", required=True, help="dataset.npz from collect")

    p = sub.add_parser("sweep", help="static coupon-policy benchmark grid")
    common(p)
    p.add_argument("--levels", type=lambda s: [float(x) for x in s.split(",")],
                   help="comma-separated coupon fractions")
    p.add_argument("--sims", type=int, help="number of independent simulations")
    p.add_argument("--customers", type=int, help="customers per simulation")
    p.add_argument("--horizon", type=int, help="steps per simulation")
    p.add_argument("--window", type=int, help="final steps contributing to metrics")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("collect", help="collect the offline dataset")
    common(p)
    p.add_argument("--batch-size", type=int, help="customers per batch (B)")
    p.add_argument("--batches", type=int, help="number of batches (N_batch)")
    p.add_argument("--horizon", type=int, help="episode length (T)")
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("train", help="train policy checkpoints on a dataset")
    common(p, needs_dataset=True)
    p.add_argument("--agent", required=True, choices=POLICY_KINDS)
    p.add_argument("--n-agents", type=int, help="independent repetitions")
    p.add_argument("--n-train", type=int, help="training epochs")
    p.add_argument("--level", type=float, help="coupon level for static policies")
    p.add_argument("--param", action="append", metavar="NAME=VALUE",
                   help="hyperparameter override (repeatable)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints by resuming snapshots")
    common(p, needs_dataset=True)
    p.add_argument("--checkpoints", nargs="+", required=True,
                   help="checkpoint files or directories")
    p.add_argument("--n-eval", type=int, help="episodes per policy")
    p.add_argument("--t-eval", type=int, help="steps per evaluation episode")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("tune", help="random-search hyperparameter tuning")
    common(p, needs_dataset=True)
    p.add_argument("--agent", required=True,
                   choices=[k for k in POLICY_KINDS if k not in ("static", "random")])
    p.add_argument("--n-tune", type=int, help="number of sampled configurations")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("analyze", help="metrics, segment and feature reports")
    common(p, needs_dataset=True)
    p.add_argument("--eval", nargs="+", required=True, help="eval_<kind>.npz files")
    p.add_argument("--random-eval", required=True, help="random-policy eval file")
    p.add_argument("--mi-samples", type=int, default=20000,
                   help="subsample size for the MI ranking")
    p.set_defaults(fn=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        outputs = args.fn(args)
        cfg_hash = None
        if args.config:
            cfg, _ = _load_sim_config(args)
            cfg_hash = config_hash(cfg)
        elif getattr(args, "dataset", None):
            cfg_hash = config_hash(OfflineDataset.load(args.dataset).config)
        manifest = _write_manifest(_out_dir(args), args.command, args, cfg_hash,
                                   _seed_override(args), outputs, started)
        print(f"wrote {len(outputs)} artifact(s); manifest: {manifest}")
        return 0
    except (CliError, ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
