"""Command line entry point: ``offline-pms <command> --config cfg.yaml``.

Commands
    gen-data   collect one replication's dataset and write it as JSONL
    train      fit every candidate on a dataset; write Q weights and greedy policies
    select     run pessimistic selection on a dataset; write the selection report
    evaluate   per-candidate estimates next to the exact true values
    bench      Monte Carlo benchmark; write the full report directory
    sweep      rerun the benchmark over values of one config parameter

Failures print a single JSON object on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from ..dataset import load_jsonl, save_jsonl
from ..learners import fqi_fit, greedy_policy
from ..mdp import policy_value_exact
from ..ope import fit_ratio, marginal_is_value, naive_greedy_score, wis_value
from ..selection import pessimistic_select
from .config import ExperimentConfig
from .experiments import make_dataset, run_benchmark, summarize, sweep
from .report import emit_report

EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig({})
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if getattr(args, "replications", None) is not None:
        cfg = cfg.with_overrides(replications=args.replications)
    return cfg


def _write_json(obj, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return str(path)


def _out(args, cfg, default: str) -> Path:
    return Path(args.out) if args.out else cfg.output_dir / default


def _load_data(args, cfg):
    if args.data:
        return load_jsonl(args.data)
    return make_dataset(cfg, args.replication)


def cmd_gen_data(args) -> dict:
    cfg = _config(args)
    ds = make_dataset(cfg, args.replication)
    ds.meta.update(seed=cfg.replication_seed(args.replication), config_hash=cfg.config_hash())
    path = _out(args, cfg, f"data_rep{args.replication}.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(ds, path)
    return {"path": str(path), "n_episodes": ds.n_episodes, "horizon": ds.horizon}


def cmd_train(args) -> dict:
    cfg = _config(args)
    mdp, _, _ = cfg.build_env()
    S, A = mdp.n_states, mdp.n_actions
    stats = _load_data(args, cfg).batch().stats(S, A)
    models = []
    for c in cfg.candidates():
        q = fqi_fit(stats, c, S, A)
        models.append({"id": c.id, "q": q.to_dict(), "greedy_actions": greedy_policy(q).greedy_actions().tolist()})
    path = _write_json({"config_hash": cfg.config_hash(), "models": models}, _out(args, cfg, "models.json"))
    return {"path": path, "n_models": len(models)}


def cmd_select(args) -> dict:
    cfg = _config(args)
    mdp, _, _ = cfg.build_env()
    report = pessimistic_select(_load_data(args, cfg), cfg.candidates(), cfg.selection_config(), mdp.init_dist, mdp.n_actions)
    doc = report.to_dict()
    doc["config_hash"] = cfg.config_hash()
    doc["chosen_ids"] = {k: report.candidate_ids[i] for k, i in report.chosen.items()}
    path = _write_json(doc, _out(args, cfg, "selection.json"))
    return {"path": path, "chosen": doc["chosen_ids"]}


def cmd_evaluate(args) -> dict:
    cfg = _config(args)
    mdp, _, _ = cfg.build_env()
    S, A, nu = mdp.n_states, mdp.n_actions, mdp.init_dist
    ds = _load_data(args, cfg)
    cands, sel = cfg.candidates(), cfg.selection_config()
    report = pessimistic_select(ds, cands, sel, nu, A)
    full = ds.batch()
    stats = full.stats(S, A)
    rows = []
    for i, c in enumerate(cands):
        q = fqi_fit(stats, c, S, A)
        pi = greedy_policy(q)
        omega = fit_ratio(stats, pi, nu, sel.ratio_features, c.gamma, sel.lambda_omega, sel.clip_bounds)
        rows.append(
            {
                "id": c.id,
                "true_value": policy_value_exact(mdp, pi),
                "dr_value": float(report.values[i]),
                "se": float(report.se[i]),
                "lower": float(report.lower[i]),
                "naive": naive_greedy_score(q, pi, nu),
                "is": marginal_is_value(omega, full),
                "wis": wis_value(omega, full),
            }
        )
    path = _write_json({"config_hash": cfg.config_hash(), "candidates": rows}, _out(args, cfg, "evaluation.json"))
    return {"path": path, "n_candidates": len(rows)}


def cmd_bench(args) -> dict:
    cfg = _config(args)
    result, summary = run_benchmark(cfg, workers=args.workers)
    out = Path(args.out) if args.out else cfg.output_dir
    files = emit_report(result.records, out, config=cfg, summary=summary, timings=result.timings)
    return {
        "out_dir": str(out),
        "files": sorted(files),
        "n_replications": len(result.records),
        "n_errors": len(result.errors),
        "mean_regret": {k: v["mean"] for k, v in summary.get("regret", {}).items()},
    }


def cmd_sweep(args) -> dict:
    cfg = _config(args)
    spec = cfg.raw.get("sweep") or {}
    param = args.param or spec.get("param")
    values = [yaml.safe_load(v) for v in args.values] if args.values else spec.get("values")
    if not param or not values:
        raise UsageError("sweep needs a parameter and values (--param/--values or a 'sweep' config section)")
    rows = sweep(cfg, param, values, workers=args.workers)
    out = Path(args.out) if args.out else cfg.output_dir
    records = [r for row in rows for r in row["records"]]
    files = emit_report(records, out, config=cfg, summary=summarize(records), sweeps=rows)
    return {
        "out_dir": str(out),
        "files": sorted(files),
        "param": param,
        "mean_regret": {str(r["value"]): {k: v["mean"] for k, v in r["summary"].get("regret", {}).items()} for r in rows},
    }


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="offline-pms", description="Pessimistic model selection for offline RL.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, data=False, workers=False):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
        sp.add_argument("--out", help="output file or directory")
        sp.add_argument("--seed", type=int, help="override the master seed")
        if data:
            sp.add_argument("--data", help="JSONL dataset; generated from the config when omitted")
        if data or name == "gen-data":
            sp.add_argument("--replication", type=int, default=0, help="replication index for seeding")
        if workers:
            sp.add_argument("--replications", type=int, help="override the replication count")
            sp.add_argument("--workers", type=int, help="worker processes (env OFFLINE_PMS_THREADS)")
        sp.set_defaults(func=func)
        return sp

    add("gen-data", cmd_gen_data, "collect a dataset")
    add("train", cmd_train, "fit every candidate", data=True)
    add("select", cmd_select, "pessimistic selection on one dataset", data=True)
    add("evaluate", cmd_evaluate, "estimates vs exact values", data=True)
    add("bench", cmd_bench, "Monte Carlo benchmark", workers=True)
    sw = add("sweep", cmd_sweep, "benchmark over parameter values", workers=True)
    sw.add_argument("--param", help="dotted config key, e.g. data.n_episodes")
    sw.add_argument("--values", nargs="+", help="values (parsed as YAML scalars)")
    return p


def main(argv=None) -> int:
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        result = args.func(args)
    except UsageError as exc:
        _fail(command, "UsageError", str(exc))
        return EXIT_USAGE
    except Exception as exc:
        _fail(command, type(exc).__name__, str(exc))
        return EXIT_FAILURE
    print(json.dumps({"ok": True, "command": command, **result}, sort_keys=True))
    return 0


def _fail(command, kind, message) -> None:
    print(json.dumps({"ok": False, "command": command, "error": kind, "message": message}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
