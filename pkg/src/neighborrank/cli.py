"""Command-line pipeline: data generation, training, reranking, benchmarks.

Every command reads one JSON config, writes fixed filenames under the output
directory and is deterministic given config plus seed. Reports embed the
config hash and checkpoint hashes so a result can always be traced back to
its inputs. Exit codes: 0 success, 2 missing input file or checkpoint,
3 invalid configuration, 1 anything else.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from . import evaluator as ev
from . import pipeline as pl
from . import trainer as tr
from .config import (
    Config,
    ConfigError,
    apply_ablation,
    config_from_dict,
    config_hash,
    load_config,
    set_by_dotted_key,
)
from .datagen import DatasetError, gen_logs, load_dataset, split_records
from .generator import GeneratorParams, GumbelConfig

DATASET_FILE = "dataset.jsonl"
EVAL_CKPT = "eval.ckpt"
GEN_CKPT = "gen.ckpt"
EVAL_HISTORY = "eval_history.csv"
GEN_HISTORY = "gen_history.csv"
TRACE_FILE = "trace.jsonl"
REPORT_FILE = "report.csv"
SUMMARY_FILE = "summary.csv"


class MissingArtifact(FileNotFoundError):
    pass


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict],
               provenance: dict[str, str] | None = None):
    with path.open("w", encoding="utf-8", newline="") as fh:
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row.get(name)) for name in fieldnames])


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return path


def _model_dims(cfg: Config) -> ev.ModelDims:
    return ev.ModelDims(
        item_vocab=cfg.data.num_items,
        cat_vocab=cfg.data.num_categories,
        brand_vocab=cfg.data.num_brands,
        list_size=cfg.data.list_size,
        num_candidates=cfg.data.num_candidates,
        history_sessions=cfg.data.history_sessions,
        embed_dim=cfg.model.embed_dim,
        mlp_hidden=tuple(cfg.model.mlp_hidden),
    )


def _gumbel_config(cfg: Config) -> GumbelConfig:
    t = cfg.training
    return GumbelConfig(tau=t.tau_end, noise=False, theta_p=t.theta_p,
                        theta_c=t.theta_c, max_steps=t.max_steps)


def _load_split(out_dir: Path):
    records, manifest = load_dataset(_require(out_dir / DATASET_FILE, "dataset"))
    return split_records(records, manifest)


def cmd_gen_data(cfg: Config, out_dir: Path) -> None:
    train, test = gen_logs(cfg.data, out_dir / DATASET_FILE)
    print(f"wrote {len(train) + len(test)} records ({len(train)} train / {len(test)} test) "
          f"to {out_dir / DATASET_FILE}")


def cmd_train_eval(cfg: Config, out_dir: Path) -> None:
    train, test = _load_split(out_dir)
    params, history = ev.train_evaluator(
        train, test, _model_dims(cfg),
        lr=cfg.training.lr, batch_size=cfg.training.batch_size,
        epochs=cfg.training.eval_epochs, seed=cfg.training.seed)
    params.save(out_dir / EVAL_CKPT)
    _write_csv(out_dir / EVAL_HISTORY,
               ["epoch", "split", "auc", "logloss", "ndcg5", "ndcg10"],
               history, {"config_sha256": config_hash(cfg)})
    best = max(row["auc"] for row in history if row["split"] == "test")
    print(f"evaluator saved to {out_dir / EVAL_CKPT} (best test AUC {best:.4f})")


def cmd_train_gen(cfg: Config, out_dir: Path) -> None:
    train, test = _load_split(out_dir)
    eval_params = ev.EvaluatorParams.load(_require(out_dir / EVAL_CKPT, "evaluator checkpoint"))
    t = apply_ablation(cfg.training)
    tcfg = tr.TrainConfig(
        alpha=t.alpha, beta=t.beta, lr=t.lr, batch_size=t.batch_size,
        epochs=t.gen_epochs, seed=t.seed, tau_start=t.tau_start, tau_end=t.tau_end,
        k1=t.k1, k2=t.k2, cvr_mode=t.cvr_total_mode,
        use_relative=t.ablation != "no-relative-reward")

    val = test[: t.hr_validation_records]
    val_users = ev.user_vectors(val, eval_params)
    tables_box: dict = {}
    gcfg = _gumbel_config(cfg)

    def epoch_cb(gp, epoch):
        if "tables" not in tables_box:
            rc = tr.RewardConfig(k1=t.k1, k2=t.k2, scale=gp.reward_scale,
                                 cvr_mode=t.cvr_total_mode)
            tables_box["tables"] = pl.build_oracle_tables(val, eval_params, rc,
                                                          e_user_cache=val_users)
        tables = tables_box["tables"]
        lists, _ = pl.rerank_records(val, gp, gcfg, e_user_cache=val_users)
        ranks = [tables[i].rank(lists[i]) for i in range(len(val))]
        from .metrics import hit_ratio
        return {"hr10_val": hit_ratio(ranks, tables[0].space.count, 10.0)}

    gp, history, reward_cfg = tr.train_generator(train, eval_params, tcfg,
                                                 epoch_callback=epoch_cb)
    gp.save(out_dir / GEN_CKPT)
    rows = [{"epoch": r["epoch"], "loss_main": r["loss_main"], "loss_aux": r["loss_aux"],
             "loss_total": r["loss_total"], "hr10_val": r.get("hr10_val")} for r in history]
    _write_csv(out_dir / GEN_HISTORY,
               ["epoch", "loss_main", "loss_aux", "loss_total", "hr10_val"],
               rows, {"config_sha256": config_hash(cfg)})
    print(f"generator saved to {out_dir / GEN_CKPT} "
          f"(reward scale {reward_cfg.scale:.6g}, final val HR@10% "
          f"{rows[-1]['hr10_val']:.4f})")


def cmd_rerank(cfg: Config, out_dir: Path) -> None:
    _, test = _load_split(out_dir)
    eval_params = ev.EvaluatorParams.load(_require(out_dir / EVAL_CKPT, "evaluator checkpoint"))
    gp = GeneratorParams.load(_require(out_dir / GEN_CKPT, "generator checkpoint"), eval_params)
    lists, traces = pl.rerank_records(test, gp, _gumbel_config(cfg))
    path = out_dir / TRACE_FILE
    with path.open("w", encoding="utf-8") as fh:
        for i, (rec, final, trace) in enumerate(zip(test, lists, traces)):
            obj = {
                "record": i,
                "initial": [int(x) for x in rec.exposed],
                "final": [int(x) for x in final],
                "initial_items": [int(x) for x in rec.exposed_ids[:, 0]],
                "final_items": [int(rec.candidate_ids[x, 0]) for x in final],
                "stop_reason": trace.stop_reason,
                "steps": trace.to_json(),
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
    changed = sum(1 for rec, final in zip(test, lists)
                  if tuple(rec.exposed) != tuple(final))
    print(f"wrote {len(lists)} reranked lists to {path} ({changed} changed)")


def _bench_report(cfg: Config, out_dir: Path, threads: int) -> list[dict]:
    _, test = _load_split(out_dir)
    eval_params = ev.EvaluatorParams.load(_require(out_dir / EVAL_CKPT, "evaluator checkpoint"))
    gp = GeneratorParams.load(_require(out_dir / GEN_CKPT, "generator checkpoint"), eval_params)
    t = cfg.training
    reward_cfg = tr.RewardConfig(k1=t.k1, k2=t.k2, scale=gp.reward_scale,
                                 cvr_mode=t.cvr_total_mode)

    eval_row = ev.evaluate_metrics(test, eval_params)
    e_user = ev.user_vectors(test, eval_params)
    lists = pl.baseline_lists(test, eval_params, seed=t.seed, e_user_cache=e_user,
                              threads=threads)
    lists["generator"], _ = pl.rerank_records(test, gp, _gumbel_config(cfg),
                                              threads=threads, e_user_cache=e_user)
    hr = pl.evaluate_rerankers(test, eval_params, reward_cfg, lists,
                               threads=threads, e_user_cache=e_user)
    rows = [{"model": "evaluator", **eval_row}]
    for model in ("input", "random", "greedy", "generator"):
        rows.append({"model": model,
                     "hr10": hr.hr[model][10.0], "hr1": hr.hr[model][1.0]})
    return rows


REPORT_COLUMNS = ["model", "auc", "logloss", "ndcg5", "ndcg10", "hr10", "hr1"]


def cmd_bench(cfg: Config, out_dir: Path, threads: int) -> None:
    rows = _bench_report(cfg, out_dir, threads)
    provenance = {
        "config_sha256": config_hash(cfg),
        "eval_ckpt_sha256": _file_hash(out_dir / EVAL_CKPT),
        "gen_ckpt_sha256": _file_hash(out_dir / GEN_CKPT),
    }
    _write_csv(out_dir / REPORT_FILE, REPORT_COLUMNS, rows, provenance)
    print(f"wrote {out_dir / REPORT_FILE}")
    widths = [10, 8, 8, 8, 8, 8, 8]
    print("  " + " ".join(name.ljust(w) for name, w in zip(REPORT_COLUMNS, widths)))
    for row in rows:
        cells = [str(row.get("model", "")).ljust(widths[0])]
        for name, w in zip(REPORT_COLUMNS[1:], widths[1:]):
            v = row.get(name)
            cells.append(("" if v is None else f"{v:.4f}").ljust(w))
        print("  " + " ".join(cells))


_EVAL_STAGE_KEYS = {
    "model.embed_dim", "model.mlp_hidden", "model.num_fields",
    "training.lr", "training.batch_size", "training.eval_epochs", "training.seed",
}


def cmd_sweep(spec_path: Path, out_dir: Path, threads: int) -> None:
    payload = json.loads(_require(spec_path, "sweep spec").read_text(encoding="utf-8"))
    for key in ("version", "param", "values", "base"):
        if key not in payload:
            raise ConfigError(f"sweep spec: missing key {key}")
    unknown = sorted(set(payload) - {"version", "param", "values", "base"})
    if unknown:
        raise ConfigError(f"sweep spec: unknown key {unknown[0]}")
    if payload["version"] != 1:
        raise ConfigError(f"sweep spec: unsupported version {payload['version']}")
    base = config_from_dict(payload["base"])
    param: str = payload["param"]
    values = payload["values"]
    set_by_dotted_key(base, param, values[0])  # validates the key exists

    shared_stages = not (param.startswith("data.") or param in _EVAL_STAGE_KEYS)
    if shared_stages:
        cmd_gen_data(base, out_dir)
        cmd_train_eval(base, out_dir)

    summary = []
    for value in values:
        cfg_v = set_by_dotted_key(base, param, value)
        tag = str(value).replace("/", "_")
        sub = out_dir / f"value_{tag}"
        sub.mkdir(parents=True, exist_ok=True)
        if shared_stages:
            for name in (DATASET_FILE, DATASET_FILE + ".manifest.json", EVAL_CKPT):
                target = sub / name
                if not target.exists():
                    target.write_bytes((out_dir / name).read_bytes())
        else:
            cmd_gen_data(cfg_v, sub)
            cmd_train_eval(cfg_v, sub)
        cmd_train_gen(cfg_v, sub)
        cmd_bench(cfg_v, sub, threads)
        rows = _read_report(sub / REPORT_FILE)
        gen_row = next(r for r in rows if r["model"] == "generator")
        eval_row = next(r for r in rows if r["model"] == "evaluator")
        summary.append({"param": param, "value": value,
                        "auc": eval_row.get("auc"), "logloss": eval_row.get("logloss"),
                        "ndcg5": eval_row.get("ndcg5"), "ndcg10": eval_row.get("ndcg10"),
                        "hr10": gen_row.get("hr10"), "hr1": gen_row.get("hr1")})
    _write_csv(out_dir / SUMMARY_FILE,
               ["param", "value", "auc", "logloss", "ndcg5", "ndcg10", "hr10", "hr1"],
               summary, {"sweep_param": param})
    print(f"wrote {out_dir / SUMMARY_FILE} ({len(values)} settings)")


def _read_report(path: Path) -> list[dict]:
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            rows.append({k: (v if v != "" else None) for k, v in row.items()})
    return rows


def _apply_overrides(cfg: Config, args) -> Config:
    if args.seed is not None:
        cfg = dataclasses.replace(cfg)
        cfg.data = dataclasses.replace(cfg.data, seed=args.seed)
        cfg.training = dataclasses.replace(cfg.training, seed=args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neighborrank",
        description="Synthetic-log reranking lab: simulate, train, rerank, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("gen-data", "generate the synthetic session log"),
        ("train-eval", "train the list evaluator"),
        ("train-gen", "train the list generator against a frozen evaluator"),
        ("rerank", "run the generator on the test split and dump traces"),
        ("bench", "full metrics report including exhaustive hit ratios"),
        ("sweep", "run a parameter sweep from a sweep spec"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON config path "
                       "(sweep: a sweep spec with base config inside)")
        p.add_argument("--out", default=None, help="output directory "
                       "(default: paths.out_dir from the config)")
        p.add_argument("--seed", type=int, default=None,
                       help="override data and training seeds")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for record-parallel evaluation")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            out_dir = Path(args.out) if args.out else Path("runs/sweep")
            out_dir.mkdir(parents=True, exist_ok=True)
            cmd_sweep(Path(args.config), out_dir, args.threads)
            return 0
        cfg = _apply_overrides(load_config(args.config), args)
        out_dir = Path(args.out) if args.out else Path(cfg.paths.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-data":
            cmd_gen_data(cfg, out_dir)
        elif args.command == "train-eval":
            cmd_train_eval(cfg, out_dir)
        elif args.command == "train-gen":
            cmd_train_gen(cfg, out_dir)
        elif args.command == "rerank":
            cmd_rerank(cfg, out_dir)
        elif args.command == "bench":
            cmd_bench(cfg, out_dir, args.threads)
        return 0
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 3
    except (DatasetError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
