"""Command-line experiment runner: ``betavcl {gen,run,grid,uncertainty,stats}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
Log verbosity comes from the ``BETAVCL_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .bnn import NumericalError, load_posterior, save_posterior
from .config import ConfigError, ExperimentConfig, load_config
from .continual import (
    CELL_CSV_COLUMNS,
    GridSpec,
    cell_rows,
    compute_references,
    grid_search,
    run_vcl,
    write_rows_csv,
)
from .data import (
    DataError,
    TaskDataset,
    gen_synthetic_task,
    load_dataset,
    make_sequence,
    save_dataset,
    split_dataset,
    standardize_split,
)
from .inference import gate_summary, read_uncertainty_csv, uncertainty_report, write_uncertainty_csv
from .numerics import RandomStream
from .stats import InsufficientDataError, DegenerateInputError, uncertainty_separation

logger = logging.getLogger("betavcl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

STATS_COLUMNS = (
    "order", "k", "task", "measure", "status", "n_correct", "n_wrong",
    "median_correct", "median_wrong", "H", "p", "ks_p_correct", "ks_p_wrong",
)


def _write_json(doc, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _resolve(cfg_dir: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else cfg_dir / q


def _load_task(cfg: ExperimentConfig, i: int, cfg_dir: Path) -> TaskDataset:
    t = cfg.tasks[i]
    if t.path is not None:
        return load_dataset(_resolve(cfg_dir, t.path), name=t.name)
    return gen_synthetic_task(t.synthetic.to_spec(t.name))


def _prepare_tasks(cfg: ExperimentConfig, cfg_dir: Path) -> tuple[dict, dict]:
    splits, standardization = {}, {}
    for i, t in enumerate(cfg.tasks):
        try:
            sp = split_dataset(_load_task(cfg, i, cfg_dir), cfg.split.ratios, cfg.split.seed)
        except ValueError as exc:
            raise DataError(f"task {t.name!r}: {exc}") from None
        if cfg.standardize:
            sp, params = standardize_split(sp)
            standardization[t.name] = {"mean": params.mean.tolist(), "std": params.std.tolist()}
        splits[t.name] = sp
    return splits, standardization


def _sequence(cfg: ExperimentConfig, splits: dict, order: list[str]):
    return make_sequence([splits[n] for n in order], label="-".join(order))


def _task_ids(cfg: ExperimentConfig, order: list[str]) -> list[int]:
    index = {t.name: i for i, t in enumerate(cfg.tasks)}
    return [index[n] for n in order]


def _references(cfg, seq, order, seed, grid, hyper, threads, cache):
    """Single-task references, shared across orders for the same seed."""
    missing = [n for n in order if (seed, n) not in cache]
    if missing:
        sub = make_sequence([seq[order.index(n)] for n in missing])
        refs = compute_references(sub, grid, seed, cfg.hidden_sizes, hyper, _task_ids(cfg, missing), threads)
        cache.update({(seed, n): r for n, r in zip(missing, refs)})
    return [cache[(seed, n)] for n in order]


def cmd_gen(cfg: ExperimentConfig, out: Path, cfg_dir: Path) -> int:
    written = []
    for i, t in enumerate(cfg.tasks):
        if t.synthetic is None:
            continue
        path = out / f"{t.name}.csv"
        save_dataset(_load_task(cfg, i, cfg_dir), path)
        written.append(str(path))
    logger.info("wrote %d dataset file(s)", len(written))
    print("\n".join(written))
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, out: Path, cfg_dir: Path, threads: int) -> int:
    splits, standardization = _prepare_tasks(cfg, cfg_dir)
    hyper = cfg.hyper.to_hyper()
    ref_grid = cfg.reference_grid.to_grid() if cfg.reference_grid else GridSpec.single(hyper)
    cache = {}
    runs, rows = [], []
    for name, sp in splits.items():
        save_dataset(sp.test, out / "splits" / f"{name}_test.csv")
    for order in cfg.task_orders():
        seq = _sequence(cfg, splits, order)
        for seed in cfg.seeds:
            refs = _references(cfg, seq, order, seed, ref_grid, hyper, threads, cache)
            rec = run_vcl(seq, hyper, seed, cfg.hidden_sizes, references=refs, keep_checkpoints=cfg.keep_checkpoints)
            doc = rec.to_dict()
            doc["references"] = [r.to_dict() for r in refs]
            runs.append(doc)
            rows.extend(cell_rows(rec))
            meta = {"order": seq.label, "seed": seed, "task_names": list(order)}
            ckpt_dir = out / "checkpoints"
            save_posterior(rec.posterior, ckpt_dir / f"{seq.label}_seed{seed}_final.json", hyper, meta)
            for k, post in enumerate(rec.checkpoints, start=1):
                save_posterior(post, ckpt_dir / f"{seq.label}_seed{seed}_k{k}.json", hyper, dict(meta, k=k))
    _write_json({"config": cfg.effective(), "standardization": standardization, "runs": runs}, out / "results.json")
    write_rows_csv(rows, out / "per_k.csv", CELL_CSV_COLUMNS)
    return EXIT_OK


def _cell_wide_row(rec) -> dict:
    row = {"order": rec.order, "seed": rec.seed, "lr": rec.hyper.learning_rate, "beta": rec.hyper.beta}
    vm = rec.val_metrics()
    for k in range(rec.K):
        for key, vals in (("A", vm.A), ("F", vm.F), ("I", vm.I), ("combined", vm.combined)):
            row[f"{key}_{k + 1}"] = vals[k]
    return row


def cmd_grid(cfg: ExperimentConfig, out: Path, cfg_dir: Path, threads: int) -> int:
    splits, standardization = _prepare_tasks(cfg, cfg_dir)
    hyper = cfg.hyper.to_hyper()
    grid = cfg.grid.to_grid()
    ref_grid = cfg.reference_grid.to_grid() if cfg.reference_grid else grid
    cache = {}
    results, best_rows, wide_rows, long_rows = [], [], [], []
    for order in cfg.task_orders():
        seq = _sequence(cfg, splits, order)
        for seed in cfg.seeds:
            refs = _references(cfg, seq, order, seed, ref_grid, hyper, threads, cache)
            res = grid_search(seq, grid, seed, cfg.hidden_sizes, hyper, references=refs, threads=threads)
            doc = res.to_dict()
            doc["references"] = [r.to_dict() for r in refs]
            results.append(doc)
            best_rows.extend(dict(r, order=seq.label, seed=seed) for r in res.best)
            for rec in res.cells:
                wide_rows.append(_cell_wide_row(rec))
                long_rows.extend(cell_rows(rec))
    K = max(len(o) for o in cfg.task_orders())
    wide_cols = ["order", "seed", "lr", "beta"] + [f"{m}_{k}" for k in range(1, K + 1) for m in ("A", "F", "I", "combined")]
    _write_json({"config": cfg.effective(), "standardization": standardization, "results": results}, out / "grid.json")
    write_rows_csv(best_rows, out / "grid_best.csv", ("order", "seed", "k", "A", "F", "I", "combined", "lr", "beta"))
    write_rows_csv(wide_rows, out / "grid_cells.csv", wide_cols)
    write_rows_csv(long_rows, out / "grid_per_k.csv", CELL_CSV_COLUMNS)
    return EXIT_OK


def _parse_testsets(specs: list[str]) -> list[tuple[int, Path]]:
    pairs = []
    for i, s in enumerate(specs):
        head, sep, path = s.partition("=")
        if sep:
            try:
                pairs.append((int(head), Path(path)))
            except ValueError:
                raise ConfigError(f"bad --testset {s!r}; expected HEAD=PATH") from None
        else:
            pairs.append((i, Path(s)))
    return pairs


def cmd_uncertainty(args, out: Path) -> int:
    try:
        post, hyper, meta = load_posterior(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {args.checkpoint}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"unreadable checkpoint {args.checkpoint}: {exc}") from None
    S = args.samples or (hyper.s_test if hyper else 100)
    names = meta.get("task_names", [])
    records = []
    for head, path in _parse_testsets(args.testset):
        if not 0 <= head < post.architecture.n_heads:
            raise DataError(f"testset {path} targets head {head}, checkpoint has {post.architecture.n_heads}")
        ds = load_dataset(path)
        if ds.n_features != post.architecture.input_dim:
            raise DataError(f"testset {path} has {ds.n_features} features, model expects {post.architecture.input_dim}")
        if ds.num_classes > post.architecture.head_sizes[head]:
            raise DataError(f"testset {path} has labels beyond head {head}'s {post.architecture.head_sizes[head]} classes")
        name = names[head] if head < len(names) else ds.name
        noise = RandomStream(args.seed, 0).child(head)
        records.extend(uncertainty_report(post, head, ds, S, noise, task=name))
    write_uncertainty_csv(records, out / "uncertainty.csv")
    if args.max_entropy is not None or args.max_mi is not None:
        _write_json(gate_summary(records, args.max_entropy, args.max_mi), out / "gate_summary.json")
    return EXIT_OK


def stats_rows(records, order: str = "") -> list[dict]:
    groups = {}
    for r in records:
        groups.setdefault((r.k_trained, r.task), []).append(r)
    rows = []
    for (k, task), recs in sorted(groups.items()):
        for measure in ("entropy", "mi"):
            row = {"order": order, "k": k, "task": task, "measure": measure}
            try:
                res = uncertainty_separation(recs, measure)
            except (InsufficientDataError, DegenerateInputError) as exc:
                n_ok = sum(r.correct for r in recs)
                row.update(status=f"insufficient-data: {exc}", n_correct=n_ok, n_wrong=len(recs) - n_ok)
            else:
                d = res.to_dict()
                row.update({c: d[c] for c in ("n_correct", "n_wrong", "median_correct", "median_wrong", "H", "p", "ks_p_correct", "ks_p_wrong")})
                row["status"] = "ok"
            rows.append(row)
    return rows


def cmd_stats(args, out: Path) -> int:
    try:
        records = read_uncertainty_csv(args.input)
    except FileNotFoundError:
        raise DataError(f"uncertainty CSV not found: {args.input}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    rows = stats_rows(records, args.order)
    write_rows_csv(rows, out / "stats.csv", STATS_COLUMNS)
    _write_json({"rows": rows}, out / "stats.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="betavcl", description="Beta-weighted variational continual learning experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seeds with one seed")
        sp.add_argument("--threads", type=int, default=None, help="worker threads for grid cells and references")

    common(sub.add_parser("gen", help="write synthetic task CSVs"))
    run = sub.add_parser("run", help="sequential training for each order and seed")
    common(run)
    run.add_argument("--keep-checkpoints", action="store_true", help="also save the posterior after every task")
    grid = sub.add_parser("grid", help="learning-rate x beta grid search")
    common(grid)
    grid.add_argument("--keep-checkpoints", action="store_true")

    unc = sub.add_parser("uncertainty", help="per-sample entropy and mutual information")
    common(unc, config_required=False)
    unc.add_argument("--checkpoint", required=True)
    unc.add_argument("--testset", action="append", required=True, help="PATH or HEAD=PATH; repeatable")
    unc.add_argument("--samples", type=int, default=None, help="Monte Carlo draws (default: checkpoint s_test)")
    unc.add_argument("--max-entropy", type=float, default=None)
    unc.add_argument("--max-mi", type=float, default=None)

    st = sub.add_parser("stats", help="Kruskal-Wallis tests on an uncertainty CSV")
    common(st, config_required=False)
    st.add_argument("--input", required=True)
    st.add_argument("--order", default="", help="order label copied into the table")
    return p


def _setup_logging() -> None:
    level = os.environ.get("BETAVCL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.command in ("gen", "run", "grid"):
            cfg = load_config(args.config)
            updates = {}
            if args.seed is not None:
                updates["seeds"] = [args.seed]
            if getattr(args, "keep_checkpoints", False):
                updates["keep_checkpoints"] = True
            if updates:
                cfg = cfg.model_copy(update=updates)
            threads = args.threads or cfg.threads or os.cpu_count() or 1
            cfg_dir = Path(args.config).resolve().parent
            out.mkdir(parents=True, exist_ok=True)
            if args.command == "gen":
                return cmd_gen(cfg, out, cfg_dir)
            if args.command == "run":
                return cmd_run(cfg, out, cfg_dir, threads)
            return cmd_grid(cfg, out, cfg_dir, threads)
        if args.seed is None:
            args.seed = 0
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "uncertainty":
            return cmd_uncertainty(args, out)
        return cmd_stats(args, out)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
