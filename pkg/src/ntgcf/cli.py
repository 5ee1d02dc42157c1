"""Command-line entry point: ``ntgcf <subcommand> ...``.

Exit status is 0 on success, 1 for invalid arguments, configuration or
input data, and 2 for failures while running.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import DataError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

KIND_DEPENDENT = {
    "similarity": "inner|cosine; default: cosine for ssm/nt-ssm, inner for bpr/nt-bpr",
    "directions": "item|user|both; default: both for nt-* kinds, item otherwise",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config_fields():
    from .losses import LossConfig
    from .training import TrainConfig
    fields = [f for f in dataclasses.fields(TrainConfig) if f.name != "loss"]
    fields += list(dataclasses.fields(LossConfig))
    defaults = TrainConfig().to_flat()
    return [(f.name, defaults[f.name]) for f in fields]


def _arg_type(default):
    if isinstance(default, bool):
        return lambda s: s.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with flat config keys (see below)")
    g = p.add_argument_group("config overrides (each also accepted as a JSON config key)")
    for name, default in _config_fields():
        if name == "seed":
            continue
        if name in KIND_DEPENDENT:
            default = None
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", type=_arg_type(default),
                       default=None, metavar=type(default).__name__.upper() if default is not None else "STR",
                       help=KIND_DEPENDENT.get(name, f"default: {default}"))


def _config_epilog() -> str:
    keys = ", ".join(name for name, _ in _config_fields())
    return f"config keys: {keys}"


def _merged_config(args):
    from .training import TrainConfig
    flat = {}
    if args.config is not None:
        try:
            flat.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {args.config}: {exc}") from exc
    for name, _ in _config_fields():
        val = getattr(args, f"cfg_{name}", None)
        if val is not None:
            flat[name] = val
    if args.seed is not None:
        flat["seed"] = args.seed
    return TrainConfig.from_flat(flat)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ntgcf", description="Graph collaborative filtering with neighbor-type-aware losses.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap on BLAS/worker threads (fallback: NTGCF_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("split", help="split a raw interaction file into a bundle")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--ratios", nargs=3, type=float, default=[0.7, 0.1, 0.2], metavar=("TRAIN", "VALID", "TEST"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-header", action="store_true", help="ignore the first non-empty line")
    p.add_argument("--out", required=True, type=Path)

    fmt = argparse.RawDescriptionHelpFormatter
    p = sub.add_parser("train", help="train embeddings", epilog=_config_epilog(), formatter_class=fmt)
    p.add_argument("--data", required=True, type=Path, help="bundle directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, type=Path)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--Ns", nargs="+", type=int, default=[10, 20])
    p.add_argument("--similarity", choices=("inner", "cosine"), default=None,
                   help="default: the similarity recorded with the checkpoint")
    p.add_argument("--per-user", action="store_true", help="also write per_user.csv")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("sweep", help="alpha coefficient search", epilog=_config_epilog(), formatter_class=fmt)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, type=Path)
    _add_config_flags(p)

    p = sub.add_parser("grad-check", help="finite-difference gradient check on random small graphs")
    p.add_argument("--loss", choices=("bpr", "nt-bpr", "ssm", "nt-ssm"), required=True)
    p.add_argument("--similarity", choices=("inner", "cosine"), default="inner")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--coords", type=int, default=20)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--out", type=Path, default=None, help="directory for grad_check.json")

    p = sub.add_parser("analyze-pairs", help="neighbor-pair counts per hop")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--hops", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("retention-study", help="heuristic-score NDCG over retention ratios")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--q-grid", nargs="+", type=float, default=[0.1, 1, 10, 100])
    p.add_argument("--q-prime-grid", nargs="+", type=float, default=[0.1, 1, 10, 100])
    p.add_argument("--types", nargs="+", default=["full"], choices=("full", "UU", "II", "UI", "IU"))
    p.add_argument("--N", type=int, default=20)
    p.add_argument("--out", required=True, type=Path)
    return parser


def _fmt_q(x: float):
    return int(x) if float(x).is_integer() else x


def _cmd_split(args) -> str:
    from .data import load_interactions, save_bundle, split_dataset
    raw = load_interactions(args.input, skip_header=args.skip_header)
    bundle = split_dataset(raw, tuple(args.ratios), args.seed)
    save_bundle(bundle, args.out)
    s = bundle.stats()
    return (f"split: {s['num_users']} users, {s['num_items']} items, train/valid/test = "
            f"{s['train']}/{s['valid']}/{s['test']} -> {args.out}")


def _cmd_train(args) -> str:
    from .data import load_bundle
    from .training import train
    cfg = _merged_config(args)
    bundle = load_bundle(args.data)
    _, hist = train(bundle, cfg, args.out,
                    progress=lambda r: logging.info("epoch %d loss %.5f ndcg20 %s",
                                                    r["epoch"], r["loss"], r["ndcg20"]))
    return (f"train: {cfg.loss.kind}, {len(hist.records)} epochs, best epoch {hist.best_epoch}, "
            f"valid ndcg20 {hist.best_ndcg:.5f} -> {args.out}")


def _cmd_eval(args) -> str:
    from .data import load_bundle
    from .evaluation import evaluate_all
    from .graph import SimilarityOperator, build_graph
    from .model import forward, load_checkpoint
    bundle = load_bundle(args.data)
    table, meta = load_checkpoint(args.checkpoint)
    cfg = meta.get("config", {})
    layers = int(cfg.get("num_layers", 3))
    kind = args.similarity or cfg.get("similarity") or "inner"
    op = SimilarityOperator(build_graph(bundle, "train"), layers, table.E0.dtype)
    if table.num_rows != op.num_nodes:
        raise DataError(f"checkpoint has {table.num_rows} rows, bundle has {op.num_nodes} nodes")
    metrics = evaluate_all(forward(op, table), bundle, args.split, args.Ns, kind, per_user=args.per_user)
    args.out.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(args.out / "metrics.csv")
    if args.per_user:
        metrics.write_per_user_csv(args.out / "per_user.csv")
    parts = ", ".join(f"recall@{N} {metrics.recall[N]:.5f} ndcg@{N} {metrics.ndcg[N]:.5f}" for N in sorted(metrics.recall))
    return f"eval ({args.split}, {metrics.users_evaluated} users): {parts}"


def _cmd_sweep(args) -> str:
    from .data import load_bundle
    from .training import sweep_alpha
    cfg = _merged_config(args)
    bundle = load_bundle(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    results = sweep_alpha(bundle, cfg, args.budget, out_dir=args.out,
                          progress=lambda r: logging.info("alphas %s ndcg20 %.5f", r["alphas"], r["ndcg20"]))
    best = results[0]
    return f"sweep: {len(results)} configs, best alphas (U_U, U_I, I_U, I_I) = {best['alphas']} ndcg20 {best['ndcg20']:.5f}"


def _cmd_grad_check(args) -> str:
    from .verify import finite_diff_check
    reports = [finite_diff_check(args.loss, args.similarity, seed=args.seed + k, coords=args.coords,
                                 h=args.h, tol=args.tol) for k in range(args.instances)]
    summary = {"loss": args.loss, "similarity": args.similarity,
               "max_rel_err": max(r["max_rel_err"] for r in reports),
               "passed": all(r["passed"] for r in reports), "checks": reports}
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "grad_check.json").write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if not summary["passed"]:
        raise RuntimeError(f"gradient check failed: max_rel_err {summary['max_rel_err']:.3e}")
    return f"grad-check {args.loss}/{args.similarity}: max_rel_err {summary['max_rel_err']:.3e} (passed)"


def _cmd_analyze_pairs(args) -> str:
    from .data import load_bundle
    from .graph import build_graph, count_neighbor_pairs, write_pair_counts
    bundle = load_bundle(args.data)
    graph = build_graph(bundle, "train")
    rows = count_neighbor_pairs(graph, bundle.train, args.hops)
    args.out.mkdir(parents=True, exist_ok=True)
    write_pair_counts(rows, args.out / "pairs.csv")
    last = rows[-1]
    return f"analyze-pairs: hop {last['hop']} mean pairs {last['mean_pairs']:.1f}, coverage {last['coverage']:.4f}"


def _cmd_retention_study(args) -> str:
    from .analysis import retention_study, write_study_csv
    from .data import load_bundle
    bundle = load_bundle(args.data)
    rows = retention_study(bundle, args.layers, [_fmt_q(q) for q in args.q_grid],
                           [_fmt_q(q) for q in args.q_prime_grid], tuple(args.types), args.N,
                           progress=lambda r: logging.info("q %s q' %s %s ndcg %.5f",
                                                           r["q"], r["q_prime"], r["type"], r["ndcg"]))
    args.out.mkdir(parents=True, exist_ok=True)
    write_study_csv(rows, args.out / "retention.csv")
    best = max(rows, key=lambda r: r["ndcg"])
    return f"retention-study: {len(rows)} cells, best (q={best['q']}, q'={best['q_prime']}, {best['type']}) ndcg {best['ndcg']:.5f}"


COMMANDS = {
    "split": _cmd_split,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "grad-check": _cmd_grad_check,
    "analyze-pairs": _cmd_analyze_pairs,
    "retention-study": _cmd_retention_study,
}


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("NTGCF_THREADS")
    return int(env) if env else None


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        threads = _threads(args)
        if threads is not None and threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"ntgcf: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with threadpool_limits(limits=threads):
            summary = COMMANDS[args.command](args)
    except (DataError, ValueError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"ntgcf {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - every other failure maps to the runtime exit code
        print(f"ntgcf {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
