"""Command-line interface.

``mergeeig rank | illustrate | mpc-bench | dp-compare | validate``. Reports
go to ``--out`` as JSON plus a CSV table and a figure; a summary table goes
to stdout. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import ESTIMATORS, MODELS, PRIVACY, ExperimentConfig, IllustrativeConfig, load_config
from .errors import MergeEigError, NumericError


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="report directory")
    common.add_argument("--no-plot", action="store_true", help="skip the figure")
    common.add_argument("-v", "--verbose", action="store_true")

    exp = argparse.ArgumentParser(add_help=False)
    exp.add_argument("--model", choices=MODELS)
    exp.add_argument("--estimator", choices=ESTIMATORS)
    exp.add_argument("--privacy", choices=PRIVACY)
    exp.add_argument("--sites", type=int, metavar="K")

    p = argparse.ArgumentParser(prog="mergeeig", description="Rank candidate sites for a merge by expected information gain.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("rank", parents=[common, exp], help="ranking experiment against merged-model PEHE")
    sub.add_parser("illustrate", parents=[common], help="twin versus complement sweep")
    sub.add_parser("mpc-bench", parents=[common, exp], help="secure statistic against plaintext")
    sub.add_parser("dp-compare", parents=[common, exp], help="Laplace DP baseline against plaintext")
    sub.add_parser("validate", parents=[common], help="run the fast property suite")
    return p


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def _experiment_config(args, privacy_defaults: bool = False) -> ExperimentConfig:
    """Defaults, then the config file's ``experiment`` section, then flags."""
    raw = {}
    if privacy_defaults:
        from .experiments import privacy_config

        raw = privacy_config().to_dict()
    if args.config:
        raw = _merge(raw, load_config(args.config).get("experiment", {}))
    flags = {f: getattr(args, f, None) for f in ("seed", "model", "estimator", "privacy")}
    raw = _merge(raw, {k: v for k, v in flags.items() if v is not None})
    if getattr(args, "sites", None) is not None:
        raw = _merge(raw, {"sites": {"K": args.sites}})
    return ExperimentConfig.from_dict(raw)


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _prepare_out(args) -> Path | None:
    if args.out is None:
        return None
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _dump(out: Path, name: str, doc: dict) -> None:
    (out / f"{name}.json").write_text(json.dumps(doc, indent=2))


def cmd_rank(args) -> int:
    from .experiments import run_ranking

    cfg = _experiment_config(args)
    rep = run_ranking(cfg)
    print(f"model={cfg.model} estimator={cfg.estimator} privacy={cfg.privacy} sites={len(rep.scores)} seed={cfg.seed}")
    print(f"{'site':>4} {'score':>10} {'rank':>5} {'pehe':>10} {'true rank':>9}")
    pos = {int(s): i for i, s in enumerate(rep.ranking)}
    tpos = {int(s): i for i, s in enumerate(rep.truth_ranking)}
    for i, (s, p) in enumerate(zip(rep.scores, rep.truth_pehe)):
        print(f"{i:>4} {s:>10.4f} {pos[i] + 1:>5} {p:>10.4f} {tpos[i] + 1:>9}")
    print(f"spearman rho = {rep.rho:.3f}  " + "  ".join(f"p@{k} = {v:.2f}" for k, v in rep.p_at_k.items()))
    for name, b in rep.baselines.items():
        print(f"baseline {name:<18} rho = {b['rho']:.3f}")
    out = _prepare_out(args)
    if out:
        _dump(out, "rank_report", rep.to_dict())
        rows = [[i, s, pos[i] + 1, p, tpos[i] + 1] for i, (s, p) in enumerate(zip(rep.scores, rep.truth_pehe))]
        _write_csv(out / "rank_table.csv", ["site", "score", "rank", "pehe", "true_rank"], rows)
        if not args.no_plot:
            from .plotting import ranking_figure

            ranking_figure(rep, out / "rank.png")
    return 0


def cmd_illustrate(args) -> int:
    from .experiments import run_illustrative

    raw = load_config(args.config).get("illustrative", {}) if args.config else {}
    if args.seed is not None:
        raw = {**raw, "seed": args.seed}
    cfg = IllustrativeConfig.from_dict(raw)
    rep = run_illustrative(cfg)
    summary = rep.summary()
    cols = list(summary)
    print(f"{'ratio':>7} " + " ".join(f"{c:>13}" for c in cols) + "  region")
    for r, ratio in enumerate(rep.ratios):
        print(f"{ratio:>7.2f} " + " ".join(f"{summary[c]['mean'][r]:>13.4f}" for c in cols) + f"  {rep.regions[r]}")
    print(f"region 2 present: {rep.has_region_2}; regions 1 and 3 at the extremes: {rep.extremes_ok}")
    out = _prepare_out(args)
    if out:
        _dump(out, "illustrate_report", rep.to_dict())
        header = ["ratio"] + [f"{c}_{s}" for c in cols for s in ("mean", "sd")] + ["region"]
        rows = [[ratio] + [summary[c][s][r] for c in cols for s in ("mean", "sd")] + [int(rep.regions[r])] for r, ratio in enumerate(rep.ratios)]
        _write_csv(out / "illustrate_table.csv", header, rows)
        if not args.no_plot:
            from .plotting import illustrative_figure

            illustrative_figure(rep, out / "illustrate.png")
    return 0


def _privacy_cmd(args, mode: str) -> int:
    from .experiments import run_dp_compare, run_mpc_bench

    cfg = _experiment_config(args, privacy_defaults=True)
    bench = run_mpc_bench(cfg) if mode == "mpc" else run_dp_compare(cfg.replace(privacy="dp"))
    print(f"{mode}: sites={len(bench.plain)} seed={cfg.seed} target={cfg.target} laplace scale={bench.laplace_scale:.4g}")
    print(f"MSE vs plaintext = {bench.mse:.3e}  rho pre-noise = {bench.rho_pre_noise:.3f}  rho noised = {bench.rho_noised:.3f}  ({bench.seconds:.1f} s)")
    out = _prepare_out(args)
    if out:
        _dump(out, f"{mode}_report", {**bench.to_dict(), "config": cfg.to_dict()})
        rows = [[i, a, b, c] for i, (a, b, c) in enumerate(zip(bench.plain, bench.revealed, bench.noised))]
        _write_csv(out / f"{mode}_table.csv", ["site", "plaintext", "revealed", "noised"], rows)
        if not args.no_plot:
            from .plotting import privacy_figure

            privacy_figure(bench, out / f"{mode}.png")
    return 0


def cmd_validate(args) -> int:
    from .validate import run_checks

    results = run_checks(0 if args.seed is None else args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    out = _prepare_out(args)
    if out:
        _dump(out, "validate_report", {"checks": [r.__dict__ for r in results]})
    if not all(r.passed for r in results):
        raise NumericError("property checks failed")
    return 0


COMMANDS = {
    "rank": cmd_rank,
    "illustrate": cmd_illustrate,
    "mpc-bench": lambda a: _privacy_cmd(a, "mpc"),
    "dp-compare": lambda a: _privacy_cmd(a, "dp"),
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except MergeEigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
