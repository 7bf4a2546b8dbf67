"""Command-line entry point: synth, train, report and gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Flags override config values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml
from pydantic import ValidationError

from . import fairmetrics, gradcheck, synth
from .checkpoint import Checkpoint, CheckpointError
from .cohort import chronological_split
from .config import DEFAULT_CONFIG, RunConfig
from .trainer import StrategyError, evaluate, history_csv, train

log = logging.getLogger("fairgrade")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path) -> RunConfig:
    path = Path(path) if path else DEFAULT_CONFIG
    try:
        return RunConfig.from_yaml(path)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"{path}: not valid YAML: {exc}") from None
    except ValidationError as exc:
        raise UsageError(f"{path}: invalid config:\n{exc}") from None


def _override(cfg: RunConfig, section: str, **values) -> RunConfig:
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    try:
        merged = getattr(cfg, section).model_dump() | values
        return cfg.model_copy(update={section: type(getattr(cfg, section)).model_validate(merged)})
    except ValidationError as exc:
        raise UsageError(str(exc)) from None


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    if cfg.data.synth is None:
        raise UsageError("config has no data.synth block")
    synth_cfg = cfg.data.synth
    if args.seed is not None:
        synth_cfg = synth_cfg.model_copy(update={"seed": args.seed})
    dataset = synth.generate(synth_cfg)
    out = Path(args.out_dir)
    dataset.to_csv(out)
    checks = synth.verify_statistics(dataset, synth_cfg, args.tolerance)
    report = {
        "tolerance": args.tolerance,
        "students": len(dataset.students),
        "courses": dataset.n_courses,
        "enrollments": len(dataset.enrollments),
        "passed": all(c.passed for c in checks),
        "checks": [vars(c) for c in checks],
    }
    (out / "stats.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    failed = [c.statistic for c in checks if not c.passed]
    print(f"wrote {len(dataset.enrollments)} enrollments for {len(dataset.students)} students to {out}")
    print(f"statistics: {len(checks) - len(failed)}/{len(checks)} within {args.tolerance}")
    for name in failed:
        print(f"  off target: {name}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    cfg = _override(cfg, "strategy", id=args.strategy, alpha=args.alpha, group=args.group)
    cfg = _override(cfg, "model", seed=args.seed)
    dataset = cfg.data.load()
    try:
        strategy = cfg.strategy_config(dataset.group_list)
    except StrategyError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out) if args.out else cfg.report.out / strategy.name
    checkpoint, history = train(dataset, chronological_split(dataset), strategy, cfg.train_config())
    checkpoint.save(out)
    (out / "history.csv").write_text(history_csv(history), encoding="utf-8")
    best = checkpoint.manifest["best_epoch"]
    print(f"{strategy.name}: {len(history)} epochs, best epoch {best}, checkpoint at {out}")
    return EXIT_OK


def _report_dataset(cfg: RunConfig, data):
    if data is None:
        return cfg.data.load()
    data = Path(data)
    enr, dem = data / "enrollments.csv", data / "demographics.csv"
    for p in (enr, dem):
        if not p.is_file():
            raise UsageError(f"data file not found: {p}")
    return cfg.data.load_csv(enr, dem)


def cmd_report(args) -> int:
    cfg = _load_config(args.config)
    cfg = _override(cfg, "report", cutoff=args.cutoff)
    checkpoints = []
    for path in args.checkpoints:
        try:
            checkpoints.append(Checkpoint.load(path))
        except CheckpointError as exc:
            log.error("%s", exc)
            return EXIT_RUNTIME
    dataset = _report_dataset(cfg, args.data)
    split = chronological_split(dataset)
    exclude = tuple(cfg.report.exclude_groups)
    reports, criteria, ood = {}, {}, {}
    for ckpt in checkpoints:
        preds = evaluate(ckpt, dataset, split)
        outcomes = fairmetrics.binarize(preds, cfg.report.cutoff, cfg.report.pass_as_positive)
        name = ckpt.strategy
        reports[name] = fairmetrics.group_report(outcomes, dataset.group_list, exclude)
        criteria[name] = fairmetrics.fairness_criteria(outcomes, exclude)
        group = ckpt.manifest["strategy"].get("group")
        if group:
            ood[name] = {g for g in dataset.group_list if g != group}
    out = Path(args.out) if args.out else cfg.report.out / "report"
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.csv").write_text(fairmetrics.table_csv(reports), encoding="utf-8")
    extra = {"cutoff": cfg.report.cutoff, "excluded_groups": list(exclude), "fairness_criteria": criteria}
    (out / "table.json").write_text(fairmetrics.table_json(reports, extra) + "\n", encoding="utf-8")
    (out / "tidy.csv").write_text(fairmetrics.tidy_csv(reports, ood), encoding="utf-8")
    (out / "delta.csv").write_text(fairmetrics.delta_csv(reports), encoding="utf-8")
    print(f"report for {len(reports)} strategies written to {out}")
    return EXIT_OK


def _parse_dims(text: str) -> dict:
    keys = {"n": "n_courses", "m": "n_letters", "hidden": "hidden", "attr": "attr_size", "races": "race_classes"}
    out = {}
    for part in filter(None, text.split(",")):
        key, _, value = part.partition("=")
        if key.strip() not in keys:
            raise UsageError(f"unknown dims key {key!r}; expected some of {', '.join(keys)}")
        try:
            out[keys[key.strip()]] = int(value)
        except ValueError:
            raise UsageError(f"dims value for {key!r} must be an integer") from None
        if out[keys[key.strip()]] < 1:
            raise UsageError(f"dims value for {key!r} must be positive")
    if out.get("n_letters", 2) < 2:
        raise UsageError("m must be at least 2")
    return out


def cmd_gradcheck(args) -> int:
    dims = _parse_dims(args.dims)
    results = gradcheck.check(args.seed, tolerance=args.tolerance, corrupt=args.corrupt, **dims)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.variant:12s} {status}  max rel err {r.max_rel_error:.3e} ({r.worst_tensor})")
    worst = max(r.max_rel_error for r in results)
    ok = all(r.passed for r in results)
    print(f"gradcheck {'passed' if ok else 'failed'}: max relative error {worst:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fairgrade", description="Fairness-aware grade prediction pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--tolerance", type=float, default=0.01)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one strategy and save a checkpoint")
    t.add_argument("--config")
    t.add_argument("--strategy")
    t.add_argument("--alpha", type=float)
    t.add_argument("--group")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("report", help="evaluate checkpoints and write fairness tables")
    r.add_argument("--checkpoints", nargs="+", required=True)
    r.add_argument("--data", help="directory holding enrollments.csv and demographics.csv")
    r.add_argument("--config")
    r.add_argument("--cutoff", choices=("A", "B"))
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    g = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dims", default="n=3,m=4,hidden=5")
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--corrupt", action="store_true", help="perturb the analytic gradient (negative control)")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    level = os.environ.get("FAIRGRADE_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fairgrade: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"fairgrade: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
