"""Command line entry point: ``motifsnn <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .data import default_splits, write_csv
from .evaluate import EvalReport, ReportError, summarize
from .plot import box_plot_svg
from .runner import Runner, code_version

log = logging.getLogger("motifsnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "smoke", False):
        cfg = cfg.smoke()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) if args.out else Path("results") / cfg.name


def cmd_generate_data(args) -> int:
    cfg = _load_config(args)
    d = cfg.data
    out = _out_dir(args, cfg) / "data" if not args.out else Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = default_splits(d.sizes(), d.seeds(), d.balanced)
    files = {}
    for name, split in splits.items():
        path = out / f"{name}.csv"
        write_csv(split, path)
        files[path.name] = {"rows": len(split), "seed": split.seed,
                            "class_counts": split.class_counts().tolist()}
    manifest = {"code_version": code_version(), "balanced": d.balanced, "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {', '.join(files)} to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    runner = Runner(cfg, _out_dir(args, cfg), jobs=args.jobs)
    splits = runner.generate_data()
    selected = runner.train_all(splits)
    for spec, (best, arms) in selected.items():
        print(f"{spec.group}/{spec.name}: lr={best.lr} final val loss={best.history.final_val_loss:.4f}")
    runner.write_manifest()
    return 2 if runner.failures else 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    runner = Runner(cfg, _out_dir(args, cfg), jobs=args.jobs)
    splits = runner.load_data()
    models = runner.load_selected()
    if not models:
        print(f"no trained models under {runner.out}; run 'train' first", file=sys.stderr)
        return 2
    report = runner.evaluate_all(splits, models)
    _print_report(report)
    runner.write_manifest()
    return 2 if runner.failures else 0


def cmd_stats(args) -> int:
    path = Path(args.report)
    report = EvalReport.from_json(path.read_text(), str(path))
    report = summarize(report.models, alpha=report.alpha, n_chips=report.n_chips)
    _print_report(report)
    if args.out:
        Path(args.out).write_text(report.to_json())
    return 0


def cmd_plot(args) -> int:
    path = Path(args.report)
    report = EvalReport.from_json(path.read_text(), str(path))
    out = Path(args.out) if args.out else path.with_suffix(".svg")
    out.write_text(box_plot_svg(report, title=args.title))
    print(f"wrote {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    runner = Runner(cfg, _out_dir(args, cfg), jobs=args.jobs)
    report = runner.run()
    _print_report(report)
    print(f"results in {runner.out}")
    return 2 if runner.failures else 0


def _print_report(report: EvalReport) -> None:
    for g in report.groups():
        print(f"[{g}]")
        for m in (m for m in report.models if m.group == g):
            b = m.box
            print(f"  {m.name:14s} median={b.median:.4f} q1={b.q1:.4f} q3={b.q3:.4f}")
        for c in (c for c in report.comparisons if c.group == g):
            print(f"  {c.a} vs {c.b}: U={c.u:g} p={c.p_raw:.3g} adjusted={c.p_adjusted:.3g}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="motifsnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, jobs=True):
        sp.add_argument("--config", help="experiment INI file (defaults to the full protocol)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--smoke", action="store_true", help="tiny sizes, one epoch, two chips")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    sp = sub.add_parser("generate-data", help="write the three Yin-Yang splits as CSV")
    common(sp, jobs=False)
    sp.set_defaults(func=cmd_generate_data)
    for name, fn, text in (("train", cmd_train, "learning-rate sweeps and model selection"),
                           ("evaluate", cmd_evaluate, "simulated chips for trained models"),
                           ("run", cmd_run, "the whole pipeline")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.set_defaults(func=fn)
    sp = sub.add_parser("stats", help="recompute pairwise tests from a report")
    sp.add_argument("report")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_stats)
    sp = sub.add_parser("plot", help="render a report as an SVG box plot")
    sp.add_argument("report")
    sp.add_argument("--out")
    sp.add_argument("--title")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
