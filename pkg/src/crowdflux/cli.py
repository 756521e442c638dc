"""Command line: ``crowdflux {synth,train,detect,eval,report}``.

Every run-configuration key is also a flag of the same name (``--tau_min``
or ``--tau-min``); precedence is profile, then ``--config`` file, then flags.
Exit status: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

from .config import PROFILES, Config
from .errors import CrowdFluxError, InvalidConfig
from .evaluation import DEFAULT_COVERAGE, evaluate, format_report_table, merge_reports, write_eval_csv
from .flow_io import flow_paths, load_flo
from .pgm import read_mask_dir
from .synth import ScenarioConfig, parse_keyvalue, simulate_scenario, write_scenario

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--config", metavar="FILE", help="key=value run configuration")
    group = p.add_argument_group("configuration keys")
    for f in fields(Config):
        if f.name == "profile":
            continue
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        group.add_argument(*names, dest=f"cfg_{f.name}", metavar="V", default=None)
    group.add_argument("--no-update", dest="cfg_update", action="store_const", const="false",
                       help="freeze the model during detection")


def _config(args) -> Config:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return Config.resolve(args.profile, args.config, overrides)


def _selected_flows(directory, start: int, frames: int | None):
    """Paths of the chosen frames plus the absolute index of the first one."""
    paths = flow_paths(directory)
    if not paths:
        raise CrowdFluxError(f"no frame_%06d.flo files in {directory}")
    chosen = paths[start:] if frames is None else paths[start:start + frames]
    if not chosen:
        raise CrowdFluxError(f"no frames selected from {directory} (start={start})")
    first = int(chosen[0].stem.split("_")[1])
    return chosen, first


def _flows(paths):
    for p in paths:
        yield load_flo(p)


# -- subcommands -----------------------------------------------------------------------

def cmd_synth(args) -> int:
    mapping = parse_keyvalue(Path(args.config).read_text()) if args.config else {}
    for f in fields(ScenarioConfig):
        value = getattr(args, f"sc_{f.name}", None)
        if value is not None:
            mapping[f.name] = value
    scenario = simulate_scenario(ScenarioConfig.from_mapping(mapping))
    info = write_scenario(scenario, args.out)
    print(f"wrote {info['flows']} flow fields and {info['truth']} truth masks to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import run_train

    cfg = _config(args)
    paths, first = _selected_flows(args.flows, args.start, args.frames)
    group = run_train(_flows(paths), cfg, out=args.out, start=first)
    print(f"trained {group.s} dictionaries (T={group.T}, d={group.d}, lambda={group.lam}) "
          f"from {len(paths)} frames; {group.uncovered} words uncovered -> {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    from .pipeline import load_checked, run_detect, write_masks, write_records_csv

    cfg = _config(args)
    group = load_checked(args.model, cfg)
    paths, first = _selected_flows(args.flows, args.start, args.frames)
    result = run_detect(_flows(paths), group, cfg, start=first, frame_count=len(paths))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = Path(args.records) if args.records else out / "records.csv"
    write_records_csv(records, result.records)
    n = write_masks(args.masks or out / "masks", result.verdicts, result.grid)
    flagged = sum(v.abnormal for v in result.verdicts)
    print(f"{len(result.records)} records -> {records}; {n} masks, {flagged} abnormal frames; "
          f"updates: {result.stats.local} local, {result.stats.global_} global")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import read_records_csv

    cfg = _config(args)
    records = read_records_csv(args.records)
    truth = read_mask_dir(args.truth, args.truth_prefix)
    if not truth:
        raise CrowdFluxError(f"no {args.truth_prefix}_%06d.pgm masks in {args.truth}")
    h, w = next(iter(truth.values())).shape
    report = evaluate(records, truth, cfg.grid(w, h), cfg.T, args.coverage_threshold, args.mode)
    if args.out:
        write_eval_csv(args.out, report)
    sys.stdout.write(report.summary())
    return EXIT_OK


def cmd_report(args) -> int:
    table = format_report_table(merge_reports(args.inputs))
    if args.out:
        Path(args.out).write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdflux", description="Force-flow crowd anomaly detection.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic scenario (flows and truth masks)")
    p.add_argument("--config", metavar="FILE", help="scenario key=value file")
    p.add_argument("--out", required=True)
    for f in fields(ScenarioConfig):
        p.add_argument(f"--{f.name}", dest=f"sc_{f.name}", metavar="V", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a dictionary group on normal footage")
    p.add_argument("--flows", required=True, help="directory of frame_%%06d.flo files")
    p.add_argument("--start", type=int, default=0, help="first frame (position in the directory)")
    p.add_argument("--frames", type=int, default=None, help="number of frames to use")
    p.add_argument("--out", required=True, help="model file to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score footage against a trained model")
    p.add_argument("--flows", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--records", default=None, help="records CSV path (default OUT/records.csv)")
    p.add_argument("--masks", default=None, help="mask directory (default OUT/masks)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="ROC, AUC, EER and RD of a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--truth", required=True, help="directory of truth masks")
    p.add_argument("--truth-prefix", default="gt")
    p.add_argument("--mode", choices=("frame", "pixel"), default="frame")
    p.add_argument("--coverage-threshold", dest="coverage_threshold", type=float, default=DEFAULT_COVERAGE,
                   help="fraction of truth pixels a detection must cover (strictly more than)")
    p.add_argument("--out", default=None, help="eval CSV to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge eval CSVs into one table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: synth, train, detect, eval or report")
        return args.func(args)
    except (UsageError, InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return EXIT_USAGE
    except (CrowdFluxError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
