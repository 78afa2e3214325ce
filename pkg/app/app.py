import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .belady import belady_annotate
from .cache import InvariantViolation, estimate_stalls, filter_llc_stream, read_event_log
from .config import (
    DATA_DIR,
    LOG_LEVEL,
    ConfigError,
    RunConfig,
    canonical_dict,
    config_digest,
    load_config,
    with_overrides,
)
from .metrics import conditional_instruction_miss_rates, reuse_distance_profile, stream_profile
from .simulator import load_stream, simulate, write_outputs
from .sweep import SWEEP_AXES, run_sweep, write_sweep
from .trace import GENERATORS, TraceFormatError, write_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_INVARIANT = 3

ANALYSES = ("reuse", "pattern", "belady", "conditional", "stalls")


# ============================================================
# CONFIG
# ============================================================
def resolve_config(args, trace_is_input: bool = True) -> RunConfig:
    """Config file first, then flags; without either the output goes under DATA_DIR."""
    cfg = load_config(args.config) if args.config else RunConfig()
    changes: Dict[str, Any] = {}
    if getattr(args, "emit", None):
        changes["emit"] = args.emit
    if getattr(args, "dump_events", False) or getattr(args, "dump_pairtable", False):
        changes["metrics"] = dataclasses.replace(
            cfg.metrics,
            dump_events=cfg.metrics.dump_events or args.dump_events,
            dump_pairtable=cfg.metrics.dump_pairtable or args.dump_pairtable,
        )
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    out = args.out or (None if args.config else DATA_DIR)
    trace = args.trace if trace_is_input else None
    return with_overrides(cfg, trace=trace, out=out, seed=args.seed)


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ============================================================
# COMMANDS
# ============================================================
def cmd_gen(cfg: RunConfig, trace_out: Optional[str] = None) -> Path:
    if not cfg.generator:
        raise ConfigError("gen needs a generator block", "generator")

    print(f"🧪 Generating {cfg.generator} trace (seed {cfg.trace_gen.rng_seed})...")
    stream = GENERATORS[cfg.generator](cfg.trace_gen)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = Path(trace_out) if trace_out else out_dir / f"{cfg.generator}-seed{cfg.trace_gen.rng_seed}.trace"
    write_trace(path, stream)

    manifest = {
        "generator": cfg.generator,
        "config": canonical_dict(cfg)["trace_gen"],
        "config_digest": config_digest(cfg),
        "records": len(stream),
        "sha256": _file_digest(path),
    }
    manifest_path = path.with_name(path.name + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    print(f"💾 {len(stream)} records -> {path}")
    return path


def cmd_run(cfg: RunConfig) -> Dict[str, Path]:
    print(f"🚀 Running {cfg.policy}{' + pairwise' if cfg.pairwise.enabled else ''}")
    result = simulate(cfg)
    paths = write_outputs(result, cfg.out_dir)

    stalls = result.report.stalls
    print(f"⏱️ total {stalls['total_cycles']} cycles "
          f"(ifetch stall {stalls['ifetch_stall_cycles']}, data stall {stalls['data_stall_cycles']})")
    for name, path in paths.items():
        print(f"💾 {name}: {path}")
    return paths


def cmd_sweep(cfg: RunConfig, axis: str, values: List[Any], parallel: int = 1) -> Path:
    print(f"📈 Sweeping {axis} over {values}")
    rows = run_sweep(cfg, axis, values, parallel=parallel)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = write_sweep(rows, out_dir / f"sweep-{axis}.csv")
    print(f"💾 {len(rows)} rows -> {path}")
    return path


def cmd_analyze(cfg: RunConfig, analyses: List[str], events_path: Optional[str] = None) -> Path:
    unknown = [a for a in analyses if a not in ANALYSES]
    if unknown:
        raise ConfigError(f"unknown analyses {unknown}; valid: {', '.join(ANALYSES)}", "analyses")

    out: Dict[str, Any] = {"config_digest": config_digest(cfg)}
    if events_path:
        print(f"📜 Analyzing event log {events_path}")
        events = read_event_log(events_path)
        if "conditional" in analyses:
            out["conditional"] = dataclasses.asdict(conditional_instruction_miss_rates(events))
        if "stalls" in analyses:
            out["stalls"] = dataclasses.asdict(estimate_stalls(events, cfg.hierarchy.private.latency))
    else:
        print("📜 Analyzing trace through the private caches")
        stream = load_stream(cfg)
        cores = max((a.core_id for a in stream), default=0) + 1
        llc_stream = filter_llc_stream(stream, cfg.hierarchy, cores)
        geometry = cfg.hierarchy.llc.geometry
        if "reuse" in analyses:
            out["reuse"] = reuse_distance_profile(llc_stream, geometry.n_sets).to_dict()
        if "pattern" in analyses:
            out["pattern"] = stream_profile(llc_stream)
        if "belady" in analyses:
            labels, _ = belady_annotate([d.line for d in llc_stream], geometry.n_sets, geometry.associativity)
            out["belady"] = {"llc_accesses": len(llc_stream), "misses": labels.misses,
                             "bypassed": sum(labels.bypassed)}

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "analysis.json"
    path.write_text(json.dumps(out, sort_keys=True, indent=2) + "\n")
    print(f"💾 analysis -> {path}")
    return path


# ============================================================
# ARGS
# ============================================================
def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Pairwise LLC simulator CLI")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Path to run config (JSON)")
    common.add_argument("--out", help="Output directory (default from config)")
    common.add_argument("--seed", type=int, help="Override rng_seed")
    common.add_argument("--trace", help="Trace path (output path for gen)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="Generate a synthetic trace")

    run = sub.add_parser("run", parents=[common], help="Run one simulation")
    run.add_argument("--emit", choices=["json", "csv"])
    run.add_argument("--dump-pairtable", action="store_true")
    run.add_argument("--dump-events", action="store_true")

    sweep = sub.add_parser("sweep", parents=[common], help="Sensitivity sweep")
    sweep.add_argument("--axis", required=True, help=f"One of {','.join(SWEEP_AXES)}")
    sweep.add_argument("--values", required=True, help="Comma separated values")
    sweep.add_argument("--parallel", type=int, default=1)

    analyze = sub.add_parser("analyze", parents=[common], help="Offline analysis of a trace or event log")
    analyze.add_argument("--events", help="Event log written by run --dump-events")
    analyze.add_argument("--analyses", default="reuse,pattern,belady",
                         help=f"Comma separated subset of {','.join(ANALYSES)}")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    try:
        if args.command == "gen":
            cmd_gen(resolve_config(args, trace_is_input=False), args.trace)
        elif args.command == "run":
            cmd_run(resolve_config(args))
        elif args.command == "sweep":
            values = [_number(v) for v in args.values.split(",") if v.strip()]
            cmd_sweep(resolve_config(args), args.axis, values, args.parallel)
        else:
            analyses = [a.strip() for a in args.analyses.split(",") if a.strip()]
            cmd_analyze(resolve_config(args), analyses, args.events)
    except InvariantViolation as exc:
        logger.error("invariant violation: %s", exc)
        return EXIT_INVARIANT
    except (OSError, TraceFormatError) as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
