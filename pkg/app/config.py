import dataclasses
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from dotenv import load_dotenv

from .cache import CacheLevelConfig, HierarchyConfig
from .pairwise import PairwiseConfig
from .replacement import validate_policy_name
from .trace import GENERATORS, TraceGenConfig

load_dotenv()

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EMIT_FORMATS = ("json", "csv")

DATA_DIR = os.getenv("PAIRLLC_DATA_DIR", "data")
LOG_LEVEL = os.getenv("PAIRLLC_LOG_LEVEL", "INFO")


class ConfigError(ValueError):
    def __init__(self, message: str, field_path: str = "", line: Optional[int] = None):
        where = field_path or "<root>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")
        self.field_path = field_path
        self.line = line


# ============================================================
# Schema
# ============================================================
@dataclass(frozen=True)
class MetricsConfig:
    reuse_profile: bool = False
    dump_events: bool = False
    dump_pairtable: bool = False


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    trace: str = ""
    generator: str = ""
    trace_gen: TraceGenConfig = field(default_factory=TraceGenConfig)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    policy: str = "lru"
    pairwise: PairwiseConfig = field(default_factory=PairwiseConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    rng_seed: int = 0
    out_dir: str = "out"
    emit: str = "json"


# ============================================================
# Loading
# ============================================================
def _line_of(text: str, dotted: str) -> Optional[int]:
    """1-based line where the last key of `dotted` appears, searching below its parents."""
    if not text or not dotted:
        return None
    lines = text.splitlines()
    start, found = 0, None
    for key in dotted.split("."):
        pattern = re.compile(r'"%s"\s*:' % re.escape(key))
        for i in range(start, len(lines)):
            if pattern.search(lines[i]):
                found, start = i + 1, i
                break
        else:
            return found
    return found


def _check_value(value: Any, default: Any, path: str, text: str) -> Any:
    expected = type(default)
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(f"expected {expected.__name__}, got {type(value).__name__}",
                          path, _line_of(text, path))
    return value


def _build(
    cls,
    data: Any,
    path: str,
    text: str,
    defaults: Any = None,
    nested: Optional[Dict[str, Callable[[Any, str], Any]]] = None,
):
    """Overlay a JSON object onto `defaults` (a `cls` instance), rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path, _line_of(text, path))
    defaults = cls() if defaults is None else defaults
    names = [f.name for f in dataclasses.fields(cls)]
    changes = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown key; valid: {', '.join(names)}", sub, _line_of(text, sub))
        if nested and key in nested:
            changes[key] = nested[key](value, sub)
        else:
            changes[key] = _check_value(value, getattr(defaults, key), sub, text)
    return dataclasses.replace(defaults, **changes)


def parse_config(data: Dict[str, Any], text: str = "") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    if "garibaldi" in data:
        if "pairwise" in data:
            raise ConfigError("give either 'pairwise' or its alias 'garibaldi', not both",
                              "garibaldi", _line_of(text, "garibaldi"))
        data["pairwise"] = data.pop("garibaldi")

    # the generator block carries its name next to the generator knobs
    gen_name = ""
    block_seeded = False
    if "generator" in data:
        block = data.pop("generator")
        if not isinstance(block, dict):
            raise ConfigError("expected an object", "generator", _line_of(text, "generator"))
        block = dict(block)
        gen_name = block.pop("name", "")
        if gen_name not in GENERATORS:
            raise ConfigError(f"unknown generator {gen_name!r}; valid: {', '.join(GENERATORS)}",
                              "generator.name", _line_of(text, "generator.name"))
        if "trace_gen" in data:
            raise ConfigError("generator knobs go inside the generator block", "trace_gen",
                              _line_of(text, "trace_gen"))
        block_seeded = "rng_seed" in block
        data["trace_gen"] = block

    base = HierarchyConfig()

    def level(default: CacheLevelConfig):
        return lambda v, p: _build(CacheLevelConfig, v, p, text, defaults=default)

    cfg = _build(
        RunConfig, data, "", text,
        nested={
            "trace_gen": lambda v, p: _build(TraceGenConfig, v, "generator", text),
            "hierarchy": lambda v, p: _build(
                HierarchyConfig, v, p, text,
                nested={"private": level(base.private), "llc": level(base.llc)}),
            "pairwise": lambda v, p: _build(PairwiseConfig, v, p, text),
            "metrics": lambda v, p: _build(MetricsConfig, v, p, text),
        },
    )
    if gen_name:
        # the run seed drives the generator unless the block names its own
        seed = cfg.trace_gen.rng_seed if block_seeded else cfg.rng_seed
        cfg = dataclasses.replace(cfg, generator=gen_name, rng_seed=seed,
                                  trace_gen=dataclasses.replace(cfg.trace_gen, rng_seed=seed))
    validate(cfg, text)
    return cfg


def validate(cfg: RunConfig, text: str = "") -> None:
    """Range checks; each failure names the block it came from."""
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.schema_version} (expected {SCHEMA_VERSION})",
                          "schema_version", _line_of(text, "schema_version"))
    if cfg.rng_seed < 0 or cfg.rng_seed >= 1 << 64:
        raise ConfigError("must be an unsigned 64-bit integer", "rng_seed", _line_of(text, "rng_seed"))
    if cfg.emit not in EMIT_FORMATS:
        raise ConfigError(f"unknown format {cfg.emit!r}; valid: {', '.join(EMIT_FORMATS)}",
                          "emit", _line_of(text, "emit"))
    checks = (
        ("policy", lambda: validate_policy_name(cfg.policy)),
        ("hierarchy", cfg.hierarchy.validate),
        ("pairwise", cfg.pairwise.validate),
        ("generator", cfg.trace_gen.validate),
    )
    for path, check in checks:
        try:
            check()
        except ValueError as exc:
            raise ConfigError(str(exc), path, _line_of(text, path)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", "", exc.lineno) from exc
    cfg = parse_config(data, text)
    logger.info("loaded config %s (digest %s)", path, config_digest(cfg))
    return cfg


def with_overrides(cfg: RunConfig, trace: Optional[str] = None, out: Optional[str] = None,
                   seed: Optional[int] = None) -> RunConfig:
    """Command-line flags win over config fields."""
    changes: Dict[str, Any] = {}
    if trace:
        changes["trace"] = str(trace)
    if out:
        changes["out_dir"] = str(out)
    if seed is not None:
        changes["rng_seed"] = seed
        changes["trace_gen"] = dataclasses.replace(cfg.trace_gen, rng_seed=seed)
    cfg = dataclasses.replace(cfg, **changes)
    validate(cfg)
    return cfg


# ============================================================
# Digest
# ============================================================
def canonical_dict(cfg: RunConfig) -> Dict[str, Any]:
    """Effective config as plain data; output location does not change the run."""
    data = dataclasses.asdict(cfg)
    data.pop("out_dir")
    data.pop("emit")
    if not cfg.pairwise.enabled:
        data["pairwise"] = {"enabled": False}
    if not cfg.generator:
        data.pop("trace_gen")
        data.pop("rng_seed")
    return data


def config_digest(cfg: RunConfig) -> str:
    blob = json.dumps(canonical_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
