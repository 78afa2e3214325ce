import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from fastapi import Body, FastAPI, File, HTTPException, Query, UploadFile

from .cache import InvariantViolation
from .config import DATA_DIR, LOG_LEVEL, ConfigError, parse_config, with_overrides
from .replacement import POLICY_NAMES
from .simulator import simulate
from .sweep import SWEEP_AXES, run_sweep
from .trace import TEXT_SUFFIXES, TraceFormatError, read_trace

logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)


# ============================================================
# APP INIT
# ============================================================
app = FastAPI(title="Pairwise LLC Simulator API")

TRACE_DIR = Path(DATA_DIR) / "traces"
TRACE_SUFFIXES = (".trace", ".bin") + TEXT_SUFFIXES


def _trace_path(name: str) -> Path:
    path = TRACE_DIR / Path(name).name
    if not path.exists():
        raise HTTPException(status_code=400, detail=f"Unknown trace {name!r}; upload it via /traces")
    return path


def _config(data: Dict[str, Any], trace: Optional[str]):
    try:
        cfg = parse_config(data)
        if trace:
            cfg = with_overrides(cfg, trace=str(_trace_path(trace)))
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    if not cfg.trace and not cfg.generator:
        raise HTTPException(status_code=400, detail="Give a trace name or a generator block")
    return cfg


def _guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except TraceFormatError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    except InvariantViolation as exc:
        logger.error("invariant violation: %s", exc)
        raise HTTPException(status_code=500, detail=str(exc))
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


# ============================================================
# TRACES
# ============================================================
@app.post("/traces")
def upload_trace(file: UploadFile = File(...)):
    name = Path(file.filename or "").name
    if not name.lower().endswith(TRACE_SUFFIXES):
        raise HTTPException(status_code=400, detail=f"Trace file must end with one of {TRACE_SUFFIXES}")

    TRACE_DIR.mkdir(parents=True, exist_ok=True)
    path = TRACE_DIR / name
    with open(path, "wb") as f:
        f.write(file.file.read())

    try:
        stream = read_trace(path)
    except TraceFormatError as exc:
        path.unlink(missing_ok=True)
        raise HTTPException(status_code=422, detail=str(exc))

    return {
        "status": "success",
        "trace": name,
        "records": len(stream),
        "cores": len({acc.core_id for acc in stream}),
    }


# ============================================================
# RUN / SWEEP
# ============================================================
@app.post("/run")
def run(config: Dict[str, Any] = Body(default={}), trace: Optional[str] = Query(None)):
    cfg = _config(config, trace)
    result = _guarded(simulate, cfg)
    return _guarded(lambda: result.report.to_dict())


@app.post("/sweep")
def sweep(
    axis: str = Body(...),
    values: List[float] = Body(...),
    config: Dict[str, Any] = Body(default={}),
    trace: Optional[str] = Query(None),
):
    if axis not in SWEEP_AXES:
        raise HTTPException(status_code=400, detail=f"Unknown axis {axis!r}; valid: {list(SWEEP_AXES)}")
    cfg = _config(config, trace)
    # integral axes come back from JSON as floats
    points = [int(v) if axis != "llc_capacity" and float(v).is_integer() else v for v in values]
    rows = _guarded(run_sweep, cfg, axis, points)
    return {"axis": axis, "rows": rows}


@app.get("/policies")
def policies():
    return {"policies": list(POLICY_NAMES)}
