"""Session-oriented HTTP API over the interactive engine.

One server process holds the trained models once and any number of
independent sessions, each pairing a volume with its segmentation
state. Guidance arrives as geometry (polylines, corners, points) and is
rasterized server-side, so browser canvases and scripted clients share
one rasterization contract. Guidance processing is synchronous: the
response returns after the round has propagated through the volume.

Requests within one session are serialized by a per-session lock;
different sessions run concurrently. The layer adds no segmentation
logic of its own, every mask byte comes from the engine.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import JSONResponse

from .data import NumericError, ValidationError, binarize
from .engine import EngineConfig, ModelBundle, Session
from .rasterize import GeometryError, rasterize_geometry
from .synthetic import SyntheticVolumeSpec, generate_synthetic_volume
from .volume_io import load_volume, mask_to_png_bytes, slice_to_png_bytes

DEFAULT_WINDOW = (0.0, 1.0)


@dataclass
class _LiveSession:
    session: Session
    lock: threading.Lock = field(default_factory=threading.Lock)
    rounds_completed: int = 0


def _bad_request(fieldname: str, message: str) -> HTTPException:
    return HTTPException(status_code=400,
                         detail={"field": fieldname, "message": message})


def _volume_from_payload(payload: dict):
    """Resolve the volume a new session should segment.

    Accepts either {"path": ..., "format": optional} referencing a file
    the server can read, or {"synthetic": {...}} with SyntheticVolumeSpec
    fields for self-contained demos and tests.
    """
    if not isinstance(payload, dict):
        raise _bad_request("body", "expected a JSON object")
    has_path = "path" in payload
    has_synth = "synthetic" in payload
    if has_path == has_synth:
        raise _bad_request("body", "provide exactly one of 'path' or 'synthetic'")
    if has_path:
        try:
            return load_volume(payload["path"], format=payload.get("format"))
        except FileNotFoundError as exc:
            raise _bad_request("path", str(exc)) from exc
        except (ValidationError, ValueError, OSError) as exc:
            raise _bad_request("path", f"could not load volume: {exc}") from exc
    spec_dict = payload["synthetic"]
    if not isinstance(spec_dict, dict):
        raise _bad_request("synthetic", "expected an object of volume spec fields")
    allowed = {"shape", "kind", "drift_px", "radius_range", "noise_level",
               "contrast", "seed"}
    unknown = set(spec_dict) - allowed
    if unknown:
        raise _bad_request("synthetic", f"unknown fields: {sorted(unknown)}")
    kwargs = dict(spec_dict)
    for key in ("shape", "radius_range"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        volume, _ = generate_synthetic_volume(SyntheticVolumeSpec(**kwargs))
    except (ValidationError, TypeError, ValueError) as exc:
        raise _bad_request("synthetic", str(exc)) from exc
    return volume


def _parse_window(window: str | None) -> tuple[float, float]:
    if window is None:
        return DEFAULT_WINDOW
    parts = window.split(",")
    if len(parts) != 2:
        raise _bad_request("window", "expected 'lo,hi'")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise _bad_request("window", "expected two numbers") from exc
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise _bad_request("window", "window must satisfy lo < hi")
    return lo, hi


def _rle_counts(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, alternating background/foreground runs.

    The first count is always a background run (possibly zero), so a
    decoder can start from value 0 unconditionally.
    """
    flat = mask.reshape(-1).astype(np.int64)
    if flat.size == 0:
        return []
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    counts = np.diff(edges).tolist()
    if int(flat[0]) == 1:
        counts = [0] + counts
    return [int(c) for c in counts]


def create_app(models: ModelBundle, engine_config: EngineConfig | None = None) -> FastAPI:
    """The session API bound to one loaded model bundle."""
    engine_config = engine_config or EngineConfig()
    app = FastAPI(title="memseg", docs_url=None, redoc_url=None)
    registry: dict[str, _LiveSession] = {}
    registry_lock = threading.Lock()

    def _get(session_id: str) -> _LiveSession:
        with registry_lock:
            live = registry.get(session_id)
        if live is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return live

    @app.post("/sessions")
    def create_session(payload: dict) -> dict:
        volume = _volume_from_payload(payload)
        session = Session(volume, models, engine_config)
        session_id = uuid.uuid4().hex
        with registry_lock:
            registry[session_id] = _LiveSession(session)
        h, w, c = volume.shape
        return {"session_id": session_id, "c": c, "h": h, "w": w}

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str) -> Response:
        with registry_lock:
            live = registry.pop(session_id, None)
        if live is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return Response(status_code=204)

    @app.get("/sessions/{session_id}/slices/{k}")
    def get_slice(session_id: str, k: int, window: str | None = None) -> Response:
        live = _get(session_id)
        lo, hi = _parse_window(window)
        with live.lock:
            if not (0 <= k < live.session.volume.num_slices):
                raise HTTPException(status_code=404, detail=f"no slice {k}")
            png = slice_to_png_bytes(live.session.slice_image(k), window=(lo, hi))
        return Response(content=png, media_type="image/png")

    @app.get("/sessions/{session_id}/masks/{k}")
    def get_mask(session_id: str, k: int, format: str = "png") -> Response:
        if format not in ("png", "rle"):
            raise _bad_request("format", "expected 'png' or 'rle'")
        live = _get(session_id)
        with live.lock:
            if not (0 <= k < live.session.volume.num_slices):
                raise HTTPException(status_code=404, detail=f"no slice {k}")
            mask = binarize(live.session.state.masks[k],
                            live.session.config.binarize_threshold)
            if format == "png":
                return Response(content=mask_to_png_bytes(mask),
                                media_type="image/png")
            h, w = mask.shape
            body = {"slice_index": k, "shape": [h, w], "order": "row-major",
                    "counts": _rle_counts(mask)}
        return JSONResponse(body)

    @app.post("/sessions/{session_id}/guidance")
    def post_guidance(session_id: str, payload: dict) -> dict:
        live = _get(session_id)
        if not isinstance(payload, dict):
            raise _bad_request("body", "expected a JSON object")
        for name in ("slice_index", "type", "geometry"):
            if name not in payload:
                raise _bad_request(name, "missing")
        slice_index = payload["slice_index"]
        if not isinstance(slice_index, int) or isinstance(slice_index, bool):
            raise _bad_request("slice_index", "must be an integer")
        with live.lock:
            session = live.session
            c = session.volume.num_slices
            if not (0 <= slice_index < c):
                raise _bad_request("slice_index", f"outside [0, {c})")
            try:
                guidance = rasterize_geometry(payload["type"], payload["geometry"],
                                              session.volume.shape[:2], slice_index)
            except GeometryError as exc:
                raise _bad_request(exc.field, str(exc)) from exc
            first_round = not session.state.annotated_slices
            if not first_round and session.state.round >= session.config.max_rounds:
                raise _bad_request(
                    "round", f"round limit reached ({session.config.max_rounds})")
            try:
                if first_round:
                    session.initialize(guidance)
                    session.propagate(slice_index)
                else:
                    session.refine_round(guidance)
            except NumericError as exc:
                raise HTTPException(status_code=500, detail=str(exc)) from exc
            live.rounds_completed += 1
            return {"round": live.rounds_completed, "status": "ok"}

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str) -> dict:
        live = _get(session_id)
        with live.lock:
            state = live.session.state
            return {
                "round": live.rounds_completed,
                "quality_scores": [float(q) for q in state.quality_scores],
                "suggested_slice": live.session.suggest_next_slice(),
                "annotated_slices": sorted(state.annotated_slices),
            }

    return app
