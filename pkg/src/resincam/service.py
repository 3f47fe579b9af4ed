"""HTTP facade for the interactive refinement loop and batch automation.

Sessions hold an image, its foreground mask, the deduplicated grid
prompts and the operator's custom prompt history. Every prompt edit
replays the backend from scratch, so a session's final mask is a pure
function of the image plus the ordered prompt history.

Endpoints (JSON errors are {"code", "message"} with an HTTP status):
    POST   /sessions                       multipart image + config -> id, mask, proposals
    POST   /sessions/{id}/prompts          {x, y, label} -> new mask + delta
    DELETE /sessions/{id}/prompts/{index}  undo one custom prompt
    GET    /sessions/{id}/mask.png         current mask as black/white PNG
    POST   /sessions/{id}/truth            multipart ground-truth mask PNG
    GET    /sessions/{id}/evaluation       IoU + quality (+ grade) vs ground truth
    POST   /sessions/{id}/gcode            machine config -> program + stats
    GET    /healthz
"""

from __future__ import annotations

import base64
import io
import json
import os
import secrets
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image, UnidentifiedImageError

from .config import ConfigError, PipelineConfig, pipeline_config_from_dict
from .evaluation import classify_quality, grade_region, iou
from .gcode import emit_gcode, optimize_travel, parse_gcode, plan_toolpath, simulate_toolpath
from .imaging import BinaryMask, RasterImage, load_image, mask_from_image, remove_background
from .prompts import (BACKGROUND, FOREGROUND, PromptPoint, PromptSet,
                      dedup_prompts, generate_grid, make_prompt,
                      merge_custom_prompts, prompts_to_json)
from .segmentation import SegmentationResult, binarize, run_backend, select_final_mask


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Session:
    id: str
    image: RasterImage
    fg_mask: BinaryMask
    base_prompts: PromptSet
    config: PipelineConfig
    custom: list[PromptPoint] = field(default_factory=list)
    result: SegmentationResult | None = None
    final_mask: BinaryMask | None = None
    truth: BinaryMask | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """In-memory sessions with optional directory-backed persistence."""

    def __init__(self, persist_dir: str | None = None):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self.persist_dir = persist_dir
        if persist_dir:
            os.makedirs(persist_dir, exist_ok=True)

    def add(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.id] = session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown-session", f"no session {session_id!r}")
        return session

    def persist(self, session: Session, image_bytes: bytes | None = None) -> None:
        if not self.persist_dir:
            return
        root = os.path.join(self.persist_dir, session.id)
        os.makedirs(root, exist_ok=True)
        if image_bytes is not None:
            with open(os.path.join(root, "image.png"), "wb") as fh:
                fh.write(image_bytes)
        history = {
            "config": _config_snapshot(session.config),
            "prompts": prompts_to_json(session.custom),
        }
        with open(os.path.join(root, "history.json"), "w", encoding="utf-8") as fh:
            json.dump(history, fh, indent=2, sort_keys=True)


def _config_snapshot(cfg: PipelineConfig) -> dict:
    return {
        "background": {
            "mode": cfg.background.mode,
            "key_color": list(cfg.background.key_color) if cfg.background.key_color else None,
            "tolerance": cfg.background.tolerance,
        },
        "grid": {
            "rows": cfg.grid.rows, "cols": cfg.grid.cols,
            "patch_size": cfg.grid.patch_size,
            "dedup_threshold": cfg.grid.dedup_threshold,
            "dedup_mode": cfg.grid.dedup_mode,
        },
        "backend": {
            "variant": cfg.backend.variant,
            "threshold_mode": cfg.backend.threshold_mode,
            "fixed_threshold": cfg.backend.fixed_threshold,
            "color_tol": cfg.backend.color_tol,
            "connectivity": cfg.backend.connectivity,
        },
        "accept_threshold": cfg.accept_threshold,
    }


def decode_png_bytes(data: bytes) -> RasterImage:
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format != "PNG":
                raise ApiError(400, "decode-error", f"expected PNG, got {im.format}")
            if im.mode not in ("RGB", "RGBA"):
                raise ApiError(400, "decode-error", f"unsupported PNG mode {im.mode!r}")
            return RasterImage(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except UnidentifiedImageError as exc:
        raise ApiError(400, "decode-error", f"cannot decode image: {exc}") from exc


def mask_png_bytes(mask: BinaryMask) -> bytes:
    img = binarize(mask)
    buf = io.BytesIO()
    Image.fromarray(img.array, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def mask_png_b64(mask: BinaryMask) -> str:
    return base64.b64encode(mask_png_bytes(mask)).decode("ascii")


def _proposals_json(result: SegmentationResult) -> list[dict]:
    return [
        {
            "confidence": p.confidence,
            "backend_id": p.backend_id,
            "pixels": p.mask.count(),
            "seed_prompts": list(p.seed_prompts),
        }
        for p in result.proposals
    ]


def _rerun(session: Session) -> None:
    """Recompute the segmentation from the full prompt history."""
    prompts = merge_custom_prompts(session.base_prompts, session.custom)
    result = run_backend(session.image, session.fg_mask, prompts, session.config.backend)
    final = select_final_mask(result, session.config.accept_threshold)
    session.result = result
    session.final_mask = final


def create_app(persist_dir: str | None = None, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="resincam", docs_url=None, redoc_url=None)
    store = SessionStore(persist_dir=persist_dir)
    app.state.store = store

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    async def create_session(image: UploadFile = File(...), config: str = Form(default="{}")):
        data = await image.read()
        raster = decode_png_bytes(data)
        try:
            cfg = pipeline_config_from_dict(json.loads(config) if config else {})
        except (json.JSONDecodeError, ConfigError, ValueError) as exc:
            raise ApiError(400, "bad-config", str(exc)) from exc

        fg = remove_background(raster, cfg.background)
        grid = generate_grid(raster, cfg.grid, fg)
        base = dedup_prompts(grid, cfg.grid.dedup_threshold, cfg.grid.dedup_mode)
        session = Session(
            id=secrets.token_hex(8), image=raster, fg_mask=fg,
            base_prompts=base, config=cfg,
        )
        try:
            _rerun(session)
        except Exception as exc:
            raise ApiError(502, "backend-error", f"segmentation backend failed: {exc}") from exc
        store.add(session)
        store.persist(session, image_bytes=data)
        return {
            "id": session.id,
            "mask_png_b64": mask_png_b64(session.final_mask),
            "proposals": _proposals_json(session.result),
            "prompt_count": len(session.base_prompts.kept),
            "warnings": list(session.result.warnings),
        }

    @app.post("/sessions/{session_id}/prompts")
    async def apply_prompt(session_id: str, request: Request):
        session = store.get(session_id)
        try:
            body = await request.json()
            x, y, label = int(body["x"]), int(body["y"]), str(body["label"])
        except Exception as exc:
            raise ApiError(400, "bad-request", f"expected {{x, y, label}}: {exc}") from exc
        if label not in (FOREGROUND, BACKGROUND):
            raise ApiError(400, "bad-request", f'label must be "fg" or "bg", got {label!r}')
        if not (0 <= x < session.image.width and 0 <= y < session.image.height):
            raise ApiError(400, "out-of-bounds",
                           f"({x}, {y}) outside {session.image.width}x{session.image.height} image")
        with session.lock:
            before = session.final_mask.count()
            point = make_prompt(session.image, x, y, label, session.config.grid.patch_size)
            session.custom.append(point)
            try:
                _rerun(session)
            except Exception as exc:
                session.custom.pop()
                _rerun(session)
                raise ApiError(502, "backend-error", f"segmentation backend failed: {exc}") from exc
            store.persist(session)
            return {
                "mask_png_b64": mask_png_b64(session.final_mask),
                "delta": session.final_mask.count() - before,
                "proposals": _proposals_json(session.result),
                "prompt_index": len(session.custom) - 1,
            }

    @app.delete("/sessions/{session_id}/prompts/{index}")
    def delete_prompt(session_id: str, index: int):
        session = store.get(session_id)
        with session.lock:
            if not (0 <= index < len(session.custom)):
                raise ApiError(404, "unknown-prompt",
                               f"no custom prompt #{index} (have {len(session.custom)})")
            before = session.final_mask.count()
            session.custom.pop(index)
            _rerun(session)
            store.persist(session)
            return {
                "mask_png_b64": mask_png_b64(session.final_mask),
                "delta": session.final_mask.count() - before,
                "proposals": _proposals_json(session.result),
            }

    @app.get("/sessions/{session_id}/mask.png")
    def get_mask(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return Response(content=mask_png_bytes(session.final_mask), media_type="image/png")

    @app.post("/sessions/{session_id}/truth")
    async def upload_truth(session_id: str, truth: UploadFile = File(...)):
        session = store.get(session_id)
        raster = decode_png_bytes(await truth.read())
        if (raster.width, raster.height) != (session.image.width, session.image.height):
            raise ApiError(400, "dimension-mismatch",
                           f"truth is {raster.width}x{raster.height}, "
                           f"image is {session.image.width}x{session.image.height}")
        with session.lock:
            session.truth = mask_from_image(raster)
        return {"ok": True, "truth_pixels": session.truth.count()}

    @app.get("/sessions/{session_id}/evaluation")
    def evaluate_session(session_id: str, truth: str | None = None):
        session = store.get(session_id)
        with session.lock:
            if truth is not None:
                try:
                    truth_mask = mask_from_image(load_image(truth))
                except Exception as exc:
                    raise ApiError(400, "bad-truth", f"cannot load truth {truth!r}: {exc}") from exc
            elif session.truth is not None:
                truth_mask = session.truth
            else:
                raise ApiError(400, "no-truth",
                               "upload a ground-truth mask or pass ?truth=<path>")
            if (truth_mask.width, truth_mask.height) != (session.image.width, session.image.height):
                raise ApiError(400, "dimension-mismatch", "truth dimensions do not match the image")
            score = iou(session.final_mask, truth_mask)
            payload = {
                "id": session.id,
                "iou_ratio": score.ratio,
                "iou_percent": score.percent_1dp,
                "quality": classify_quality(score).value,
            }
            if session.final_mask.count() > 0:
                payload["grade"] = grade_region(session.image, session.final_mask).value
            return payload

    @app.post("/sessions/{session_id}/gcode")
    async def export_gcode(session_id: str, request: Request):
        session = store.get(session_id)
        try:
            body = await request.json()
        except Exception:
            body = {}
        try:
            cfg = pipeline_config_from_dict({"machine": body, "optimize_travel": body.get("optimize", False)})
            machine = cfg.require_machine()
        except (ConfigError, ValueError) as exc:
            raise ApiError(400, "bad-machine-config", str(exc)) from exc
        with session.lock:
            # Material to remove is non-retained wood; the keyed-out
            # backdrop is empty space and must never be cut.
            keep = BinaryMask(session.final_mask.bits | ~session.fg_mask.bits)
            binary = binarize(keep)
            toolpath = plan_toolpath(binary, machine)
            if cfg.optimize_travel:
                toolpath = optimize_travel(toolpath)
            program = emit_gcode(toolpath)
            # Verified count: replay the parsed text, never trust the planner.
            removal = simulate_toolpath(parse_gcode(program.text), machine,
                                        session.image.width, session.image.height)
            return {
                "gcode": program.text,
                "cut_mm": toolpath.cut_length_mm,
                "rapid_mm": toolpath.rapid_length_mm,
                "removed_cells": removal.count(),
                "warnings": list(removal.warnings),
            }

    if static_dir and os.path.isdir(static_dir):
        app.mount("/ui", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


app = create_app(
    persist_dir=os.environ.get("RESINCAM_PERSIST_DIR"),
    static_dir=os.environ.get("RESINCAM_STATIC_DIR"),
)
