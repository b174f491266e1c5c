"""Session-oriented HTTP API for interactive annotation.

One session per image: create it from an uploaded PNG or a dataset scene,
submit extreme points once to get the initial segmentation, then submit
corrective scribbles as free polylines. Every accepted mutation bumps the
session revision and stores its label image, so any revision stays
retrievable and responses replay byte-identically for a fixed transcript.
"""

import base64
import io
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image

from .data import load_scene, prepare_image
from .geometry import (
    ExtremePoints, Point, box_from_extreme_points,
    build_region_annotation_pair, rasterize_extreme_points,
    rasterize_polyline,
)
from .model import predict_segmentation

MAX_IMAGE_BYTES = 4 * 1024 * 1024
MAX_IMAGE_SIDE = 256
_SCENE_ID = re.compile(r"[A-Za-z0-9_\-]+")


class ApiError(Exception):
    def __init__(self, status, code, message):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Session:
    session_id: str
    image: np.ndarray            # [H,W,3] float32 in [0,1]
    lock: threading.Lock = field(default_factory=threading.Lock)
    revision: int = 0
    boxes: list = None           # set once by extreme points
    annotations: list = None     # per-region positive maps, append-only
    labels: np.ndarray = None    # latest predicted label map
    payloads: dict = field(default_factory=dict)  # revision -> response dict

    @property
    def width(self):
        return self.image.shape[1]

    @property
    def height(self):
        return self.image.shape[0]


def _decode_image(b64_payload):
    try:
        raw = base64.b64decode(b64_payload, validate=True)
    except (ValueError, TypeError):
        raise ApiError(400, "bad_image", "image_png is not valid base64")
    if len(raw) > MAX_IMAGE_BYTES:
        raise ApiError(413, "image_too_large",
                       f"image exceeds {MAX_IMAGE_BYTES} bytes")
    try:
        with Image.open(io.BytesIO(raw)) as img:
            img.load()
            rgb = img.convert("RGB")
    except Exception:
        raise ApiError(400, "bad_image", "payload is not a decodable image")
    if rgb.width > MAX_IMAGE_SIDE or rgb.height > MAX_IMAGE_SIDE:
        raise ApiError(413, "image_too_large",
                       f"image exceeds {MAX_IMAGE_SIDE}px per side")
    arr = np.asarray(rgb, dtype=np.float32) / np.float32(255.0)
    return arr


def _encode_labels(labels):
    buf = io.BytesIO()
    Image.fromarray(labels.astype(np.uint16)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _require(body, key, kind, code):
    value = body.get(key)
    if not isinstance(value, kind):
        raise ApiError(400, code, f"request body needs {key!r}")
    return value


class AnnotationService:
    """Owns the model, the session registry, and the predict plumbing."""

    def __init__(self, params, scene_dir=None, sharing="shared",
                 box_margin=0.1):
        self.params = params
        self.scene_dir = Path(scene_dir) if scene_dir else None
        self.sharing = sharing
        self.box_margin = box_margin
        self.sessions = {}
        self.registry_lock = threading.Lock()
        self.counter = 0

    def create_session(self, body):
        scene_id = body.get("scene_id")
        image_png = body.get("image_png")
        if (scene_id is None) == (image_png is None):
            raise ApiError(400, "bad_request",
                           "provide exactly one of scene_id or image_png")
        if scene_id is not None:
            if self.scene_dir is None:
                raise ApiError(404, "unknown_scene",
                               "service is running without a scene directory")
            if not isinstance(scene_id, str) or not _SCENE_ID.fullmatch(scene_id):
                raise ApiError(400, "bad_request", "malformed scene_id")
            path = self.scene_dir / scene_id
            if not path.is_dir():
                raise ApiError(404, "unknown_scene", f"no scene {scene_id!r}")
            image = load_scene(path).image
        else:
            image = _decode_image(_require(body, "image_png", str, "bad_image"))
        with self.registry_lock:
            self.counter += 1
            session = Session(f"s-{self.counter:06d}", image)
            self.sessions[session.session_id] = session
        return session

    def get_session(self, session_id):
        session = self.sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return session

    def check_revision(self, session, expected):
        if expected is None:
            return
        try:
            expected = int(expected)
        except ValueError:
            raise ApiError(400, "bad_request",
                           "X-Expected-Revision must be an integer")
        if expected != session.revision:
            raise ApiError(
                409, "revision_conflict",
                f"expected revision {expected}, session is at {session.revision}")

    def predict(self, session):
        pairs = [build_region_annotation_pair(i, session.annotations)
                 for i in range(1, len(session.annotations) + 1)]
        seg, probs = predict_segmentation(
            prepare_image(session.image), session.boxes, pairs, self.params,
            self.sharing)
        return seg, probs

    def store_segmentation(self, session, seg, probs):
        session.revision += 1
        session.labels = seg.labels
        n = len(session.boxes)
        p = probs.tensor.data
        summary = []
        for i in range(1, n + 1):
            mine = seg.labels == i
            count = int(mine.sum())
            mean_p = float(p[..., i - 1][mine].mean()) if count else 0.0
            summary.append({"region_id": i, "pixel_count": count,
                            "mean_probability": round(mean_p, 6)})
        session.payloads[session.revision] = {
            "n_regions": n,
            "label_png": _encode_labels(seg.labels),
            "summary": summary,
        }

    def submit_extreme_points(self, session, body):
        if session.boxes is not None:
            raise ApiError(409, "extreme_points_already_set",
                           "extreme points are submitted once per session")
        regions = _require(body, "regions", list, "invalid_extreme_points")
        if not regions:
            raise ApiError(400, "invalid_extreme_points",
                           "at least one region required")
        boxes, annotations = [], []
        for i, quad in enumerate(regions, start=1):
            try:
                ep = ExtremePoints(*(
                    Point(int(round(float(quad[name][0]))),
                          int(round(float(quad[name][1]))))
                    for name in ("left", "right", "top", "bottom")))
                ep.validate(session.width, session.height)
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise ApiError(400, "invalid_extreme_points",
                               f"region {i}: {exc}")
            boxes.append(box_from_extreme_points(
                ep, self.box_margin, session.width, session.height))
            annotations.append(
                rasterize_extreme_points(ep, session.width, session.height))
        session.boxes = boxes
        session.annotations = annotations
        seg, probs = self.predict(session)
        self.store_segmentation(session, seg, probs)

    def submit_scribbles(self, session, body):
        if session.boxes is None:
            raise ApiError(409, "no_prediction",
                           "submit extreme points before scribbles")
        scribbles = _require(body, "scribbles", list, "invalid_scribbles")
        if not scribbles:
            return []   # explicit no-op: revision and labels unchanged
        n = len(session.boxes)
        current = session.labels
        rasters, warnings = [], []
        for k, item in enumerate(scribbles, start=1):
            if not isinstance(item, dict):
                raise ApiError(400, "invalid_scribbles",
                               f"scribble {k} must be an object")
            region_id = item.get("region_id")
            if not isinstance(region_id, int) or not 1 <= region_id <= n:
                raise ApiError(400, "unknown_region",
                               f"scribble {k}: region_id must be in 1..{n}")
            points = item.get("points")
            if not isinstance(points, list) or not points:
                raise ApiError(400, "empty_scribble",
                               f"scribble {k} carries no points")
            try:
                raster = rasterize_polyline(
                    points, session.width, session.height)
            except (ValueError, TypeError) as exc:
                raise ApiError(400, "invalid_scribbles",
                               f"scribble {k}: {exc}")
            col = min(max(int(round(float(points[0][0]))), 0), session.width - 1)
            row = min(max(int(round(float(points[0][1]))), 0), session.height - 1)
            if int(current[row, col]) != region_id:
                warnings.append(
                    f"scribble {k} for region {region_id} starts on a pixel "
                    f"currently predicted as region {int(current[row, col])}")
            rasters.append((region_id, raster))
        for region_id, raster in rasters:
            session.annotations[region_id - 1] = (
                session.annotations[region_id - 1].union(raster))
        seg, probs = self.predict(session)
        self.store_segmentation(session, seg, probs)
        return warnings

    def segmentation_payload(self, session, revision=None):
        if not session.payloads:
            raise ApiError(404, "no_prediction",
                           "no segmentation yet; submit extreme points first")
        if revision is None:
            revision = session.revision
        payload = session.payloads.get(revision)
        if payload is None:
            raise ApiError(404, "unknown_revision",
                           f"no segmentation at revision {revision}")
        return revision, payload


def create_app(params, scene_dir=None, sharing="shared", box_margin=0.1):
    service = AnnotationService(params, scene_dir, sharing, box_margin)
    app = FastAPI(title="canvaseg annotation service")
    app.state.service = service

    @app.exception_handler(ApiError)
    async def api_error_handler(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_request: Request,
                                 exc: RequestValidationError):
        # keep the error contract uniform, framework validation included
        return JSONResponse(status_code=400,
                            content={"code": "bad_request", "message": str(exc)})

    @app.post("/session")
    def create_session(body: dict):
        session = service.create_session(body)
        return {"session_id": session.session_id, "revision": 0,
                "width": session.width, "height": session.height}

    @app.post("/session/{session_id}/extreme-points")
    def extreme_points(session_id: str, body: dict,
                       expected: str = Header(None, alias="X-Expected-Revision")):
        session = service.get_session(session_id)
        with session.lock:
            service.check_revision(session, expected)
            service.submit_extreme_points(session, body)
            revision, payload = service.segmentation_payload(session)
            return {"session_id": session_id, "revision": revision, **payload}

    @app.post("/session/{session_id}/scribbles")
    def scribbles(session_id: str, body: dict,
                  expected: str = Header(None, alias="X-Expected-Revision")):
        session = service.get_session(session_id)
        with session.lock:
            service.check_revision(session, expected)
            warnings = service.submit_scribbles(session, body)
            revision, payload = service.segmentation_payload(session)
            return {"session_id": session_id, "revision": revision,
                    "warnings": warnings, **payload}

    @app.get("/session/{session_id}/segmentation")
    def segmentation(session_id: str, revision: int = None):
        session = service.get_session(session_id)
        with session.lock:
            revision, payload = service.segmentation_payload(session, revision)
            return {"session_id": session_id, "revision": revision, **payload}

    return app
