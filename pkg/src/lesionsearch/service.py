"""HTTP service tying the pipeline together.

Endpoints live under ``/api/v1``: multipart ingest of a manifest plus image
files, multipart similarity queries, JSON annotation storage, liveness, and
index statistics. ROI thumbnails are generated at ingest time and served
statically from ``/thumbnails``.

Ingest is serialized behind a lock and swaps in a freshly built index, so
concurrent queries always read a consistent snapshot. The index (and a
monotonically increasing version) persists to the data directory and is
reloaded on startup, making restarts transparent to clients.
"""

import io
import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import imagecore
from .descriptor import DescriptorConfig, describe
from .frangi import FrangiParams, frangi_filter
from .imagecore import BBox, ImageGrid, Manifest
from .metric import EmbeddingHead, embed, load_head
from .retrieval import (
    Index,
    build_index,
    load_index,
    normalize_setting,
    query,
    save_index,
)

ANNOTATION_KINDS = ("box", "polygon", "point")


class IngestError(ValueError):
    """A manifest row references an image that cannot be used."""


class EmptyPoolError(ValueError):
    """The candidate pool for a query came up empty."""


class AnnotationError(ValueError):
    """Annotation body violates the schema."""


class UnknownImageError(KeyError):
    """Annotation target is not an ingested image id."""


@dataclass(frozen=True)
class ServiceConfig:
    data_dir: Path
    listen: str = "127.0.0.1:8000"
    default_k: int = 9
    roi_size: int = 64
    cors_allow: tuple[str, ...] = ()
    max_upload_bytes: int = 32 * 1024 * 1024
    head_path: Path | None = None
    static_dir: Path | None = None  # serve the web client from /ui when set
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)

    def __post_init__(self):
        if self.default_k < 1:
            raise ValueError("default_k must be >= 1")
        object.__setattr__(self, "data_dir", Path(self.data_dir))
        if self.head_path is not None:
            object.__setattr__(self, "head_path", Path(self.head_path))
        if self.static_dir is not None:
            object.__setattr__(self, "static_dir", Path(self.static_dir))

    @staticmethod
    def from_json(path: str | Path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        descriptor_raw = raw.get("descriptor", {})
        frangi_raw = descriptor_raw.pop("frangi", None)
        if frangi_raw is not None:
            if "scales" in frangi_raw:
                frangi_raw["scales"] = tuple(frangi_raw["scales"])
            descriptor_cfg = DescriptorConfig(
                frangi=FrangiParams(**frangi_raw), **descriptor_raw
            )
        else:
            descriptor_cfg = DescriptorConfig(**descriptor_raw)
        return ServiceConfig(
            data_dir=Path(raw["data_dir"]),
            listen=raw.get("listen", "127.0.0.1:8000"),
            default_k=int(raw.get("default_k", 9)),
            roi_size=int(raw.get("roi_size", 64)),
            cors_allow=tuple(raw.get("cors_allow", ())),
            max_upload_bytes=int(raw.get("max_upload_bytes", 32 * 1024 * 1024)),
            head_path=Path(raw["head_path"]) if raw.get("head_path") else None,
            static_dir=Path(raw["static_dir"]) if raw.get("static_dir") else None,
            descriptor=descriptor_cfg,
        )


class RetrievalEngine:
    """Library-level core behind the HTTP endpoints.

    Holds the in-memory index plus the descriptor/head configuration; every
    HTTP response is derived from a method here so the two surfaces cannot
    drift apart.
    """

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        (self.data_dir / "thumbnails").mkdir(exist_ok=True)
        (self.data_dir / "annotations").mkdir(exist_ok=True)
        self._write_lock = threading.Lock()
        self._head: EmbeddingHead | None = (
            load_head(config.head_path) if config.head_path else None
        )
        self._index: Index = build_index([], np.zeros((0, 0)), [], [], [])
        self._index_version = 0
        self._load_persisted()

    # -- persistence --------------------------------------------------------

    @property
    def _index_path(self) -> Path:
        return self.data_dir / "index.bin"

    def _load_persisted(self) -> None:
        if not self._index_path.exists():
            return
        index, meta = load_index(self._index_path)
        self._index = index
        self._index_version = int(meta.get("index_version", 0))
        # the index dictates the descriptor pipeline: adopt the persisted
        # config so query-time embeddings always match ingest-time ones
        if "descriptor" in meta:
            self.config = replace(
                self.config, descriptor=DescriptorConfig.from_dict(meta["descriptor"])
            )
        head_applied = bool(meta.get("head_applied", False))
        if head_applied and self._head is None:
            raise ValueError(
                "persisted index was built with an embedding head; "
                "configure head_path to query it"
            )
        if not head_applied and self._head is not None and index.count:
            raise ValueError(
                "persisted index was built without an embedding head; "
                "drop head_path or rebuild the index"
            )

    def _persist(self) -> None:
        save_index(
            self._index,
            self._index_path,
            meta={
                "index_version": self._index_version,
                "descriptor": self.config.descriptor.to_dict(),
                "head_applied": self._head is not None,
            },
        )

    # -- pipeline ------------------------------------------------------------

    def _roi_from_image(self, image: ImageGrid, bbox: BBox | None) -> ImageGrid:
        roi = imagecore.crop_roi(image, bbox) if bbox is not None else image
        size = self.config.roi_size
        if (roi.width, roi.height) != (size, size):
            roi = imagecore.resize_bilinear(roi, size, size)
        return roi

    def embed_roi(self, roi: ImageGrid) -> np.ndarray:
        d = describe(roi, self.config.descriptor)
        if self._head is not None:
            return embed(self._head, d)
        return d.vector

    def ingest(self, manifest: Manifest, image_bytes: dict[str, bytes]) -> dict:
        """Crop, resize, describe, and add every manifest record.

        ``image_bytes`` maps manifest image paths to raster payloads; a
        missing path raises IngestError naming it. Returns the new count and
        index version. The swap is atomic: queries never see a partial batch.
        """
        with self._write_lock:
            decoded: dict[str, ImageGrid] = {}
            new_ids, new_vecs, new_pat, new_study, new_label = [], [], [], [], []
            thumbs: list[tuple[str, np.ndarray]] = []
            next_serial = self._index.count
            for record in manifest.records:
                if record.image_path not in image_bytes:
                    raise IngestError(f"missing image file {record.image_path!r}")
                if record.image_path not in decoded:
                    try:
                        decoded[record.image_path] = imagecore.decode_image(
                            image_bytes[record.image_path]
                        )
                    except ValueError as exc:
                        raise IngestError(f"{record.image_path!r}: {exc}") from exc
                image = decoded[record.image_path]
                try:
                    roi = self._roi_from_image(image, record.bbox)
                except ValueError as exc:
                    raise IngestError(f"{record.image_path!r}: {exc}") from exc
                entry_id = f"roi-{next_serial:06d}"
                next_serial += 1
                new_ids.append(entry_id)
                new_vecs.append(self.embed_roi(roi))
                new_pat.append(record.patient_id)
                new_study.append(record.study_id)
                new_label.append(record.lesion_type)
                thumbs.append((entry_id, roi.plane(0)))

            if new_ids:
                if self._index.count:
                    merged = build_index(
                        list(self._index.ids) + new_ids,
                        np.vstack([self._index.matrix, np.array(new_vecs)]),
                        list(self._index.patient_ids) + new_pat,
                        list(self._index.study_ids) + new_study,
                        list(self._index.lesion_types) + new_label,
                    )
                else:
                    merged = build_index(new_ids, np.array(new_vecs), new_pat, new_study, new_label)
                for entry_id, plane in thumbs:
                    imagecore.save_png(
                        plane, self.data_dir / "thumbnails" / f"{entry_id}.png", bit_depth=8
                    )
                self._index = merged
                self._index_version += 1
                self._persist()
            return {"ingested": len(new_ids), "index_version": self._index_version}

    def query_image(
        self,
        image: ImageGrid,
        bbox: BBox | None = None,
        k: int | None = None,
        setting: str = "all_patients",
        patient_id: str | None = None,
    ) -> list[dict]:
        """Full query pipeline; raises EmptyPoolError when no candidates
        survive the setting filter."""
        setting = normalize_setting(setting)
        index = self._index
        roi = self._roi_from_image(image, bbox)
        q = self.embed_roi(roi)
        ranked = query(
            index,
            q,
            k=k or self.config.default_k,
            setting=setting,
            query_patient=patient_id,
        )
        if len(ranked) == 0:
            raise EmptyPoolError(f"no candidates under setting {setting!r}")
        label_of = dict(zip(index.ids, index.lesion_types))
        patient_of = dict(zip(index.ids, index.patient_ids))
        return [
            {
                "id": rid,
                "distance": dist,
                "lesion_type": label_of[rid],
                "patient_id": patient_of[rid],
                "thumbnail_url": f"/thumbnails/{rid}.png",
            }
            for rid, dist in ranked.items
        ]

    def filter_preview(
        self, image: ImageGrid, params: FrangiParams, band: int | None, band_count: int
    ) -> tuple[np.ndarray, dict]:
        """Response plane for the UI preview: full sweep, or one contiguous
        scale band when ``band`` is given."""
        scales = params.scales
        if band is not None:
            groups = np.array_split(np.arange(len(scales)), band_count)
            if not (0 <= band < len(groups)):
                raise ValueError(f"band must lie in [0, {len(groups) - 1}]")
            picked = tuple(scales[i] for i in groups[band])
            params = replace(params, scales=picked)
        rm = frangi_filter(image, params)
        info = {
            "width": image.width,
            "height": image.height,
            "band": band,
            "band_count": band_count,
            "scales": list(params.scales),
            "argmax_scale_histogram": {
                str(s): int(c)
                for s, c in zip(*np.unique(rm.argmax_scale, return_counts=True))
            },
        }
        return rm.response[0], info

    # -- annotations ---------------------------------------------------------

    def _annotation_path(self, image_id: str) -> Path:
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in image_id)
        return self.data_dir / "annotations" / f"{safe}.json"

    def validate_annotation(self, body: dict) -> dict:
        if not isinstance(body, dict):
            raise AnnotationError("annotation body must be a JSON object")
        image_id = body.get("image_id")
        if not isinstance(image_id, str) or not image_id:
            raise AnnotationError("image_id must be a nonempty string")
        if image_id not in self._index.ids:
            raise UnknownImageError(image_id)
        shapes = body.get("shapes")
        if not isinstance(shapes, list) or not shapes:
            raise AnnotationError("shapes must be a nonempty list")
        size = self.config.roi_size
        for shape in shapes:
            if not isinstance(shape, dict):
                raise AnnotationError("each shape must be an object")
            kind = shape.get("kind")
            if kind not in ANNOTATION_KINDS:
                raise AnnotationError(
                    f"shape kind must be one of {ANNOTATION_KINDS}, got {kind!r}"
                )
            coords = shape.get("coordinates")
            if not isinstance(coords, list) or len(coords) % 2 != 0 or not coords:
                raise AnnotationError("coordinates must be a nonempty flat [x, y, ...] list")
            if kind == "box" and len(coords) != 4:
                raise AnnotationError("box coordinates must be [left, top, right, bottom]")
            if kind == "point" and len(coords) != 2:
                raise AnnotationError("point coordinates must be [x, y]")
            if kind == "polygon" and len(coords) < 6:
                raise AnnotationError("polygon needs at least three vertices")
            for value in coords:
                if not isinstance(value, (int, float)) or not (0 <= value <= size):
                    raise AnnotationError(
                        f"coordinate {value!r} outside image bounds [0, {size}]"
                    )
        author = body.get("author")
        if not isinstance(author, str) or not author:
            raise AnnotationError("author must be a nonempty string")
        if "label" in body and body["label"] is not None and not isinstance(body["label"], str):
            raise AnnotationError("label must be a string when present")
        created = body.get("created_at")
        if created is not None and not isinstance(created, str):
            raise AnnotationError("created_at must be an ISO timestamp string")
        return body

    def store_annotation(self, body: dict) -> dict:
        body = self.validate_annotation(body)
        path = self._annotation_path(body["image_id"])
        existing = json.loads(path.read_text(encoding="utf-8")) if path.exists() else []
        existing.append(body)
        path.write_text(json.dumps(existing, indent=1), encoding="utf-8")
        return {"stored": len(existing), "image_id": body["image_id"]}

    def annotations_for(self, image_id: str) -> list[dict]:
        path = self._annotation_path(image_id)
        if not path.exists():
            raise UnknownImageError(image_id)
        return json.loads(path.read_text(encoding="utf-8"))

    # -- stats ----------------------------------------------------------------

    def stats(self) -> dict:
        index = self._index
        return {
            "count": index.count,
            "dim": index.dim,
            "label_histogram": index.label_histogram(),
            "index_version": self._index_version,
        }


def _parse_bbox(raw: str | None) -> BBox | None:
    if raw is None or raw == "":
        return None
    parts = raw.split(",")
    if len(parts) != 4:
        raise ValueError("bbox must be 'left,top,right,bottom'")
    left, top, right, bottom = (int(p.strip()) for p in parts)
    return BBox(left, top, right, bottom)


def create_app(config: ServiceConfig):
    """Build the FastAPI application around a fresh engine."""
    from fastapi import FastAPI, File, Form, HTTPException, Request, UploadFile
    from fastapi.responses import FileResponse, JSONResponse, Response

    engine = RetrievalEngine(config)
    app = FastAPI(title="lesionsearch", version="0.1.0")
    app.state.engine = engine

    if config.cors_allow:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_allow),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.middleware("http")
    async def limit_upload_size(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > config.max_upload_bytes:
            return JSONResponse(status_code=413, content={"detail": "payload too large"})
        return await call_next(request)

    def _decode_upload(data: bytes) -> ImageGrid:
        try:
            return imagecore.decode_image(data)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/api/v1/health")
    def health():
        return {"status": "ok"}

    @app.get("/api/v1/index/stats")
    def stats():
        return engine.stats()

    @app.post("/api/v1/ingest")
    async def ingest(
        manifest: UploadFile = File(...), images: list[UploadFile] = File(default=[])
    ):
        text = (await manifest.read()).decode("utf-8")
        try:
            parsed = imagecore.parse_manifest(io.StringIO(text))
        except imagecore.RowError as exc:
            raise HTTPException(
                status_code=400, detail={"line": exc.line, "error": str(exc)}
            ) from exc
        except imagecore.ManifestError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        payload = {}
        for upload in images:
            payload[upload.filename] = await upload.read()
        try:
            return engine.ingest(parsed, payload)
        except IngestError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/api/v1/query")
    async def run_query(
        image: UploadFile = File(...),
        bbox: str | None = Form(default=None),
        k: int | None = Form(default=None),
        setting: str = Form(default="all_patients"),
        patient_id: str | None = Form(default=None),
    ):
        grid = _decode_upload(await image.read())
        try:
            box = _parse_bbox(bbox)
            results = engine.query_image(
                grid, bbox=box, k=k, setting=setting, patient_id=patient_id
            )
        except EmptyPoolError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return results

    @app.post("/api/v1/filter-preview")
    async def filter_preview(
        image: UploadFile = File(...),
        band: int | None = Form(default=None),
        band_count: int = Form(default=4),
        alpha: float = Form(default=1.0),
        beta: float = Form(default=0.6),
        gamma: float = Form(default=0.0444),
        scales: str | None = Form(default=None),
    ):
        grid = _decode_upload(await image.read())
        try:
            params = FrangiParams(
                alpha=alpha,
                beta=beta,
                gamma=gamma,
                scales=parse_scale_spec(scales) if scales else FrangiParams().scales,
            )
            plane, info = engine.filter_preview(grid, params, band, band_count)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        buf = io.BytesIO()
        from PIL import Image as PILImage

        PILImage.fromarray(np.round(np.clip(plane, 0, 1) * 65535).astype(np.uint16)).save(
            buf, format="PNG"
        )
        return Response(
            content=buf.getvalue(),
            media_type="image/png",
            headers={"X-Filter-Info": json.dumps(info)},
        )

    @app.post("/api/v1/annotations")
    async def post_annotation(request: Request):
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            raise HTTPException(status_code=400, detail="body must be JSON") from exc
        try:
            return engine.store_annotation(body)
        except UnknownImageError as exc:
            raise HTTPException(status_code=404, detail=f"unknown image_id {exc.args[0]!r}")
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/api/v1/annotations/{image_id}")
    def get_annotations(image_id: str):
        try:
            return engine.annotations_for(image_id)
        except UnknownImageError:
            raise HTTPException(status_code=404, detail=f"unknown image_id {image_id!r}")

    @app.get("/thumbnails/{name}")
    def thumbnail(name: str):
        path = engine.data_dir / "thumbnails" / name
        if not path.exists() or not path.name.endswith(".png"):
            raise HTTPException(status_code=404, detail="unknown thumbnail")
        return FileResponse(path, media_type="image/png")

    if config.static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


def parse_scale_spec(spec: str) -> tuple[float, ...]:
    """'a:b:step' sweeps, or a comma-separated list of sigmas."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError("scale sweep must be 'start:stop:step'")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError("scale sweep needs stop >= start and step > 0")
        count = int(round((stop - start) / step)) + 1
        return tuple(float(s) for s in np.linspace(start, start + step * (count - 1), count))
    return tuple(float(p) for p in spec.split(","))


def serve(config: ServiceConfig) -> None:
    """Run the service with uvicorn (blocking)."""
    import uvicorn

    host, _, port = config.listen.partition(":")
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port or 8000))
