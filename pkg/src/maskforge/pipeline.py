"""Batch enhancement: iterate a corpus manifest, place masks behind an IoU
quality gate with a global-affine fallback, persist RGBA layers, and report
coverage statistics.

Layout written under out_dir:
    layers/<image_id>.mask.png   full-frame RGBA layer per successful entry
    records.ndjson               one placement record per manifest entry
    report.json                  aggregate counts and rates

Runs are deterministic for a given (manifest, registry, seed) regardless of
worker count: per-entry randomness is keyed by the image id, and all files are
written in manifest order by a single writer.
"""

from __future__ import annotations

import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    DegenerateGeometryError,
    FormatError,
    LandmarkConvention,
    LandmarkSet,
    ParseError,
    Polygon,
    inter_ocular_distance,
    mask_region_polygon,
    parse_landmarks,
    raster_footprint_iou,
    rasterize_polygon,
)
from .maskkit import MaskRegistry, pick_mask, stable_u64
from .render import (
    LayerMeta,
    MaskLayer,
    PlacementError,
    color_match,
    composite,
    feather_alpha,
    pixel_color_stats,
    warp_mask,
    warp_mask_global,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "test", "none")
FAILURE_REASONS = (
    "no_landmarks",
    "degenerate_geometry",
    "iou_below_threshold",
    "wrong_face_suspected",
    "mask_partial",
    "io_error",
)

# Coverage observed on the public corpora this tooling models, kept as
# annotations for context; synthetic runs are not expected to match them.
REFERENCE_RATES = {
    "celeba_like": {"iou_threshold": 0.3, "coverage": 0.968, "fallback_share": 0.054},
    "casia_like": {"iou_threshold": 0.5, "coverage": 0.90, "fallback_share": 0.115},
}


class PipelineError(RuntimeError):
    """Run-level failure (bad manifest, unwritable output directory)."""


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: str
    landmark_ref: str
    identity_label: str | None = None
    split: str = "none"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    root: str = "."

    def __post_init__(self):
        entries = tuple(self.entries)
        ids = [e.image_id for e in entries]
        if len(set(ids)) != len(ids):
            raise PipelineError("manifest image_ids must be unique")
        object.__setattr__(self, "entries", entries)

    def resolve(self, ref: str) -> Path:
        path = Path(ref)
        return path if path.is_absolute() else Path(self.root) / path

    def save(self, path: str | Path) -> None:
        payload = {
            "entries": [
                {k: v for k, v in vars(e).items() if v is not None} for e in self.entries
            ]
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        path = Path(path)
        with open(path) as fh:
            payload = json.load(fh)
        entries = tuple(ManifestEntry(**raw) for raw in payload["entries"])
        return cls(entries=entries, root=str(path.parent))


@dataclass(frozen=True)
class QaConfig:
    iou_threshold: float
    alpha_cut: int = 8
    allow_fallback: bool = True

    def __post_init__(self):
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must be in [0, 1]")
        if not 0 <= self.alpha_cut <= 255:
            raise ValueError("alpha_cut must be a uint8 value")


@dataclass(frozen=True)
class PlacementRecord:
    image_id: str
    status: str  # ok | ok_fallback | failed
    strategy: str | None
    iou: float
    failure_reason: str | None = None
    layer_path: str | None = None

    def __post_init__(self):
        if self.status not in ("ok", "ok_fallback", "failed"):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "failed" and self.failure_reason not in FAILURE_REASONS:
            raise ValueError("failed records need a known failure_reason")

    def to_dict(self) -> dict:
        out = {"image_id": self.image_id, "status": self.status, "iou": self.iou}
        if self.strategy is not None:
            out["strategy"] = self.strategy
        if self.failure_reason is not None:
            out["failure_reason"] = self.failure_reason
        if self.layer_path is not None:
            out["layer_path"] = self.layer_path
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "PlacementRecord":
        return cls(
            image_id=raw["image_id"],
            status=raw["status"],
            strategy=raw.get("strategy"),
            iou=float(raw["iou"]),
            failure_reason=raw.get("failure_reason"),
            layer_path=raw.get("layer_path"),
        )


@dataclass(frozen=True)
class BatchReport:
    total: int
    generated: int
    fallback_count: int
    failed: int
    failure_histogram: dict[str, int] = field(default_factory=dict)
    seed: int | None = None
    config: dict | None = None

    def __post_init__(self):
        if self.generated + self.failed != self.total:
            raise ValueError("generated + failed must equal total")
        if self.fallback_count > self.generated:
            raise ValueError("fallback_count cannot exceed generated")

    @property
    def generated_rate(self) -> float:
        return self.generated / self.total if self.total else 0.0

    @property
    def fallback_rate(self) -> float:
        return self.fallback_count / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "generated": self.generated,
            "fallback_count": self.fallback_count,
            "failed": self.failed,
            "generated_rate": self.generated_rate,
            "fallback_rate": self.fallback_rate,
            "failure_histogram": dict(self.failure_histogram),
            "seed": self.seed,
            "config": self.config,
            "reference_rates": REFERENCE_RATES,
        }


def qa_report(
    records: list[PlacementRecord], seed: int | None = None, config: dict | None = None
) -> BatchReport:
    histogram = {reason: 0 for reason in FAILURE_REASONS}
    generated = fallback = failed = 0
    for rec in records:
        if rec.status == "failed":
            failed += 1
            histogram[rec.failure_reason] += 1
        else:
            generated += 1
            if rec.status == "ok_fallback":
                fallback += 1
    return BatchReport(
        total=len(records),
        generated=generated,
        fallback_count=fallback,
        failed=failed,
        failure_histogram=histogram,
        seed=seed,
        config=config,
    )


class _LandmarkResolver:
    """Parses each landmark file once; looks up records by image id."""

    def __init__(self, manifest: CorpusManifest):
        self._manifest = manifest
        self._cache: dict[Path, dict[str, list[LandmarkSet]]] = {}

    def lookup(self, entry: ManifestEntry) -> list[LandmarkSet]:
        path = self._manifest.resolve(entry.landmark_ref)
        if path not in self._cache:
            fmt = "celeba5_txt" if path.suffix == ".txt" else "dlib68_json"
            by_id: dict[str, list[LandmarkSet]] = {}
            with open(path, "rb") as fh:
                for lm in parse_landmarks(fh, fmt):
                    by_id.setdefault(lm.image_id, []).append(lm)
            self._cache[path] = by_id
        return self._cache[path].get(entry.image_id, [])


def _load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _encode_png(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(raster).save(buf, format="PNG")
    return buf.getvalue()


def _finish_layer(
    layer: MaskLayer,
    image: np.ndarray,
    region: Polygon,
    lm: LandmarkSet,
    alpha_cut: int,
    color_strength: float,
    feather_ratio: float,
) -> MaskLayer:
    h, w = image.shape[:2]
    context = rasterize_polygon(region.scaled_about_centroid(1.2), (w, h))
    context &= layer.alpha < alpha_cut
    if np.any(context):
        layer = color_match(layer, pixel_color_stats(image[context]), color_strength)
    radius = max(1.0, feather_ratio * inter_ocular_distance(lm))
    return feather_alpha(layer, radius)


def _region_exits_frame(region: Polygon, frame: tuple[int, int]) -> bool:
    w, h = frame
    xs, ys = region.vertices[:, 0], region.vertices[:, 1]
    return bool(xs.min() < 0 or ys.min() < 0 or xs.max() > w or ys.max() > h)


def _enhance_entry(
    entry: ManifestEntry,
    manifest: CorpusManifest,
    registry: MaskRegistry,
    qa: QaConfig,
    seed: int,
    resolver: _LandmarkResolver,
    color_strength: float,
    feather_ratio: float,
) -> tuple[PlacementRecord, bytes | None]:
    def failed(reason: str, iou: float = 0.0, strategy: str | None = None):
        return PlacementRecord(entry.image_id, "failed", strategy, iou, reason), None

    try:
        candidates = resolver.lookup(entry)
    except (OSError, ParseError, FormatError):
        return failed("no_landmarks")
    if not candidates:
        return failed("no_landmarks")
    if len(candidates) > 1:
        # More than one landmark set for the id: cannot tell which face to mask.
        return failed("wrong_face_suspected")
    lm = candidates[0]

    try:
        image = _load_rgb(manifest.resolve(entry.image_path))
    except OSError:
        return failed("io_error")
    frame = (image.shape[1], image.shape[0])

    template, shift = pick_mask(registry, seed, stable_u64(entry.image_id))
    template = registry.augmented(template, shift)

    try:
        region = mask_region_polygon(lm)
    except DegenerateGeometryError:
        return failed("degenerate_geometry")

    def attempt(warp_fn) -> tuple[MaskLayer, float]:
        layer = warp_fn(template, lm, frame)
        layer = replace(layer, meta=replace(layer.meta, hsv_signature=shift.signature))
        layer = _finish_layer(
            layer, image, region, lm, qa.alpha_cut, color_strength, feather_ratio
        )
        iou = raster_footprint_iou(layer.alpha, region, frame, qa.alpha_cut)
        return layer, iou

    piecewise_first = lm.convention is LandmarkConvention.P68
    status = "ok"
    try:
        layer, iou = attempt(warp_mask if piecewise_first else warp_mask_global)
    except PlacementError:
        return failed("mask_partial")
    except DegenerateGeometryError:
        if not (piecewise_first and qa.allow_fallback):
            return failed("degenerate_geometry")
        try:
            layer, iou = attempt(warp_mask_global)
            status = "ok_fallback"
        except (DegenerateGeometryError, PlacementError):
            return failed("degenerate_geometry")

    if iou < qa.iou_threshold and status == "ok" and piecewise_first and qa.allow_fallback:
        try:
            layer, iou = attempt(warp_mask_global)
            status = "ok_fallback"
        except (DegenerateGeometryError, PlacementError):
            pass

    if iou < qa.iou_threshold:
        reason = "mask_partial" if _region_exits_frame(region, frame) else "iou_below_threshold"
        return failed(reason, iou=iou, strategy=layer.meta.strategy)

    layer_rel = str(Path("layers") / f"{entry.image_id}.mask.png")
    record = PlacementRecord(
        entry.image_id, status, layer.meta.strategy, iou, layer_path=layer_rel
    )
    return record, _encode_png(layer.raster)


def enhance_corpus(
    manifest: CorpusManifest,
    registry: MaskRegistry,
    qa: QaConfig,
    seed: int,
    out_dir: str | Path,
    color_strength: float = 0.5,
    feather_ratio: float = 0.01,
    workers: int | None = None,
) -> BatchReport:
    out_dir = Path(out_dir)
    try:
        (out_dir / "layers").mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise PipelineError(f"output directory not writable: {out_dir}") from exc

    resolver = _LandmarkResolver(manifest)
    # Warm the landmark cache serially so workers only read it.
    for entry in manifest.entries:
        try:
            resolver.lookup(entry)
        except (OSError, ParseError, FormatError):
            pass

    def work(entry: ManifestEntry):
        try:
            return _enhance_entry(
                entry, manifest, registry, qa, seed, resolver, color_strength, feather_ratio
            )
        except OSError:
            return (
                PlacementRecord(entry.image_id, "failed", None, 0.0, "io_error"),
                None,
            )

    n_workers = workers or min(4, os.cpu_count() or 1)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, manifest.entries))
    else:
        results = [work(entry) for entry in manifest.entries]

    records = []
    with open(out_dir / "records.ndjson", "w") as fh:
        for record, png in results:
            if png is not None:
                (out_dir / record.layer_path).write_bytes(png)
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            records.append(record)

    report = qa_report(
        records,
        seed=seed,
        config={
            "iou_threshold": qa.iou_threshold,
            "alpha_cut": qa.alpha_cut,
            "allow_fallback": qa.allow_fallback,
            "color_strength": color_strength,
            "feather_ratio": feather_ratio,
        },
    )
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
    return report


def load_records(path: str | Path) -> list[PlacementRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(PlacementRecord.from_dict(json.loads(line)))
    return records


def load_layer(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        raster = np.asarray(img.convert("RGBA"))
    return raster


def overlay_corpus(
    manifest: CorpusManifest, layers_dir: str | Path, out_dir: str | Path
) -> int:
    """Composite each entry's stored layer over its source image."""
    layers_dir = Path(layers_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    done = 0
    for entry in manifest.entries:
        layer_path = layers_dir / f"{entry.image_id}.mask.png"
        if not layer_path.exists():
            logger.warning("no layer for %s, skipping", entry.image_id)
            continue
        image = _load_rgb(manifest.resolve(entry.image_path))
        raster = load_layer(layer_path)
        if raster.shape[:2] != image.shape[:2]:
            logger.warning("layer size mismatch for %s, skipping", entry.image_id)
            continue
        meta = LayerMeta("stored", "identity", "piecewise_affine", entry.image_id)
        out = composite(image, MaskLayer(raster, meta))
        Image.fromarray(out).save(out_dir / f"{entry.image_id}.png")
        done += 1
    return done
