"""Mask template registry: sidecar loading, validation, HSV color augmentation
and the seeded template picker.

A registry is immutable once loaded and can be shared read-only across
threads.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

POSE_BUCKETS = ("frontal", "left", "right")

# Template-space correspondence targets for the 3-point P5 placement path.
P5_ANCHOR_NAMES = ("eyes_mid", "nose", "mouth_mid")


class RegistryError(ValueError):
    """Registry directory cannot be loaded or a template fails validation."""


@dataclass(frozen=True)
class HsvShift:
    """Hue rotation (degrees) plus saturation/value scale factors."""

    hue_delta: float = 0.0
    sat_scale: float = 1.0
    val_scale: float = 1.0

    def __post_init__(self):
        if not -180.0 <= self.hue_delta <= 180.0:
            raise ValueError(f"hue_delta {self.hue_delta} outside [-180, 180]")
        for name in ("sat_scale", "val_scale"):
            v = getattr(self, name)
            if not 0.0 < v <= 4.0:
                raise ValueError(f"{name} {v} outside (0, 4]")

    @property
    def is_identity(self) -> bool:
        return self.hue_delta == 0.0 and self.sat_scale == 1.0 and self.val_scale == 1.0

    @property
    def signature(self) -> str:
        if self.is_identity:
            return "identity"
        return f"h{self.hue_delta:+g}s{self.sat_scale:g}v{self.val_scale:g}"


IDENTITY_SHIFT = HsvShift()

# Default color augments: three visibly distinct hue rotations at unit scales.
DEFAULT_AUGMENTS = (
    HsvShift(hue_delta=60.0),
    HsvShift(hue_delta=150.0),
    HsvShift(hue_delta=-100.0),
)


@dataclass(frozen=True)
class Anchor:
    """One template-point-to-landmark correspondence."""

    point: tuple[float, float]
    landmark_index: int


@dataclass(frozen=True)
class MaskTemplate:
    template_id: str
    raster: np.ndarray  # (H, W, 4) uint8 RGBA
    anchors: tuple[Anchor, ...]
    pose_bucket: str = "frontal"
    fabric_tag: str = ""
    p5_anchors: np.ndarray | None = None  # (3, 2): eyes_mid, nose, mouth_mid

    def __post_init__(self):
        raster = np.asarray(self.raster)
        if raster.ndim != 3 or raster.shape[2] != 4 or raster.dtype != np.uint8:
            raise RegistryError(f"{self.template_id}: raster must be uint8 RGBA")
        object.__setattr__(self, "raster", raster)
        if len(self.anchors) < 6:
            raise RegistryError(f"{self.template_id}: needs >= 6 anchors, has {len(self.anchors)}")
        indices = [a.landmark_index for a in self.anchors]
        if len(set(indices)) != len(indices):
            raise RegistryError(f"{self.template_id}: duplicate anchor landmark indices")
        h, w = raster.shape[:2]
        for a in self.anchors:
            if not 0 <= a.landmark_index < 68:
                raise RegistryError(
                    f"{self.template_id}: landmark_index {a.landmark_index} outside P68 range"
                )
            x, y = a.point
            if not (0.0 <= x <= w and 0.0 <= y <= h):
                raise RegistryError(f"{self.template_id}: anchor point {a.point} outside raster")
        if self.pose_bucket not in POSE_BUCKETS:
            raise RegistryError(f"{self.template_id}: unknown pose_bucket {self.pose_bucket!r}")
        if not np.any(raster[:, :, 3] > 0):
            raise RegistryError(f"{self.template_id}: raster has no visible pixels")
        if self.p5_anchors is not None:
            p5 = np.asarray(self.p5_anchors, dtype=np.float64)
            if p5.shape != (3, 2):
                raise RegistryError(f"{self.template_id}: p5_anchors must be (3, 2)")
            object.__setattr__(self, "p5_anchors", p5)

    @property
    def anchor_points(self) -> np.ndarray:
        return np.array([a.point for a in self.anchors], dtype=np.float64)

    @property
    def anchor_indices(self) -> tuple[int, ...]:
        return tuple(a.landmark_index for a in self.anchors)

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.raster.shape[:2]
        return (w, h)


@dataclass(frozen=True)
class MaskRegistry:
    templates: tuple[MaskTemplate, ...]
    color_augments: tuple[HsvShift, ...] = DEFAULT_AUGMENTS

    def __post_init__(self):
        if not self.templates:
            raise RegistryError("registry needs at least one template")
        ids = [t.template_id for t in self.templates]
        if len(set(ids)) != len(ids):
            raise RegistryError("duplicate template ids in registry")
        object.__setattr__(self, "_augment_cache", {})

    def __len__(self) -> int:
        return len(self.templates)

    def augmented(self, template: "MaskTemplate", shift: HsvShift) -> "MaskTemplate":
        """apply_hsv with memoization; batch runs reuse few (template, shift)
        combinations, so recoloring each once is enough."""
        if shift.is_identity:
            return template
        key = (template.template_id, shift.signature)
        cached = self._augment_cache.get(key)
        if cached is None:
            cached = apply_hsv(template, shift)
            self._augment_cache[key] = cached
        return cached


def load_registry(root: str | Path) -> MaskRegistry:
    """Load every template raster + sidecar pair under ``root``.

    Each ``<name>.png`` must have a ``<name>.json`` sidecar describing the
    anchor map. An optional ``augments.json`` overrides the default HSV
    augment list.
    """
    root = Path(root)
    if not root.is_dir():
        raise RegistryError(f"registry root {root} is not a directory")
    templates = []
    for png in sorted(root.glob("*.png")):
        sidecar = png.with_suffix(".json")
        if not sidecar.exists():
            raise RegistryError(f"template {png.name}: missing sidecar {sidecar.name}")
        templates.append(_load_template(png, sidecar))
    if not templates:
        raise RegistryError(f"no templates found in {root}")

    augments = DEFAULT_AUGMENTS
    augments_file = root / "augments.json"
    if augments_file.exists():
        spec = json.loads(augments_file.read_text())
        augments = tuple(
            HsvShift(s.get("hue_delta", 0.0), s.get("sat_scale", 1.0), s.get("val_scale", 1.0))
            for s in spec
        )
    return MaskRegistry(tuple(templates), augments)


def _load_template(png: Path, sidecar: Path) -> MaskTemplate:
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise RegistryError(f"template {png.name}: unreadable sidecar ({exc})") from exc
    raster = np.asarray(Image.open(png).convert("RGBA"), dtype=np.uint8)
    anchors = tuple(
        Anchor((float(a["x"]), float(a["y"])), int(a["landmark_index"]))
        for a in meta.get("anchors", [])
    )
    p5 = meta.get("p5_anchors")
    p5_arr = None
    if p5 is not None:
        p5_arr = np.array([p5[name] for name in P5_ANCHOR_NAMES], dtype=np.float64)
    return MaskTemplate(
        template_id=str(meta.get("template_id", png.stem)),
        raster=raster,
        anchors=anchors,
        pose_bucket=str(meta.get("pose_bucket", "frontal")),
        fabric_tag=str(meta.get("fabric_tag", "")),
        p5_anchors=p5_arr,
    )


def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized RGB [0,1] -> (hue degrees [0,360), saturation, value)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)

    safe = np.where(delta > 0, delta, 1.0)
    h = np.zeros_like(maxc)
    h = np.where((maxc == r) & (delta > 0), ((g - b) / safe) % 6.0, h)
    h = np.where((maxc == g) & (delta > 0) & (maxc != r), (b - r) / safe + 2.0, h)
    h = np.where(
        (maxc == b) & (delta > 0) & (maxc != r) & (maxc != g), (r - g) / safe + 4.0, h
    )
    return h * 60.0, s, v


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`; hue in degrees, output RGB in [0,1]."""
    h6 = (np.asarray(h, dtype=np.float64) % 360.0) / 60.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))

    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def apply_hsv(template: MaskTemplate, shift: HsvShift) -> MaskTemplate:
    """Shift hue / scale saturation and value of the RGB channels.

    The alpha plane is carried over bit-identically; the returned template id
    is suffixed with the shift signature.
    """
    rgb = template.raster[:, :, :3].astype(np.float64) / 255.0
    h, s, v = rgb_to_hsv(rgb)
    h = (h + shift.hue_delta) % 360.0
    s = np.clip(s * shift.sat_scale, 0.0, 1.0)
    v = np.clip(v * shift.val_scale, 0.0, 1.0)
    out_rgb = np.clip(hsv_to_rgb(h, s, v), 0.0, 1.0)
    raster = template.raster.copy()
    raster[:, :, :3] = np.floor(out_rgb * 255.0 + 0.5).astype(np.uint8)
    return replace(
        template,
        template_id=f"{template.template_id}@{shift.signature}",
        raster=raster,
    )


def stable_u64(*parts) -> int:
    """Deterministic 64-bit hash of a tuple of ints/strings (never salted)."""
    digest = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, int):
            digest.update(b"i" + struct.pack("<Q", part & 0xFFFFFFFFFFFFFFFF))
        else:
            raw = str(part).encode("utf-8")
            digest.update(b"s" + struct.pack("<I", len(raw)) + raw)
    return struct.unpack("<Q", digest.digest())[0]


def pick_mask(
    registry: MaskRegistry, rng_seed: int, image_index: int
) -> tuple[MaskTemplate, HsvShift]:
    """Deterministic uniform choice over templates x (identity + augments)."""
    shifts = (IDENTITY_SHIFT, *registry.color_augments)
    n_combos = len(registry.templates) * len(shifts)
    k = stable_u64(rng_seed, image_index) % n_combos
    template = registry.templates[k // len(shifts)]
    return template, shifts[k % len(shifts)]
