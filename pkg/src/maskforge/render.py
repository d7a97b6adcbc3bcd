"""Rendering: warp a mask template onto a face, match its color to the scene,
feather its edges, and composite.

All outputs are full-frame RGBA layers, so overlaying later needs no geometry.
Every function is a deterministic pure transformation; quantization always
rounds half away from zero so results are bit-stable across platforms.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np
import scipy.ndimage

from .geometry import (
    DegenerateGeometryError,
    LandmarkConvention,
    LandmarkSet,
    Polygon,
    ShapeMismatchError,
    delaunay,
    fit_affine,
    fit_similarity,
    points_in_polygon,
    rasterize_polygon,
)
from .maskkit import MaskTemplate

STRATEGY_PIECEWISE = "piecewise_affine"
STRATEGY_GLOBAL = "global_affine"


class PlacementError(ValueError):
    """Landmarks give the warp nowhere inside the frame to place the mask."""


class EmptyRegionError(ValueError):
    """A color-statistics region rasterized to zero pixels."""


@dataclass(frozen=True)
class LayerMeta:
    template_id: str
    hsv_signature: str
    strategy: str
    source_image_id: str


@dataclass(frozen=True)
class MaskLayer:
    """Full-frame RGBA raster, transparent except for the warped mask."""

    raster: np.ndarray  # (H, W, 4) uint8
    meta: LayerMeta

    def __post_init__(self):
        r = np.asarray(self.raster)
        if r.ndim != 3 or r.shape[2] != 4 or r.dtype != np.uint8:
            raise ValueError("mask layer raster must be uint8 RGBA")
        object.__setattr__(self, "raster", r)

    @property
    def alpha(self) -> np.ndarray:
        return self.raster[:, :, 3]

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.raster.shape[:2]
        return (w, h)


@dataclass(frozen=True)
class ColorStats:
    """Per-channel mean and standard deviation in Y'CbCr, [0, 1] scale."""

    mean: np.ndarray  # (3,)
    std: np.ndarray  # (3,)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (3,) or std.shape != (3,):
            raise ValueError("color stats must have 3 channels")
        if np.any(std < 0):
            raise ValueError("standard deviations must be >= 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and clamp to the uint8 range."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


# BT.601 luma plus offset chroma; affine and exactly invertible in float.
def rgb_to_ycc(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 0.5 + (b - y) / 1.772
    cr = 0.5 + (r - y) / 1.402
    return np.stack([y, cb, cr], axis=-1)


def ycc_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    r = y + (cr - 0.5) * 1.402
    b = y + (cb - 0.5) * 1.772
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return np.stack([r, g, b], axis=-1)


def _premultiply(raster: np.ndarray) -> np.ndarray:
    out = raster.astype(np.float64)
    out[:, :, :3] *= out[:, :, 3:] / 255.0
    return out


def _sample_bilinear(premul: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of a premultiplied RGBA raster at continuous coords.

    Coordinates use pixel-center convention (pixel (i, j) sits at
    (j + 0.5, i + 0.5)); locations outside the raster read as transparent.
    """
    h, w = premul.shape[:2]
    u = xs - 0.5
    v = ys - 0.5
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    fx = u - x0
    fy = v - y0

    out = np.zeros((len(xs), 4), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h) & (weight > 0)
            if np.any(valid):
                out[valid] += weight[valid, None] * premul[yi[valid], xi[valid]]
    return out


def _unpremultiply_u8(premul: np.ndarray) -> np.ndarray:
    alpha = premul[..., 3]
    rgb = np.zeros_like(premul[..., :3])
    # Pixels whose alpha quantizes to 0 stay fully clear; otherwise float-eps
    # sampling weights leave phantom RGB under transparent pixels.
    nz = alpha >= 0.5
    rgb[nz] = premul[nz, :3] * (255.0 / alpha[nz, None])
    out = np.concatenate([rgb, np.where(nz, alpha, 0.0)[..., None]], axis=-1)
    return quantize_u8(out)


def _affine_rows(points: np.ndarray) -> np.ndarray:
    return np.column_stack([points, np.ones(len(points))])


@functools.lru_cache(maxsize=256)
def _cached_mesh(point_key: tuple[float, ...]):
    # Triangulation depends only on template-side points; reuse across images.
    return delaunay(np.array(point_key, dtype=np.float64).reshape(-1, 2))


def warp_mask(
    template: MaskTemplate, lm: LandmarkSet, frame: tuple[int, int]
) -> MaskLayer:
    """Piecewise-affine warp of a template onto P68 landmarks.

    The anchor points are triangulated together with the template corners
    (corners placed by the global anchor fit, so the raster outside the anchor
    hull deforms smoothly); each triangle maps by its own affine and RGBA is
    sampled with premultiplied bilinear interpolation. Anchor points land on
    their target landmarks exactly, up to float error.
    """
    if lm.convention is not LandmarkConvention.P68:
        raise ValueError("piecewise warp requires P68 landmarks")
    w, h = frame
    if not _any_point_in_frame(lm.points, frame):
        raise PlacementError(f"{lm.image_id}: landmarks entirely outside frame")

    src_anchors = template.anchor_points
    dst_anchors = lm.points[list(template.anchor_indices)]
    global_fit = fit_affine(src_anchors, dst_anchors)

    tw, th = template.size
    corners = np.array([[0.0, 0.0], [tw, 0.0], [tw, th], [0.0, th]])
    src_pts = np.vstack([src_anchors, corners])
    dst_pts = np.vstack([dst_anchors, global_fit.apply(corners)])

    mesh = _cached_mesh(tuple(src_pts.ravel()))
    premul = _premultiply(template.raster)
    out = np.zeros((h, w, 4), dtype=np.float64)
    claimed = np.zeros((h, w), dtype=bool)

    for tri in mesh.triangles:
        d = dst_pts[tri]
        s = src_pts[tri]
        if abs(_tri_area(d)) < 1e-9:
            continue
        x_lo = max(0, int(np.floor(d[:, 0].min())) - 1)
        x_hi = min(w, int(np.ceil(d[:, 0].max())) + 1)
        y_lo = max(0, int(np.floor(d[:, 1].min())) - 1)
        y_hi = min(h, int(np.ceil(d[:, 1].max())) + 1)
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        px = np.arange(x_lo, x_hi, dtype=np.float64)[None, :] + 0.5
        py = np.arange(y_lo, y_hi, dtype=np.float64)[:, None] + 0.5
        inside = points_in_polygon(d, px, py)
        inside &= ~claimed[y_lo:y_hi, x_lo:x_hi]
        if not np.any(inside):
            continue
        rows, cols = np.nonzero(inside)
        centers_x = cols + x_lo + 0.5
        centers_y = rows + y_lo + 0.5
        to_src = np.linalg.solve(_affine_rows(d), s)  # (3, 2): [x y 1] @ to_src
        src_xy = _affine_rows(np.column_stack([centers_x, centers_y])) @ to_src
        out[rows + y_lo, cols + x_lo] = _sample_bilinear(premul, src_xy[:, 0], src_xy[:, 1])
        claimed[y_lo:y_hi, x_lo:x_hi] |= inside

    raster = np.zeros((h, w, 4), dtype=np.uint8)
    touched_rows = np.flatnonzero(claimed.any(axis=1))
    if touched_rows.size:
        touched_cols = np.flatnonzero(claimed.any(axis=0))
        r0, r1 = touched_rows[0], touched_rows[-1] + 1
        c0, c1 = touched_cols[0], touched_cols[-1] + 1
        raster[r0:r1, c0:c1] = _unpremultiply_u8(out[r0:r1, c0:c1])
    meta = LayerMeta(template.template_id, "identity", STRATEGY_PIECEWISE, lm.image_id)
    return MaskLayer(raster, meta)


def warp_mask_global(
    template: MaskTemplate, lm: LandmarkSet, frame: tuple[int, int]
) -> MaskLayer:
    """Single least-squares affine placement (the simpler fallback path).

    P68 landmarks use the full anchor map; P5 landmarks use the template's
    3-point sub-anchors (eyes midpoint, nose, mouth midpoint).
    """
    if lm.convention is LandmarkConvention.P68:
        src = template.anchor_points
        dst = lm.points[list(template.anchor_indices)]
        transform = fit_affine(src, dst)
    else:
        if template.p5_anchors is None:
            raise DegenerateGeometryError(
                f"{template.template_id}: no p5_anchors, cannot place on P5 landmarks"
            )
        src = template.p5_anchors
        pts = lm.points
        dst = np.array(
            [
                0.5 * (pts[0] + pts[1]),  # eyes midpoint
                pts[2],  # nose
                0.5 * (pts[3] + pts[4]),  # mouth midpoint
            ]
        )
        # The designated triple is collinear on symmetric faces; a similarity
        # stays well-posed there while an exact affine is used when possible.
        try:
            transform = fit_affine(src, dst)
        except DegenerateGeometryError:
            transform = fit_similarity(src, dst)

    w, h = frame
    tw, th = template.size
    corners = np.array([[0.0, 0.0], [tw, 0.0], [tw, th], [0.0, th]])
    mapped = transform.apply(corners)
    x_lo = max(0, int(np.floor(mapped[:, 0].min())) - 1)
    x_hi = min(w, int(np.ceil(mapped[:, 0].max())) + 1)
    y_lo = max(0, int(np.floor(mapped[:, 1].min())) - 1)
    y_hi = min(h, int(np.ceil(mapped[:, 1].max())) + 1)

    raster = np.zeros((h, w, 4), dtype=np.uint8)
    if x_lo < x_hi and y_lo < y_hi:
        inverse = transform.inverse()
        px, py = np.meshgrid(
            np.arange(x_lo, x_hi, dtype=np.float64) + 0.5,
            np.arange(y_lo, y_hi, dtype=np.float64) + 0.5,
        )
        src_xy = inverse.apply(np.column_stack([px.ravel(), py.ravel()]))
        sampled = _sample_bilinear(
            _premultiply(template.raster), src_xy[:, 0], src_xy[:, 1]
        )
        slab = sampled.reshape(y_hi - y_lo, x_hi - x_lo, 4)
        raster[y_lo:y_hi, x_lo:x_hi] = _unpremultiply_u8(slab)

    meta = LayerMeta(template.template_id, "identity", STRATEGY_GLOBAL, lm.image_id)
    return MaskLayer(raster, meta)


def _tri_area(tri: np.ndarray) -> float:
    u = tri[1] - tri[0]
    v = tri[2] - tri[0]
    return 0.5 * float(u[0] * v[1] - u[1] * v[0])


def _any_point_in_frame(points: np.ndarray, frame: tuple[int, int]) -> bool:
    w, h = frame
    return bool(
        np.any(
            (points[:, 0] >= 0) & (points[:, 0] < w) & (points[:, 1] >= 0) & (points[:, 1] < h)
        )
    )


def pixel_color_stats(pixels: np.ndarray) -> ColorStats:
    """Mean/std of a flat (N, 3) uint8 RGB pixel array in Y'CbCr."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.shape[1] != 3 or len(pixels) == 0:
        raise EmptyRegionError("need a nonempty (N, 3) pixel array")
    ycc = rgb_to_ycc(pixels.astype(np.float64) / 255.0)
    return ColorStats(ycc.mean(axis=0), ycc.std(axis=0))


def face_color_stats(image: np.ndarray, region: Polygon) -> ColorStats:
    """Mean/std of the region's pixels in Y'CbCr."""
    h, w = image.shape[:2]
    mask = rasterize_polygon(region, (w, h))
    if not np.any(mask):
        raise EmptyRegionError("color reference region rasterized to zero pixels")
    return pixel_color_stats(image[mask])


def mask_color_stats(layer: MaskLayer) -> ColorStats:
    visible = layer.alpha > 0
    if not np.any(visible):
        raise EmptyRegionError("mask layer has no visible pixels")
    return pixel_color_stats(layer.raster[visible][:, :3])


def color_match(layer: MaskLayer, target: ColorStats, strength: float = 0.5) -> MaskLayer:
    """Mean/std transfer of the mask pixels toward the target color statistics.

    strength 0 is the identity; strength 1 moves the mask statistics fully
    onto the target. Channels with zero mask deviation transfer the mean only.
    Alpha is untouched.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError("strength must be in [0, 1]")
    visible = layer.alpha > 0
    if not np.any(visible):
        return layer

    ycc = rgb_to_ycc(layer.raster[visible][:, :3].astype(np.float64) / 255.0)
    mean = ycc.mean(axis=0)
    std = ycc.std(axis=0)
    scale = np.where(std > 0, target.std / np.where(std > 0, std, 1.0), 1.0)
    transferred = target.mean + (ycc - mean) * scale
    blended = (1.0 - strength) * ycc + strength * transferred
    rgb = np.clip(ycc_to_rgb(blended), 0.0, 1.0) * 255.0

    raster = layer.raster.copy()
    rgba = raster[visible]
    rgba[:, :3] = quantize_u8(rgb)
    raster[visible] = rgba
    return replace(layer, raster=raster)


def feather_alpha(layer: MaskLayer, radius_px: float) -> MaskLayer:
    """Low-pass the alpha channel to soften jagged mask edges.

    Gaussian smoothing with sigma = radius; alpha never leaks farther than
    2 * radius (Euclidean) from the original footprint and RGB is untouched.
    """
    if radius_px < 0:
        raise ValueError("feather radius must be >= 0")
    if radius_px == 0:
        return layer
    alpha = layer.alpha.astype(np.float64)
    blurred = scipy.ndimage.gaussian_filter(alpha, sigma=radius_px, mode="constant", truncate=2.0)
    # Separable blur has square support; clamp to the Euclidean dilation.
    distance = scipy.ndimage.distance_transform_edt(layer.alpha == 0)
    blurred[distance > 2.0 * radius_px] = 0.0
    raster = layer.raster.copy()
    raster[:, :, 3] = quantize_u8(blurred)
    return replace(layer, raster=raster)


def composite(background: np.ndarray, layer: MaskLayer) -> np.ndarray:
    """Alpha-over the layer onto an RGB background; bit-exact deterministic."""
    bg = np.asarray(background)
    if bg.ndim != 3 or bg.shape[2] != 3:
        raise ShapeMismatchError("background must be an RGB image")
    if bg.shape[:2] != layer.raster.shape[:2]:
        raise ShapeMismatchError(
            f"background {bg.shape[:2]} != layer {layer.raster.shape[:2]}"
        )
    a = layer.raster[:, :, 3:].astype(np.float64) / 255.0
    out = a * layer.raster[:, :, :3].astype(np.float64) + (1.0 - a) * bg.astype(np.float64)
    return quantize_u8(out)
