"""Exact-math kernel: landmark parsing, mask-region polygons, affine fits,
Delaunay meshes, and rasterized IoU.

Everything here is a pure function of its inputs; no state is shared, so all
operations are safe to call concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.spatial


class ParseError(ValueError):
    """Byte stream does not conform to the declared landmark format."""


class FormatError(ValueError):
    """Record is syntactically readable but violates the format contract."""


class DegenerateGeometryError(ValueError):
    """Input geometry has no usable solution (collinear, coincident, ...)."""


class ShapeMismatchError(ValueError):
    """Raster dimensions do not match the declared frame."""


class LandmarkConvention(Enum):
    P68 = 68
    P5 = 5


# P5 point order follows the CelebA landmark files.
P5_LEFT_EYE, P5_RIGHT_EYE, P5_NOSE, P5_LEFT_MOUTH, P5_RIGHT_MOUTH = range(5)

# P68 indices (iBUG ordering, 0-based) used for the coverage polygon.
JAW_REGION_INDICES = tuple(range(2, 15))
NOSE_BRIDGE_INDEX = 28


@dataclass(frozen=True)
class LandmarkSet:
    """Facial keypoints for one image, in sub-pixel image coordinates.

    Points may lie outside the image bounds (profile faces); they must be
    finite and their count must match the convention.
    """

    image_id: str
    convention: LandmarkConvention
    points: np.ndarray  # (N, 2) float64
    image_size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise FormatError(f"{self.image_id}: points must be (N, 2), got {pts.shape}")
        if pts.shape[0] != self.convention.value:
            raise FormatError(
                f"{self.image_id}: expected {self.convention.value} points, got {pts.shape[0]}"
            )
        if not np.all(np.isfinite(pts)):
            raise FormatError(f"{self.image_id}: non-finite landmark coordinates")


@dataclass(frozen=True)
class Polygon:
    """Closed planar polygon; vertices in contour order, implicitly closed."""

    vertices: np.ndarray  # (N, 2) float64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DegenerateGeometryError("polygon needs >= 3 (x, y) vertices")
        deduped = _dedupe_consecutive(v)
        if len(deduped) < 3 or abs(_signed_area(deduped)) == 0.0:
            raise DegenerateGeometryError("polygon has zero signed area")

    @property
    def area(self) -> float:
        return abs(_signed_area(_dedupe_consecutive(self.vertices)))

    def translated(self, tx: float, ty: float) -> "Polygon":
        return Polygon(self.vertices + np.array([tx, ty]))

    def scaled_about_centroid(self, factor: float) -> "Polygon":
        c = self.vertices.mean(axis=0)
        return Polygon(c + (self.vertices - c) * factor)


@dataclass(frozen=True)
class AffineTransform:
    """Planar affine map y = A x + t, stored as a 2x3 coefficient matrix."""

    coeffs: np.ndarray  # (2, 3) float64

    def __post_init__(self):
        m = np.asarray(self.coeffs, dtype=np.float64)
        object.__setattr__(self, "coeffs", m)
        if m.shape != (2, 3):
            raise ValueError(f"affine coefficients must be (2, 3), got {m.shape}")
        if abs(np.linalg.det(m[:, :2])) < 1e-12:
            raise DegenerateGeometryError("affine linear part is singular")

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.coeffs[:, :2].T + self.coeffs[:, 2]

    def inverse(self) -> "AffineTransform":
        a = self.coeffs[:, :2]
        t = self.coeffs[:, 2]
        a_inv = np.linalg.inv(a)
        return AffineTransform(np.column_stack([a_inv, -a_inv @ t]))

    @staticmethod
    def identity() -> "AffineTransform":
        return AffineTransform(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))


@dataclass(frozen=True)
class TriangleMesh:
    """Triangulated point set: vertices plus index triples, all non-degenerate."""

    vertices: np.ndarray  # (N, 2) float64
    triangles: np.ndarray  # (M, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.intp)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")


def _dedupe_consecutive(vertices: np.ndarray) -> np.ndarray:
    keep = [0]
    for i in range(1, len(vertices)):
        if not np.array_equal(vertices[i], vertices[keep[-1]]):
            keep.append(i)
    if len(keep) > 1 and np.array_equal(vertices[keep[-1]], vertices[keep[0]]):
        keep.pop()
    return vertices[keep]


def _signed_area(vertices: np.ndarray) -> float:
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def parse_landmarks(source, fmt: str) -> list[LandmarkSet]:
    """Parse a landmark byte stream.

    ``fmt`` is ``"dlib68_json"`` (array of ``{image_id, width, height, points}``
    records) or ``"celeba5_txt"`` (header lines, then one whitespace-separated
    row per image: filename followed by 10 integers).
    """
    text = _read_text(source)
    if fmt == "dlib68_json":
        return _parse_dlib68_json(text)
    if fmt == "celeba5_txt":
        return _parse_celeba5_txt(text)
    raise ValueError(f"unknown landmark format: {fmt!r}")


def _read_text(source) -> str:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        return source.decode("utf-8")
    return str(source)


def _parse_dlib68_json(text: str) -> list[LandmarkSet]:
    if not text.strip():
        return []
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON landmark stream: {exc}") from exc
    if not isinstance(records, list):
        raise ParseError("dlib68_json stream must be an array of records")
    out = []
    for i, rec in enumerate(records):
        try:
            image_id = str(rec["image_id"])
            size = (int(rec["width"]), int(rec["height"]))
            points = np.asarray(rec["points"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"record {i}: malformed dlib68_json record ({exc})") from exc
        try:
            out.append(LandmarkSet(image_id, LandmarkConvention.P68, points, size))
        except FormatError as exc:
            raise FormatError(f"record {i}: {exc}") from exc
    return out


_CELEBA5_FIELDS = 11  # filename + 10 coordinates


def _parse_celeba5_txt(text: str) -> list[LandmarkSet]:
    out = []
    seen_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        is_row = len(tokens) == _CELEBA5_FIELDS and _all_numeric(tokens[1:])
        if not is_row:
            if seen_data:
                raise ParseError(f"line {lineno}: malformed celeba5_txt row: {raw!r}")
            continue  # count line / column header
        seen_data = True
        coords = np.array([float(t) for t in tokens[1:]], dtype=np.float64).reshape(5, 2)
        # CelebA ships no per-row image size; infer a frame just containing the
        # points (callers that know the real size can replace it).
        size = (int(coords[:, 0].max()) + 1, int(coords[:, 1].max()) + 1)
        out.append(LandmarkSet(tokens[0], LandmarkConvention.P5, coords, size))
    return out


def _all_numeric(tokens: Sequence[str]) -> bool:
    try:
        for t in tokens:
            float(t)
    except ValueError:
        return False
    return True


def mask_region_polygon(lm: LandmarkSet) -> Polygon:
    """Polygon that should roughly coincide with the region a mask covers.

    P68: the jaw contour (indices 2..14) closed through the nose-bridge
    landmark 28. P5: a heuristic quadrilateral built from the five keypoints.
    """
    if lm.convention is LandmarkConvention.P68:
        idx = [NOSE_BRIDGE_INDEX, *JAW_REGION_INDICES]
        return Polygon(lm.points[idx])
    return _p5_quadrilateral(lm.points)


def _p5_quadrilateral(pts: np.ndarray) -> Polygon:
    eye_l = pts[P5_LEFT_EYE]
    eye_r = pts[P5_RIGHT_EYE]
    nose = pts[P5_NOSE]
    mouth_mid = 0.5 * (pts[P5_LEFT_MOUTH] + pts[P5_RIGHT_MOUTH])

    inter_ocular = float(np.linalg.norm(eye_r - eye_l))
    if inter_ocular < 1e-9:
        raise DegenerateGeometryError("coincident eye points")
    lateral = (eye_r - eye_l) / inter_ocular

    eye_mid = 0.5 * (eye_l + eye_r)
    up = eye_mid - nose
    up_norm = float(np.linalg.norm(up))
    if up_norm < 1e-9:
        raise DegenerateGeometryError("nose coincides with eye midpoint")
    up = up / up_norm
    down = -up

    top_center = nose + 0.25 * inter_ocular * up
    drop = float(np.dot(mouth_mid - top_center, down)) + 0.6 * float(
        np.dot(mouth_mid - nose, down)
    )
    bottom_center = top_center + drop * down

    half_w = 0.9 * inter_ocular
    return Polygon(
        np.array(
            [
                top_center - half_w * lateral,
                top_center + half_w * lateral,
                bottom_center + half_w * lateral,
                bottom_center - half_w * lateral,
            ]
        )
    )


def fit_affine(src, dst) -> AffineTransform:
    """Least-squares affine mapping src points onto dst points.

    Exact with 3 non-collinear pairs; raises on rank-deficient (collinear) src.
    """
    s = np.asarray(src, dtype=np.float64)
    d = np.asarray(dst, dtype=np.float64)
    if s.shape != d.shape or s.ndim != 2 or s.shape[1] != 2:
        raise ValueError("src and dst must both be (N, 2) with equal N")
    if len(s) < 3:
        raise ValueError("affine fitting needs >= 3 point pairs")
    design = np.column_stack([s, np.ones(len(s))])
    if np.linalg.matrix_rank(design, tol=1e-9) < 3:
        raise DegenerateGeometryError("source points are collinear")
    sol, *_ = np.linalg.lstsq(design, d, rcond=None)
    return AffineTransform(sol.T)


def fit_similarity(src, dst) -> AffineTransform:
    """Least-squares similarity (uniform scale, rotation, translation).

    Well-posed even for collinear point sets, which a full affine fit is not;
    raises when the source points coincide or the best scale is not positive.
    """
    s = np.asarray(src, dtype=np.float64)
    d = np.asarray(dst, dtype=np.float64)
    if s.shape != d.shape or s.ndim != 2 or s.shape[1] != 2:
        raise ValueError("src and dst must both be (N, 2) with equal N")
    if len(s) < 2:
        raise ValueError("similarity fitting needs >= 2 point pairs")
    mu_s = s.mean(axis=0)
    mu_d = d.mean(axis=0)
    sc = s - mu_s
    dc = d - mu_d
    var_s = float(np.mean(np.sum(sc**2, axis=1)))
    if var_s < 1e-18:
        raise DegenerateGeometryError("source points coincide")
    cov = dc.T @ sc / len(s)
    u, sing, vt = np.linalg.svd(cov)
    flip = np.sign(np.linalg.det(u @ vt))
    diag = np.array([1.0, flip if flip != 0 else 1.0])
    rot = u @ np.diag(diag) @ vt
    scale = float(np.sum(sing * diag)) / var_s
    if scale <= 1e-12:
        raise DegenerateGeometryError("similarity fit collapses to zero scale")
    linear = scale * rot
    translation = mu_d - linear @ mu_s
    return AffineTransform(np.column_stack([linear, translation]))


def delaunay(points) -> TriangleMesh:
    """Delaunay triangulation of a planar point set (>= 3, not all collinear)."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise DegenerateGeometryError("triangulation needs >= 3 points")
    try:
        tri = scipy.spatial.Delaunay(pts)
    except scipy.spatial.QhullError as exc:
        raise DegenerateGeometryError(f"degenerate point set: {exc}") from exc
    simplices = tri.simplices
    areas = _triangle_areas(pts, simplices)
    return TriangleMesh(pts, simplices[areas > 1e-12])


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    u = b - a
    v = c - a
    return 0.5 * np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])


def points_in_polygon(vertices: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Even-odd ray-casting test, vectorized over query points.

    The half-open crossing rule assigns a point lying exactly on a shared edge
    of a planar subdivision to exactly one side, which keeps adjacent-triangle
    rasterization gap-free.
    """
    v = np.asarray(vertices, dtype=np.float64)
    inside = np.zeros(np.broadcast_shapes(np.shape(px), np.shape(py)), dtype=bool)
    n = len(v)
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        x_int = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < x_int)
    return inside


def rasterize_polygon(poly: Polygon, frame: tuple[int, int]) -> np.ndarray:
    """Boolean (height, width) mask of pixels whose centers fall inside poly."""
    w, h = frame
    if w <= 0 or h <= 0:
        raise ValueError("frame dimensions must be positive")
    # Only pixels within the vertex bounding box can be inside.
    x_lo = max(0, int(np.floor(poly.vertices[:, 0].min())))
    x_hi = min(w, int(np.ceil(poly.vertices[:, 0].max())) + 1)
    y_lo = max(0, int(np.floor(poly.vertices[:, 1].min())))
    y_hi = min(h, int(np.ceil(poly.vertices[:, 1].max())) + 1)
    mask = np.zeros((h, w), dtype=bool)
    if x_lo >= x_hi or y_lo >= y_hi:
        return mask
    px = np.arange(x_lo, x_hi, dtype=np.float64)[None, :] + 0.5
    py = np.arange(y_lo, y_hi, dtype=np.float64)[:, None] + 0.5
    mask[y_lo:y_hi, x_lo:x_hi] = points_in_polygon(poly.vertices, px, py)
    return mask


def polygon_iou(a: Polygon, b: Polygon, frame: tuple[int, int]) -> float:
    """Intersection over union of two polygons, rasterized on the frame grid."""
    ra = rasterize_polygon(a, frame)
    rb = rasterize_polygon(b, frame)
    union = int(np.count_nonzero(ra | rb))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(ra & rb)) / union


def raster_footprint_iou(
    alpha: np.ndarray,
    region: Polygon,
    frame: tuple[int, int],
    alpha_cut: int = 8,
) -> float:
    """IoU between the raster footprint {alpha > alpha_cut} and a polygon."""
    w, h = frame
    alpha = np.asarray(alpha)
    if alpha.shape != (h, w):
        raise ShapeMismatchError(f"alpha raster {alpha.shape} != frame {(h, w)}")
    footprint = alpha > alpha_cut
    region_mask = rasterize_polygon(region, frame)
    union = int(np.count_nonzero(footprint | region_mask))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(footprint & region_mask)) / union


def inter_ocular_distance(lm: LandmarkSet) -> float:
    """Distance between the eye centers (P68: mean of each six-point ring)."""
    if lm.convention is LandmarkConvention.P5:
        return float(np.linalg.norm(lm.points[P5_RIGHT_EYE] - lm.points[P5_LEFT_EYE]))
    left = lm.points[36:42].mean(axis=0)
    right = lm.points[42:48].mean(axis=0)
    return float(np.linalg.norm(right - left))
