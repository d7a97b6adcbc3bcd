import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from maskforge.geometry import (
    AffineTransform,
    DegenerateGeometryError,
    FormatError,
    LandmarkConvention,
    LandmarkSet,
    ParseError,
    Polygon,
    ShapeMismatchError,
    delaunay,
    fit_affine,
    fit_similarity,
    inter_ocular_distance,
    mask_region_polygon,
    parse_landmarks,
    points_in_polygon,
    polygon_iou,
    raster_footprint_iou,
    rasterize_polygon,
)
from maskforge.synthfaces import canonical_landmarks


def dlib68_record(image_id="img_0", w=178, h=218):
    pts = canonical_landmarks() * 50.0 + [89.0, 100.0]
    return {
        "image_id": image_id,
        "width": w,
        "height": h,
        "points": [[float(x), float(y)] for x, y in pts],
    }


# ---------------------------------------------------------------- parsing

def test_parse_dlib68_roundtrip():
    text = json.dumps([dlib68_record("a"), dlib68_record("b")])
    out = parse_landmarks(text, "dlib68_json")
    assert [lm.image_id for lm in out] == ["a", "b"]
    assert out[0].convention is LandmarkConvention.P68
    assert out[0].points.shape == (68, 2)
    assert out[0].image_size == (178, 218)


def test_parse_dlib68_empty_stream():
    assert parse_landmarks("", "dlib68_json") == []
    assert parse_landmarks("  \n ", "dlib68_json") == []


def test_parse_dlib68_invalid_json():
    with pytest.raises(ParseError):
        parse_landmarks("{not json", "dlib68_json")


def test_parse_dlib68_wrong_point_count():
    rec = dlib68_record()
    rec["points"] = rec["points"][:10]
    with pytest.raises(FormatError, match="record 0"):
        parse_landmarks(json.dumps([rec]), "dlib68_json")


CELEBA_SAMPLE = """\
2
lefteye_x lefteye_y righteye_x righteye_y nose_x nose_y leftmouth_x leftmouth_y rightmouth_x rightmouth_y
000001.jpg 69 109 106 113 77 142 73 152 108 154
000002.jpg 69 110 107 112 81 135 70 151 108 153
"""


def test_parse_celeba5_rows():
    out = parse_landmarks(CELEBA_SAMPLE, "celeba5_txt")
    assert [lm.image_id for lm in out] == ["000001.jpg", "000002.jpg"]
    assert out[0].convention is LandmarkConvention.P5
    assert out[0].points[0].tolist() == [69.0, 109.0]
    assert out[0].points[4].tolist() == [108.0, 154.0]


def test_parse_celeba5_malformed_row_names_line():
    bad = CELEBA_SAMPLE + "000003.jpg 1 2 3\n"
    with pytest.raises(ParseError, match="line 5"):
        parse_landmarks(bad, "celeba5_txt")


def test_parse_unknown_format():
    with pytest.raises(ValueError, match="unknown landmark format"):
        parse_landmarks("", "bogus")


def test_landmark_set_validation():
    with pytest.raises(FormatError):
        LandmarkSet("x", LandmarkConvention.P68, np.zeros((5, 2)), (10, 10))
    pts = np.zeros((5, 2))
    pts[0, 0] = np.nan
    with pytest.raises(FormatError):
        LandmarkSet("x", LandmarkConvention.P5, pts, (10, 10))


# ---------------------------------------------------------------- polygons

def test_polygon_area_and_transforms():
    square = Polygon(np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]]))
    assert square.area == pytest.approx(16.0)
    assert square.translated(2, 3).vertices[0].tolist() == [2.0, 3.0]
    grown = square.scaled_about_centroid(2.0)
    assert grown.area == pytest.approx(64.0)
    assert grown.vertices.mean(axis=0) == pytest.approx(square.vertices.mean(axis=0))


def test_polygon_rejects_degenerate():
    with pytest.raises(DegenerateGeometryError):
        Polygon(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))
    with pytest.raises(ValueError):
        Polygon(np.array([[0.0, 0.0], [1.0, 1.0]]))


# ------------------------------------------------------------ mask region

def test_mask_region_p68_shape_and_contents(frontal_face):
    _, lm = frontal_face
    region = mask_region_polygon(lm)
    assert len(region.vertices) == 14
    assert region.vertices[0] == pytest.approx(lm.points[28])
    # nose tip and every mouth landmark sit inside the region
    targets = lm.points[[33] + list(range(48, 68))]
    inside = points_in_polygon(region.vertices, targets[:, 0], targets[:, 1])
    assert inside.all()


def test_mask_region_p5_quadrilateral(p5_landmarks):
    region = mask_region_polygon(p5_landmarks)
    v = region.vertices
    assert v.shape == (4, 2)
    top_center = 0.5 * (v[0] + v[1])
    assert top_center == pytest.approx([60.0, 60.0])
    assert np.linalg.norm(v[1] - v[0]) / 2 == pytest.approx(36.0)
    assert v[2][1] == pytest.approx(102.0)
    assert v[3][1] == pytest.approx(102.0)


def test_mask_region_p5_degenerate_eyes():
    pts = np.array([[50.0, 50.0], [50.0, 50.0], [60.0, 70.0], [48.0, 90.0], [72.0, 90.0]])
    lm = LandmarkSet("bad", LandmarkConvention.P5, pts, (100, 100))
    with pytest.raises(DegenerateGeometryError):
        mask_region_polygon(lm)


# ---------------------------------------------------------------- affine

def test_fit_affine_recovers_exact_transform():
    src = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    matrix = np.array([[1.2, -0.3, 4.0], [0.5, 0.9, -2.0]])
    dst = src @ matrix[:, :2].T + matrix[:, 2]
    fitted = fit_affine(src, dst)
    assert fitted.coeffs == pytest.approx(matrix, abs=1e-9)
    assert fitted.apply(src) == pytest.approx(dst, abs=1e-9)


def test_fit_affine_collinear_raises():
    src = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(DegenerateGeometryError):
        fit_affine(src, src)


def test_fit_similarity_recovers_scale_rotation_translation():
    theta = np.deg2rad(25.0)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    src = np.array([[0.0, 0.0], [10.0, 0.0], [3.0, 8.0]])
    dst = src @ (1.7 * rot).T + np.array([5.0, -2.0])
    fitted = fit_similarity(src, dst)
    assert fitted.apply(src) == pytest.approx(dst, abs=1e-9)
    linear = fitted.coeffs[:, :2]
    assert np.linalg.det(linear) == pytest.approx(1.7**2, abs=1e-9)


def test_fit_similarity_handles_collinear_points():
    src = np.array([[0.0, 0.0], [0.0, 5.0], [0.0, 10.0]])
    dst = np.array([[2.0, 1.0], [2.0, 11.0], [2.0, 21.0]])  # scale 2, shifted
    fitted = fit_similarity(src, dst)
    assert fitted.apply(src) == pytest.approx(dst, abs=1e-9)


def test_fit_similarity_coincident_source_raises():
    src = np.zeros((3, 2))
    dst = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DegenerateGeometryError):
        fit_similarity(src, dst)


def test_affine_inverse_roundtrip():
    t = AffineTransform(np.array([[0.8, 0.1, 3.0], [-0.2, 1.1, -1.0]]))
    pts = np.array([[1.0, 2.0], [-4.0, 7.0], [0.3, 0.4]])
    assert t.inverse().apply(t.apply(pts)) == pytest.approx(pts, abs=1e-9)


def test_affine_singular_rejected():
    with pytest.raises(DegenerateGeometryError):
        AffineTransform(np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]))


# --------------------------------------------------------------- delaunay

def test_delaunay_partitions_square():
    square = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]])
    mesh = delaunay(square)
    assert len(mesh.triangles) == 2
    areas = [Polygon(mesh.vertices[tri]).area for tri in mesh.triangles]
    assert sum(areas) == pytest.approx(100.0)


def test_delaunay_collinear_raises():
    line = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(DegenerateGeometryError):
        delaunay(line)


def test_triangle_raster_partition_is_exact():
    """Pixel centers inside a triangulated square are claimed exactly once."""
    square = np.array([[0.0, 0.0], [20.0, 0.0], [20.0, 20.0], [0.0, 20.0]])
    mesh = delaunay(square)
    px = np.arange(20, dtype=float)[None, :] + 0.5
    py = np.arange(20, dtype=float)[:, None] + 0.5
    counts = np.zeros((20, 20), dtype=int)
    for tri in mesh.triangles:
        counts += points_in_polygon(mesh.vertices[tri], px, py).astype(int)
    assert counts.max() == 1
    whole = points_in_polygon(square, px, py)
    assert np.array_equal(counts > 0, whole)


# ------------------------------------------------------------ rasterize/IoU

def test_rasterize_square_pixel_centers():
    poly = Polygon(np.array([[0.2, 0.2], [3.2, 0.2], [3.2, 2.2], [0.2, 2.2]]))
    mask = rasterize_polygon(poly, (6, 5))
    assert mask.sum() == 6  # centers x in {0.5,1.5,2.5}, y in {0.5,1.5}
    assert mask[:2, :3].all()


def test_polygon_iou_basics():
    a = Polygon(np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0], [0.0, 10.0]]))
    b = a.translated(5, 0)
    assert polygon_iou(a, a, (20, 20)) == pytest.approx(1.0)
    assert polygon_iou(a, a.translated(50, 50), (20, 20)) == 0.0
    assert polygon_iou(a, b, (20, 20)) == pytest.approx(1.0 / 3.0)


def test_polygon_iou_against_fine_oracle():
    rng = np.random.default_rng(42)
    frame = (60, 60)
    for _ in range(10):
        center = rng.uniform(15, 45, size=2)
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=7))
        radii = rng.uniform(5, 14, size=7)
        va = center + np.column_stack([np.cos(angles), np.sin(angles)]) * radii[:, None]
        vb = va * 0.8 + rng.uniform(-4, 4, size=2)
        got = polygon_iou(Polygon(va), Polygon(vb), frame)
        want = oracles.polygon_iou_fine(va, vb, frame, factor=10)
        assert got == pytest.approx(want, abs=0.02)


def test_raster_footprint_iou_exact_match():
    region = Polygon(np.array([[2.0, 2.0], [12.0, 2.0], [12.0, 9.0], [2.0, 9.0]]))
    alpha = np.zeros((12, 16), dtype=np.uint8)
    alpha[rasterize_polygon(region, (16, 12))] = 255
    assert raster_footprint_iou(alpha, region, (16, 12)) == pytest.approx(1.0)


def test_raster_footprint_iou_alpha_cut():
    region = Polygon(np.array([[0.0, 0.0], [8.0, 0.0], [8.0, 8.0], [0.0, 8.0]]))
    alpha = np.full((8, 8), 7, dtype=np.uint8)  # all below the default cut
    assert raster_footprint_iou(alpha, region, (8, 8), alpha_cut=8) == 0.0
    assert raster_footprint_iou(alpha, region, (8, 8), alpha_cut=7) == 0.0
    assert raster_footprint_iou(alpha, region, (8, 8), alpha_cut=6) == pytest.approx(1.0)


def test_raster_footprint_iou_shape_mismatch():
    region = Polygon(np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0]]))
    with pytest.raises(ShapeMismatchError):
        raster_footprint_iou(np.zeros((5, 5), dtype=np.uint8), region, (10, 10))


@settings(max_examples=40, deadline=None)
@given(
    cx=st.floats(10, 30),
    cy=st.floats(10, 30),
    r=st.floats(2, 9),
    n=st.integers(3, 9),
    dx=st.floats(-6, 6),
    dy=st.floats(-6, 6),
)
def test_iou_symmetric_bounded(cx, cy, r, n, dx, dy):
    angles = 2 * np.pi * np.arange(n) / n
    va = np.column_stack([cx + r * np.cos(angles), cy + r * np.sin(angles)])
    a = Polygon(va)
    b = a.translated(dx, dy)
    ab = polygon_iou(a, b, (40, 40))
    ba = polygon_iou(b, a, (40, 40))
    assert ab == ba
    assert 0.0 <= ab <= 1.0
    assert polygon_iou(a, a, (40, 40)) == pytest.approx(1.0)


# ------------------------------------------------------------- inter-ocular

def test_inter_ocular_distance_p68():
    pts = canonical_landmarks() * 50.0 + [89.0, 100.0]
    lm = LandmarkSet("c", LandmarkConvention.P68, pts, (178, 218))
    assert inter_ocular_distance(lm) == pytest.approx(0.9 * 50.0)


def test_inter_ocular_distance_p5(p5_landmarks):
    assert inter_ocular_distance(p5_landmarks) == pytest.approx(40.0)
