"""Procedural face corpus for exercising the placement pipeline.

Generates painted portrait images together with exact 68-point landmarks, so
placement quality is limited only by the warp itself. Layouts are parametric:
in-plane roll, a yaw proxy (horizontal foreshortening), and a size sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import LandmarkConvention, LandmarkSet, Polygon, rasterize_polygon
from .maskkit import stable_u64
from .pipeline import CorpusManifest, ManifestEntry

DEFAULT_FRAME = (178, 218)
SCALES = (45.0, 55.0, 65.0)

# Canonical face in a unit-ish frame: x right, y down, origin between the
# eyes' level and the nose; jaw half-width 1, chin depth 1.3.
_JAW_A = 1.0
_JAW_B = 1.3


def canonical_landmarks() -> np.ndarray:
    pts = np.zeros((68, 2), dtype=np.float64)

    theta = np.deg2rad(180.0 + 11.25 * np.arange(17))
    pts[0:17, 0] = _JAW_A * np.cos(theta)
    pts[0:17, 1] = -_JAW_B * np.sin(theta)

    brow_y = -0.55 * _JAW_B + _JAW_B * np.array([0.02, -0.02, -0.04, -0.02, 0.02])
    pts[17:22, 0] = np.linspace(-0.72, -0.20, 5)
    pts[17:22, 1] = brow_y
    pts[22:27, 0] = np.linspace(0.20, 0.72, 5)
    pts[22:27, 1] = brow_y[::-1]

    pts[27:31, 0] = 0.0
    pts[27:31, 1] = _JAW_B * np.array([-0.30, -0.12, 0.06, 0.22])

    pts[31:36, 0] = np.array([-0.16, -0.08, 0.0, 0.08, 0.16])
    pts[31:36, 1] = _JAW_B * np.array([0.30, 0.32, 0.33, 0.32, 0.30])

    eye_rx, eye_ry = 0.18, 0.06 * _JAW_B
    hexagon = np.array(
        [
            [-eye_rx, 0.0],
            [-0.5 * eye_rx, -eye_ry],
            [0.5 * eye_rx, -eye_ry],
            [eye_rx, 0.0],
            [0.5 * eye_rx, eye_ry],
            [-0.5 * eye_rx, eye_ry],
        ]
    )
    pts[36:42] = hexagon + [-0.45, -0.28 * _JAW_B]
    pts[42:48] = hexagon + [0.45, -0.28 * _JAW_B]

    mouth_c = np.array([0.0, 0.60 * _JAW_B])
    outer = np.deg2rad(180.0 - 30.0 * np.arange(12))
    pts[48:60, 0] = mouth_c[0] + 0.36 * np.cos(outer)
    pts[48:60, 1] = mouth_c[1] - 0.10 * _JAW_B * np.sin(outer)
    inner = np.deg2rad(180.0 - 45.0 * np.arange(8))
    pts[60:68, 0] = mouth_c[0] + 0.22 * np.cos(inner)
    pts[60:68, 1] = mouth_c[1] - 0.04 * _JAW_B * np.sin(inner)

    return pts


@dataclass(frozen=True)
class FaceParams:
    roll_deg: float
    yaw: float  # foreshortening proxy in [-0.3, 0.3]
    scale: float  # canonical unit -> pixels
    center: tuple[float, float]
    skin: tuple[int, int, int]
    lip: tuple[int, int, int]
    iris: tuple[int, int, int]
    background: tuple[tuple[int, int, int], tuple[int, int, int]]


def transform_points(points: np.ndarray, params: FaceParams) -> np.ndarray:
    """Canonical coordinates -> pixel coordinates for one face."""
    pts = np.asarray(points, dtype=np.float64).copy()
    pts[:, 0] = pts[:, 0] * (1.0 - 0.35 * params.yaw * pts[:, 0] / _JAW_A)
    rho = np.deg2rad(params.roll_deg)
    rot = np.array([[np.cos(rho), -np.sin(rho)], [np.sin(rho), np.cos(rho)]])
    pts = pts @ rot.T
    return pts * params.scale + np.asarray(params.center)


def face_landmarks(params: FaceParams, image_id: str, frame: tuple[int, int]) -> LandmarkSet:
    return LandmarkSet(
        image_id=image_id,
        convention=LandmarkConvention.P68,
        points=transform_points(canonical_landmarks(), params),
        image_size=frame,
    )


def _forehead_arc() -> np.ndarray:
    phi = np.deg2rad(np.arange(170.0, 9.0, -10.0))
    return np.column_stack([np.cos(phi), -np.sin(phi)])


def _fill(img: np.ndarray, canonical_poly: np.ndarray, params: FaceParams, color) -> None:
    h, w = img.shape[:2]
    poly = Polygon(transform_points(canonical_poly, params))
    img[rasterize_polygon(poly, (w, h))] = color


def paint_face(params: FaceParams, frame: tuple[int, int] = DEFAULT_FRAME) -> np.ndarray:
    w, h = frame
    top = np.asarray(params.background[0], dtype=np.float64)
    bottom = np.asarray(params.background[1], dtype=np.float64)
    t = np.linspace(0.0, 1.0, h)[:, None]
    img = np.floor(top + (bottom - top) * t + 0.5).astype(np.uint8)
    img = np.repeat(img[:, None, :], w, axis=1)

    lm = canonical_landmarks()
    outline = np.vstack([lm[0:17], _forehead_arc()[::-1]])
    _fill(img, outline, params, params.skin)

    shade = tuple(int(c * 0.92) for c in params.skin)
    nose_w = 0.04
    nose = np.array(
        [
            [-nose_w, lm[27, 1]],
            [nose_w, lm[27, 1]],
            [2.4 * nose_w, lm[33, 1]],
            [-2.4 * nose_w, lm[33, 1]],
        ]
    )
    _fill(img, nose, params, shade)

    brow_color = (74, 48, 34)
    off = np.array([0.0, 0.025 * _JAW_B])
    _fill(img, np.vstack([lm[17:22] - off, lm[21:16:-1] + off]), params, brow_color)
    _fill(img, np.vstack([lm[22:27] - off, lm[26:21:-1] + off]), params, brow_color)

    for sl in (slice(36, 42), slice(42, 48)):
        _fill(img, lm[sl], params, (246, 243, 238))
    circle = np.deg2rad(np.arange(0.0, 360.0, 36.0))
    iris = 0.06 * np.column_stack([np.cos(circle), np.sin(circle)])
    _fill(img, iris + [-0.45, -0.28 * _JAW_B], params, params.iris)
    _fill(img, iris + [0.45, -0.28 * _JAW_B], params, params.iris)

    _fill(img, lm[48:60], params, params.lip)
    _fill(img, lm[60:68], params, tuple(int(c * 0.55) for c in params.lip))
    return img


def sample_params(rng: np.random.Generator, index: int, frame: tuple[int, int]) -> FaceParams:
    w, h = frame
    jitter = lambda base, spread: tuple(
        int(np.clip(base[k] + rng.integers(-spread, spread + 1), 0, 255)) for k in range(3)
    )
    return FaceParams(
        roll_deg=float(rng.uniform(-30.0, 30.0)),
        yaw=float(rng.uniform(-0.3, 0.3)),
        scale=SCALES[index % len(SCALES)],
        center=(w / 2.0 + float(rng.uniform(-6, 6)), h * 0.47 + float(rng.uniform(-6, 6))),
        skin=jitter((209, 163, 127), 25),
        lip=jitter((172, 62, 74), 20),
        iris=jitter((70, 48, 36), 18),
        background=(jitter((120, 132, 148), 30), jitter((78, 86, 99), 30)),
    )


def make_corpus(
    out_dir: str | Path,
    count: int,
    seed: int,
    frame: tuple[int, int] = DEFAULT_FRAME,
) -> CorpusManifest:
    """Write images, exact landmarks, and a manifest; returns the manifest.

    Fully deterministic: per-face RNG streams are keyed by (seed, index), so
    the corpus is byte-identical across runs and machines.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    w, h = frame

    landmark_records = []
    entries = []
    for i in range(count):
        rng = np.random.default_rng(stable_u64(seed, i))
        params = sample_params(rng, i, frame)
        image_id = f"synth_{i:05d}"
        points = transform_points(canonical_landmarks(), params)

        image_path = out_dir / "images" / f"{image_id}.png"
        Image.fromarray(paint_face(params, frame)).save(image_path)

        landmark_records.append(
            {
                "image_id": image_id,
                "width": w,
                "height": h,
                "points": [[float(x), float(y)] for x, y in points],
            }
        )
        entries.append(
            ManifestEntry(
                image_id=image_id,
                image_path=str(Path("images") / f"{image_id}.png"),
                landmark_ref="landmarks.json",
                identity_label=f"subject_{i:05d}",
                split="none",
            )
        )

    with open(out_dir / "landmarks.json", "w") as fh:
        json.dump(landmark_records, fh)

    manifest = CorpusManifest(entries=tuple(entries), root=str(out_dir))
    manifest.save(out_dir / "manifest.json")
    return manifest
