"""Face-verification evaluation: pair sampling, squared-L2 distances,
FAR-calibrated thresholds, and the 10-fold cross-validation protocol.

Accuracy here is pair-classification accuracy at the threshold calibrated to
the FAR target on the other nine folds; the validation rate at that threshold
is also reported. Distances are squared L2 throughout.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EMBED_MAGIC = b"MFEB"
EMBED_VERSION = 1
_ID_BYTES = 64


class InfeasibleError(ValueError):
    """The requested sampling cannot be satisfied by the data."""


class UndefinedRateError(ValueError):
    """A rate was requested over an empty pair population."""


class FoldPlanError(ValueError):
    """Fold assignment does not cover the pairs as required."""


@dataclass(frozen=True)
class EmbeddingTable:
    ids: tuple[str, ...]
    identities: tuple[str, ...]
    vectors: np.ndarray  # (N, dim) float64

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if not (len(self.ids) == len(self.identities) == len(vectors)):
            raise ValueError("ids, identities, vectors must align")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("image ids must be unique")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("vectors must be finite")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", {img: k for k, img in enumerate(self.ids)})

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row(self, image_id: str) -> int:
        try:
            return self._index[image_id]
        except KeyError:
            raise KeyError(f"unknown image id {image_id!r}") from None


@dataclass(frozen=True)
class Pair:
    id_a: str
    id_b: str
    same: bool

    def __post_init__(self):
        if self.id_a == self.id_b:
            raise ValueError("a pair cannot repeat one image")


@dataclass(frozen=True)
class PairSet:
    pairs: tuple[Pair, ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def same_mask(self) -> np.ndarray:
        return np.array([p.same for p in self.pairs], dtype=bool)

    def to_json(self, path: str | Path) -> None:
        payload = [{"id_a": p.id_a, "id_b": p.id_b, "same": p.same} for p in self.pairs]
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def from_json(cls, path: str | Path) -> "PairSet":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(tuple(Pair(p["id_a"], p["id_b"], bool(p["same"])) for p in payload))


@dataclass(frozen=True)
class FoldPlan:
    assignment: np.ndarray  # (n_pairs,) fold index per pair
    n_folds: int = 10

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.intp)
        if assignment.ndim != 1:
            raise FoldPlanError("assignment must be 1-D")
        if self.n_folds < 2:
            raise FoldPlanError("need at least 2 folds")
        if len(assignment) and (assignment.min() < 0 or assignment.max() >= self.n_folds):
            raise FoldPlanError("fold ids out of range")
        object.__setattr__(self, "assignment", assignment)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    threshold: float
    accuracy: float
    far_on_calibration: float
    val_rate: float


@dataclass(frozen=True)
class VerificationReport:
    folds: tuple[FoldResult, ...]
    mean_accuracy: float
    std_accuracy: float
    mean_val_rate: float
    std_val_rate: float
    far_target: float

    def __post_init__(self):
        for r in self.folds:
            if not 0.0 <= r.accuracy <= 1.0:
                raise ValueError("accuracies must be in [0, 1]")
        if self.std_accuracy < 0:
            raise ValueError("std must be >= 0")

    def headline(self) -> str:
        return format_percent_pm(self.mean_accuracy, self.std_accuracy)

    def to_dict(self) -> dict:
        return {
            "far_target": self.far_target,
            "folds": [vars(r) for r in self.folds],
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "mean_val_rate": self.mean_val_rate,
            "std_val_rate": self.std_val_rate,
            "accuracy_at_far": self.headline(),
            "val_rate_at_far": format_percent_pm(self.mean_val_rate, self.std_val_rate),
            "metadata": {"distance": "squared_l2", "std_kind": "population"},
        }


def format_percent_pm(mean: float, std: float) -> str:
    return f"{100.0 * mean:.2f}% ± {100.0 * std:.2f}%"


def generate_pairs(table: EmbeddingTable, pairs_per_class: int, seed: int) -> PairSet:
    """Seeded sample: up to pairs_per_class same-identity pairs per identity,
    matched by an equal number of different-identity pairs."""
    if pairs_per_class < 1:
        raise ValueError("pairs_per_class must be >= 1")
    by_identity: dict[str, list[str]] = {}
    for img, ident in zip(table.ids, table.identities):
        by_identity.setdefault(ident, []).append(img)
    identities = sorted(by_identity)
    if len(identities) < 2:
        raise InfeasibleError("need at least 2 identities")
    if not any(len(v) >= 2 for v in by_identity.values()):
        raise InfeasibleError("no identity has 2 or more images")

    rng = np.random.default_rng(seed)
    same: list[Pair] = []
    for ident in identities:
        imgs = sorted(by_identity[ident])
        if len(imgs) < 2:
            continue
        combos = [(i, j) for i in range(len(imgs)) for j in range(i + 1, len(imgs))]
        take = min(pairs_per_class, len(combos))
        for k in rng.permutation(len(combos))[:take]:
            i, j = combos[k]
            same.append(Pair(imgs[i], imgs[j], True))

    diff: list[Pair] = []
    seen: set[tuple[str, str]] = set()
    attempts = 0
    limit = 1000 * (len(same) + 1)
    while len(diff) < len(same):
        attempts += 1
        if attempts > limit:
            raise InfeasibleError(
                f"could not sample {len(same)} distinct different-identity pairs"
            )
        ia, ib = rng.choice(len(identities), size=2, replace=False)
        img_a = by_identity[identities[ia]][rng.integers(len(by_identity[identities[ia]]))]
        img_b = by_identity[identities[ib]][rng.integers(len(by_identity[identities[ib]]))]
        key = (img_a, img_b) if img_a < img_b else (img_b, img_a)
        if key in seen:
            continue
        seen.add(key)
        diff.append(Pair(img_a, img_b, False))

    return PairSet(tuple(same + diff))


def pair_distances(table: EmbeddingTable, pairs: PairSet) -> np.ndarray:
    """Squared L2 distance per pair, aligned with pair order."""
    idx_a = np.array([table.row(p.id_a) for p in pairs.pairs], dtype=np.intp)
    idx_b = np.array([table.row(p.id_b) for p in pairs.pairs], dtype=np.intp)
    delta = table.vectors[idx_a] - table.vectors[idx_b]
    return np.einsum("ij,ij->i", delta, delta)


def far_at(diff_distances: np.ndarray, d: float) -> float:
    diff_distances = np.asarray(diff_distances, dtype=np.float64)
    if diff_distances.size == 0:
        raise UndefinedRateError("FAR over an empty different-identity set")
    return float(np.count_nonzero(diff_distances <= d) / diff_distances.size)


def val_at(same_distances: np.ndarray, d: float) -> float:
    same_distances = np.asarray(same_distances, dtype=np.float64)
    if same_distances.size == 0:
        raise UndefinedRateError("VAL over an empty same-identity set")
    return float(np.count_nonzero(same_distances <= d) / same_distances.size)


def calibrate_threshold(diff_distances: np.ndarray, far_target: float) -> float:
    """Largest candidate threshold whose FAR stays at or under the target.

    Candidates are 0, the midpoints between consecutive sorted distances, and
    just past the maximum; FAR is a step function so these cover every
    achievable rate. If even 0 overshoots (zero-distance impostors), a value
    just below 0 is returned, which accepts nothing.
    """
    if not 0.0 <= far_target <= 1.0:
        raise ValueError("far_target must be in [0, 1]")
    ordered = np.sort(np.asarray(diff_distances, dtype=np.float64))
    if ordered.size == 0:
        raise UndefinedRateError("cannot calibrate on an empty different-identity set")
    candidates = np.concatenate(
        [[0.0], 0.5 * (ordered[1:] + ordered[:-1]), [np.nextafter(ordered[-1], np.inf)]]
    )
    candidates = np.unique(candidates)
    fars = np.searchsorted(ordered, candidates, side="right") / ordered.size
    feasible = np.nonzero(fars <= far_target)[0]
    if feasible.size == 0:
        return -1e-12 * (1.0 + float(ordered[-1]))
    return float(candidates[feasible[-1]])


def make_folds(pairs: PairSet, n_folds: int = 10, seed: int = 0) -> FoldPlan:
    """Seeded stratified assignment: each fold gets an equal share of same
    and of diff pairs, within one pair."""
    same_mask = pairs.same_mask
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(pairs), dtype=np.intp)
    start = 0
    for mask in (same_mask, ~same_mask):
        idx = np.nonzero(mask)[0]
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = (start + np.arange(len(idx))) % n_folds
        start += len(idx)
    return FoldPlan(assignment, n_folds)


def evaluate_from_distances(
    pairs: PairSet, distances: np.ndarray, folds: FoldPlan, far_target: float
) -> VerificationReport:
    distances = np.asarray(distances, dtype=np.float64)
    if len(distances) != len(pairs):
        raise ValueError("distances must align with pairs")
    if len(folds.assignment) != len(pairs):
        raise FoldPlanError("fold plan does not cover the pair set")
    counts = np.bincount(folds.assignment, minlength=folds.n_folds)
    if np.any(counts == 0):
        raise FoldPlanError(f"fold {int(np.argmin(counts))} holds no pairs")
    same_mask = pairs.same_mask

    results = []
    for f in range(folds.n_folds):
        held = folds.assignment == f
        calib = ~held
        calib_diff = distances[calib & ~same_mask]
        threshold = calibrate_threshold(calib_diff, far_target)
        accepted = distances[held] <= threshold
        accuracy = float(np.count_nonzero(accepted == same_mask[held]) / np.count_nonzero(held))
        held_same = distances[held & same_mask]
        val = float(np.count_nonzero(held_same <= threshold) / held_same.size) if held_same.size else 0.0
        results.append(
            FoldResult(
                fold=f,
                threshold=threshold,
                accuracy=accuracy,
                far_on_calibration=far_at(calib_diff, threshold),
                val_rate=val,
            )
        )

    accs = np.array([r.accuracy for r in results])
    vals = np.array([r.val_rate for r in results])
    return VerificationReport(
        folds=tuple(results),
        mean_accuracy=float(accs.mean()),
        std_accuracy=float(accs.std()),
        mean_val_rate=float(vals.mean()),
        std_val_rate=float(vals.std()),
        far_target=far_target,
    )


def evaluate(
    table: EmbeddingTable, pairs: PairSet, folds: FoldPlan, far_target: float
) -> VerificationReport:
    return evaluate_from_distances(pairs, pair_distances(table, pairs), folds, far_target)


def _fixed_field(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > _ID_BYTES:
        raise ValueError(f"field longer than {_ID_BYTES} bytes: {text!r}")
    return raw.ljust(_ID_BYTES, b"\x00")


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Binary layout: header {magic, version, dim, count}, then per row a
    64-byte id, a 64-byte identity, and dim little-endian float32 values."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHHI", EMBED_MAGIC, EMBED_VERSION, table.dim, len(table.ids)))
        vectors = table.vectors.astype("<f4")
        for k, (img, ident) in enumerate(zip(table.ids, table.identities)):
            fh.write(_fixed_field(img))
            fh.write(_fixed_field(ident))
            fh.write(vectors[k].tobytes())


def read_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_embeddings_csv(path)
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sHHI"))
        magic, version, dim, count = struct.unpack("<4sHHI", header)
        if magic != EMBED_MAGIC:
            raise ValueError(f"{path}: not an embedding file")
        if version != EMBED_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        ids, identities, rows = [], [], []
        record = 2 * _ID_BYTES + 4 * dim
        for k in range(count):
            raw = fh.read(record)
            if len(raw) != record:
                raise ValueError(f"{path}: truncated at record {k}")
            ids.append(raw[:_ID_BYTES].rstrip(b"\x00").decode("utf-8"))
            identities.append(raw[_ID_BYTES : 2 * _ID_BYTES].rstrip(b"\x00").decode("utf-8"))
            rows.append(np.frombuffer(raw, dtype="<f4", offset=2 * _ID_BYTES))
    return EmbeddingTable(tuple(ids), tuple(identities), np.array(rows, dtype=np.float64))


def _read_embeddings_csv(path: Path) -> EmbeddingTable:
    ids, identities, rows = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["id", "identity"]:
            raise ValueError(f"{path}: expected header id,identity,v0,...")
        for line in reader:
            if not line:
                continue
            ids.append(line[0])
            identities.append(line[1])
            rows.append([float(v) for v in line[2:]])
    return EmbeddingTable(tuple(ids), tuple(identities), np.array(rows, dtype=np.float64))
