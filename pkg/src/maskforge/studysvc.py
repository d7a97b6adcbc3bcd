"""Pairwise realism study backend: build a study manifest from two directories
of composited images, serve annotators over HTTP with blinded side assignment,
collect votes durably, and tally the results.

The vote store is an append-only NDJSON file; every tally is recomputed from
it. Which method appears on which side is a pure function of (study seed,
annotator, pair), so page refreshes never reshuffle a pair.
"""

from __future__ import annotations

import json
import mimetypes
import os
import threading
import time
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .maskkit import stable_u64

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class StudyError(ValueError):
    """Malformed study input (manifest, votes, or directories)."""


class IntegrityError(StudyError):
    """A vote references data outside the study."""


@dataclass(frozen=True)
class StudyPair:
    pair_id: str
    image_a_path: str
    image_b_path: str


@dataclass(frozen=True)
class StudyManifest:
    study_id: str
    method_a: str
    method_b: str
    pairs: tuple[StudyPair, ...]
    seed: int

    def __post_init__(self):
        pairs = tuple(self.pairs)
        ids = [p.pair_id for p in pairs]
        if len(set(ids)) != len(ids):
            raise StudyError("pair_ids must be unique")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "_by_id", {p.pair_id: p for p in pairs})

    @property
    def pairs_count(self) -> int:
        return len(self.pairs)

    def pair(self, pair_id: str) -> StudyPair:
        try:
            return self._by_id[pair_id]
        except KeyError:
            raise IntegrityError(f"unknown pair_id {pair_id!r}") from None

    def save(self, path: str | Path) -> None:
        payload = {
            "study_id": self.study_id,
            "method_a": self.method_a,
            "method_b": self.method_b,
            "seed": self.seed,
            "pairs": [vars(p) for p in self.pairs],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> "StudyManifest":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(
            study_id=payload["study_id"],
            method_a=payload["method_a"],
            method_b=payload["method_b"],
            pairs=tuple(StudyPair(**p) for p in payload["pairs"]),
            seed=int(payload["seed"]),
        )


@dataclass(frozen=True)
class VoteRecord:
    study_id: str
    annotator_id: str
    pair_id: str
    shown_left: str  # method label
    shown_right: str
    choice: str  # left | right
    resolved_method: str
    timestamp: float

    def __post_init__(self):
        if self.choice not in ("left", "right"):
            raise StudyError(f"choice must be left or right, got {self.choice!r}")
        expected = self.shown_left if self.choice == "left" else self.shown_right
        if self.resolved_method != expected:
            raise StudyError("resolved_method inconsistent with choice and sides")

    def to_dict(self) -> dict:
        return dict(vars(self))

    @classmethod
    def from_dict(cls, raw: dict) -> "VoteRecord":
        return cls(
            study_id=raw["study_id"],
            annotator_id=raw["annotator_id"],
            pair_id=raw["pair_id"],
            shown_left=raw["shown_left"],
            shown_right=raw["shown_right"],
            choice=raw["choice"],
            resolved_method=raw["resolved_method"],
            timestamp=float(raw["timestamp"]),
        )


@dataclass(frozen=True)
class TallyTable:
    method_a: str
    method_b: str
    per_annotator: dict[str, tuple[int, int]]  # annotator -> (votes_a, votes_b)
    overall_percent_a: float | None
    overall_percent_b: float | None

    @property
    def total_votes(self) -> int:
        return sum(a + b for a, b in self.per_annotator.values())

    def to_dict(self) -> dict:
        return {
            "method_a": self.method_a,
            "method_b": self.method_b,
            "per_annotator": {
                k: {"votes_a": a, "votes_b": b}
                for k, (a, b) in sorted(self.per_annotator.items())
            },
            "overall_percent_a": self.overall_percent_a,
            "overall_percent_b": self.overall_percent_b,
            "total_votes": self.total_votes,
        }


def method_a_on_left(seed: int, annotator_id: str, pair_id: str) -> bool:
    """Deterministic blinded side assignment, stable across requests."""
    return stable_u64("side", seed, annotator_id, pair_id) % 2 == 0


def _image_ids(directory: Path) -> dict[str, Path]:
    out: dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in IMAGE_SUFFIXES:
            out[path.stem] = path
    return out


def make_study(
    dir_a: str | Path,
    dir_b: str | Path,
    label_a: str,
    label_b: str,
    n: int,
    seed: int,
) -> StudyManifest:
    """Seeded sample of n image ids present in both directories."""
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    ids_a = _image_ids(dir_a)
    ids_b = _image_ids(dir_b)
    common = sorted(set(ids_a) & set(ids_b))
    if len(common) < n:
        raise StudyError(
            f"need {n} shared image ids, found {len(common)} "
            f"({len(ids_a)} in {dir_a}, {len(ids_b)} in {dir_b})"
        )
    rng = np.random.default_rng(seed)
    chosen = [common[k] for k in rng.choice(len(common), size=n, replace=False)]
    pairs = tuple(
        StudyPair(pair_id=i, image_a_path=str(ids_a[i]), image_b_path=str(ids_b[i]))
        for i in chosen
    )
    study_id = f"study-{stable_u64(label_a, label_b, seed, n):016x}"
    return StudyManifest(study_id, label_a, label_b, pairs, seed)


class VoteStore:
    """Append-only NDJSON vote log; appends are flushed and fsynced before
    the caller is acknowledged."""

    def __init__(self, path: str | Path, allow_revote: bool = False):
        self.path = Path(path)
        self.allow_revote = allow_revote
        self._lock = threading.Lock()
        self._answered: set[tuple[str, str]] = set()
        if self.path.exists():
            for record in load_votes(self.path):
                self._answered.add((record.annotator_id, record.pair_id))

    def answered(self, annotator_id: str) -> set[str]:
        with self._lock:
            return {p for (a, p) in self._answered if a == annotator_id}

    def append(self, record: VoteRecord) -> bool:
        """Durably store one vote; False means a duplicate was rejected."""
        key = (record.annotator_id, record.pair_id)
        with self._lock:
            if key in self._answered and not self.allow_revote:
                return False
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._answered.add(key)
            return True


def load_votes(path: str | Path) -> list[VoteRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(VoteRecord.from_dict(json.loads(line)))
    return records


def tally(votes: list[VoteRecord], manifest: StudyManifest) -> TallyTable:
    """Recount the store. Percentages are shares of all counted votes.

    Re-votes (possible only when the service ran with --allow-revote) are
    resolved last-write-wins per (annotator, pair); with the default
    no-revote store every record counts and order is irrelevant.
    """
    latest: dict[tuple[str, str], VoteRecord] = {}
    for vote in votes:
        if vote.study_id != manifest.study_id:
            raise IntegrityError(f"vote for foreign study {vote.study_id!r}")
        manifest.pair(vote.pair_id)
        if vote.resolved_method not in (manifest.method_a, manifest.method_b):
            raise IntegrityError(f"vote for unknown method {vote.resolved_method!r}")
        latest[(vote.annotator_id, vote.pair_id)] = vote

    per: dict[str, list[int]] = {}
    for (annotator, _), vote in latest.items():
        counts = per.setdefault(annotator, [0, 0])
        counts[0 if vote.resolved_method == manifest.method_a else 1] += 1

    for annotator, (a, b) in per.items():
        if a + b > manifest.pairs_count:
            raise IntegrityError(f"{annotator!r} voted more than pairs_count times")

    total_a = sum(a for a, _ in per.values())
    total = sum(a + b for a, b in per.values())
    if total == 0:
        return TallyTable(manifest.method_a, manifest.method_b, {}, None, None)
    pct_a = 100.0 * total_a / total
    return TallyTable(
        manifest.method_a,
        manifest.method_b,
        {k: (v[0], v[1]) for k, v in per.items()},
        pct_a,
        100.0 - pct_a,
    )


def tally_from_counts(
    counts: list[tuple[int, int]], pairs_count: int, method_a: str = "a", method_b: str = "b"
) -> TallyTable:
    """Published-table arithmetic over per-annotator (votes_a, votes_b) rows.

    The overall split is votes_a over (annotators x pairs_count), with the
    complement reported for method B; rows are taken verbatim, even when a
    reported row exceeds pairs_count.
    """
    if pairs_count < 1 or not counts:
        raise StudyError("need at least one annotator row and a positive pairs_count")
    total_a = sum(a for a, _ in counts)
    denom = len(counts) * pairs_count
    pct_a = 100.0 * total_a / denom
    per = {f"annotator_{k + 1}": (a, b) for k, (a, b) in enumerate(counts)}
    return TallyTable(method_a, method_b, per, pct_a, 100.0 - pct_a)


class _StudyHandler(BaseHTTPRequestHandler):
    server_version = "studysvc/1.0"
    manifest: StudyManifest
    store: VoteStore
    static_dir: Path | None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, payload: dict, status: int = 200) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Cache-Control", "no-store")
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status: int, message: str) -> None:
        self._send_json({"error": message}, status=status)

    def do_GET(self):  # noqa: N802 (http.server API)
        url = urlparse(self.path)
        query = {k: v[0] for k, v in parse_qs(url.query).items()}
        parts = [p for p in url.path.split("/") if p]

        if url.path == "/api/study":
            self._send_json(
                {
                    "study_id": self.manifest.study_id,
                    "total": self.manifest.pairs_count,
                }
            )
        elif url.path == "/api/next":
            self._handle_next(query)
        elif url.path == "/api/results":
            table = tally(
                load_votes(self.store.path) if self.store.path.exists() else [],
                self.manifest,
            )
            self._send_json(table.to_dict())
        elif len(parts) == 3 and parts[0] == "img":
            self._handle_image(parts[1], parts[2], query)
        else:
            self._handle_static(url.path)

    def _handle_next(self, query: dict) -> None:
        annotator = query.get("annotator", "").strip()
        if not annotator:
            return self._send_error_json(400, "annotator query parameter required")
        answered = self.store.answered(annotator)
        for index, pair in enumerate(self.manifest.pairs):
            if pair.pair_id in answered:
                continue
            suffix = f"?annotator={annotator}"
            return self._send_json(
                {
                    "pair_id": pair.pair_id,
                    "left_url": f"/img/left/{pair.pair_id}{suffix}",
                    "right_url": f"/img/right/{pair.pair_id}{suffix}",
                    "index": index + 1,
                    "total": self.manifest.pairs_count,
                }
            )
        self._send_json({"done": True, "total": self.manifest.pairs_count})

    def _handle_image(self, side: str, pair_id: str, query: dict) -> None:
        annotator = query.get("annotator", "").strip()
        if side not in ("left", "right") or not annotator:
            return self._send_error_json(400, "need side left|right and annotator")
        try:
            pair = self.manifest.pair(pair_id)
        except IntegrityError:
            return self._send_error_json(404, "unknown pair")
        a_left = method_a_on_left(self.manifest.seed, annotator, pair_id)
        show_a = (side == "left") == a_left
        path = Path(pair.image_a_path if show_a else pair.image_b_path)
        if not path.exists():
            return self._send_error_json(404, "image missing")
        data = path.read_bytes()
        ctype = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Cache-Control", "no-store")
        self.end_headers()
        self.wfile.write(data)

    def _handle_static(self, path: str) -> None:
        if self.static_dir is None:
            return self._send_error_json(404, "not found")
        rel = path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            return self._send_error_json(404, "not found")
        data = target.read_bytes()
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):  # noqa: N802 (http.server API)
        if urlparse(self.path).path != "/api/vote":
            return self._send_error_json(404, "not found")
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
            annotator = str(payload["annotator"]).strip()
            pair_id = str(payload["pair_id"])
            choice = str(payload["choice"])
        except (KeyError, ValueError, json.JSONDecodeError):
            return self._send_error_json(400, "need annotator, pair_id, choice")
        if not annotator or choice not in ("left", "right"):
            return self._send_error_json(400, "need annotator, pair_id, choice in left|right")
        try:
            self.manifest.pair(pair_id)
        except IntegrityError:
            return self._send_error_json(404, "unknown pair")

        a_left = method_a_on_left(self.manifest.seed, annotator, pair_id)
        shown_left = self.manifest.method_a if a_left else self.manifest.method_b
        shown_right = self.manifest.method_b if a_left else self.manifest.method_a
        record = VoteRecord(
            study_id=self.manifest.study_id,
            annotator_id=annotator,
            pair_id=pair_id,
            shown_left=shown_left,
            shown_right=shown_right,
            choice=choice,
            resolved_method=shown_left if choice == "left" else shown_right,
            timestamp=time.time(),
        )
        if self.store.append(record):
            self._send_json({"ok": True, "pair_id": pair_id})
        else:
            self._send_error_json(HTTPStatus.CONFLICT, "already voted on this pair")


def build_server(
    manifest: StudyManifest,
    votes_path: str | Path,
    bind: tuple[str, int] = ("127.0.0.1", 0),
    allow_revote: bool = False,
    static_dir: str | Path | None = None,
) -> ThreadingHTTPServer:
    """Construct the HTTP server (caller decides how to run it). A busy port
    raises OSError here, before any request is served."""
    handler = type(
        "BoundStudyHandler",
        (_StudyHandler,),
        {
            "manifest": manifest,
            "store": VoteStore(votes_path, allow_revote=allow_revote),
            "static_dir": Path(static_dir) if static_dir else None,
        },
    )
    return ThreadingHTTPServer(bind, handler)


def serve(
    manifest: StudyManifest,
    votes_path: str | Path,
    bind: tuple[str, int],
    allow_revote: bool = False,
    static_dir: str | Path | None = None,
) -> None:
    server = build_server(manifest, votes_path, bind, allow_revote, static_dir)
    host, port = server.server_address[:2]
    print(f"study service listening on http://{host}:{port}/")
    try:
        server.serve_forever()
    finally:
        server.server_close()
