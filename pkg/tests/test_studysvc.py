"""Tests for study assembly, blinded side assignment, vote storage and tallies."""

import http.client
import json
import threading
from urllib.error import HTTPError
from urllib.request import Request, urlopen

import pytest

import oracles
from maskforge.studysvc import (
    IntegrityError,
    StudyError,
    StudyManifest,
    StudyPair,
    VoteRecord,
    VoteStore,
    build_server,
    load_votes,
    make_study,
    method_a_on_left,
    tally,
    tally_from_counts,
)

WANG_ROWS = [(200, 0), (196, 4), (197, 3), (191, 9), (189, 11), (191, 9)]
ANWAR_ROWS = [(137, 66), (191, 9), (190, 10), (177, 23), (177, 23), (182, 18)]
HUANG_ROWS = [(194, 6), (199, 1), (200, 0), (197, 3), (192, 8), (200, 0)]


def fill_dirs(tmp_path, n, extra_a=(), extra_b=()):
    dir_a = tmp_path / "a"
    dir_b = tmp_path / "b"
    dir_a.mkdir()
    dir_b.mkdir()
    for k in range(n):
        stem = f"face_{k:03d}"
        (dir_a / f"{stem}.png").write_bytes(f"imgA-{stem}".encode())
        (dir_b / f"{stem}.png").write_bytes(f"imgB-{stem}".encode())
    for stem in extra_a:
        (dir_a / f"{stem}.png").write_bytes(f"imgA-{stem}".encode())
    for stem in extra_b:
        (dir_b / f"{stem}.png").write_bytes(f"imgB-{stem}".encode())
    return dir_a, dir_b


def small_manifest(tmp_path, n_common=6, n_pairs=4, seed=7):
    dir_a, dir_b = fill_dirs(tmp_path, n_common)
    return make_study(dir_a, dir_b, "ours", "baseline", n_pairs, seed)


def vote_for(manifest, annotator, pair_id, method):
    a_left = method_a_on_left(manifest.seed, annotator, pair_id)
    shown_left = manifest.method_a if a_left else manifest.method_b
    shown_right = manifest.method_b if a_left else manifest.method_a
    return VoteRecord(
        study_id=manifest.study_id,
        annotator_id=annotator,
        pair_id=pair_id,
        shown_left=shown_left,
        shown_right=shown_right,
        choice="left" if shown_left == method else "right",
        resolved_method=method,
        timestamp=0.0,
    )


# ---------------------------------------------------------------- make_study


def test_make_study_is_deterministic(tmp_path):
    dir_a, dir_b = fill_dirs(tmp_path, 12)
    first = make_study(dir_a, dir_b, "ours", "baseline", 8, seed=5)
    again = make_study(dir_a, dir_b, "ours", "baseline", 8, seed=5)
    assert [p.pair_id for p in first.pairs] == [p.pair_id for p in again.pairs]
    assert first.study_id == again.study_id
    assert first.study_id.startswith("study-")
    assert len(first.pairs) == 8
    assert len({p.pair_id for p in first.pairs}) == 8


def test_make_study_paths_point_into_source_dirs(tmp_path):
    dir_a, dir_b = fill_dirs(tmp_path, 6)
    study = make_study(dir_a, dir_b, "ours", "baseline", 4, seed=2)
    for pair in study.pairs:
        assert pair.image_a_path == str(dir_a / f"{pair.pair_id}.png")
        assert pair.image_b_path == str(dir_b / f"{pair.pair_id}.png")


def test_make_study_uses_only_shared_ids(tmp_path):
    dir_a, dir_b = fill_dirs(tmp_path, 5, extra_a=["only_a"], extra_b=["only_b"])
    (dir_a / "notes.txt").write_text("not an image")
    study = make_study(dir_a, dir_b, "ours", "baseline", 5, seed=1)
    assert {p.pair_id for p in study.pairs} == {f"face_{k:03d}" for k in range(5)}


def test_make_study_infeasible_reports_counts(tmp_path):
    dir_a = tmp_path / "a"
    dir_b = tmp_path / "b"
    dir_a.mkdir()
    dir_b.mkdir()
    (dir_a / "x.png").write_bytes(b"x")
    (dir_b / "y.png").write_bytes(b"y")
    with pytest.raises(StudyError, match="need 3 shared image ids, found 0"):
        make_study(dir_a, dir_b, "ours", "baseline", 3, seed=0)


def test_make_study_seed_changes_selection(tmp_path):
    dir_a, dir_b = fill_dirs(tmp_path, 40)
    one = make_study(dir_a, dir_b, "ours", "baseline", 10, seed=1)
    two = make_study(dir_a, dir_b, "ours", "baseline", 10, seed=2)
    assert [p.pair_id for p in one.pairs] != [p.pair_id for p in two.pairs]


# ------------------------------------------------------------- StudyManifest


def test_manifest_roundtrip(tmp_path):
    study = small_manifest(tmp_path)
    path = tmp_path / "study.json"
    study.save(path)
    assert StudyManifest.load(path) == study


def test_manifest_pair_lookup(tmp_path):
    study = small_manifest(tmp_path)
    wanted = study.pairs[2]
    assert study.pair(wanted.pair_id) == wanted
    with pytest.raises(IntegrityError):
        study.pair("no_such_pair")


def test_manifest_rejects_duplicate_pair_ids():
    pair = StudyPair("p1", "a.png", "b.png")
    with pytest.raises(StudyError):
        StudyManifest("study-x", "ours", "baseline", (pair, pair), seed=0)


# ------------------------------------------------------------ side assignment


def test_side_assignment_is_stable():
    first = [method_a_on_left(9, "ann", f"p{k}") for k in range(50)]
    again = [method_a_on_left(9, "ann", f"p{k}") for k in range(50)]
    assert first == again
    assert method_a_on_left(9, "ann", "p0") != method_a_on_left(10, "ann", "p0") or (
        method_a_on_left(9, "ann", "p1") != method_a_on_left(10, "ann", "p1")
    )


def test_side_assignment_left_share_is_balanced():
    draws = [
        method_a_on_left(3, f"annotator_{a}", f"pair_{p:03d}")
        for a in range(25)
        for p in range(200)
    ]
    share = sum(draws) / len(draws)
    assert 0.4 <= share <= 0.6


# ----------------------------------------------------------------- VoteRecord


def test_vote_record_rejects_bad_choice():
    with pytest.raises(StudyError, match="choice"):
        VoteRecord("s", "ann", "p", "ours", "baseline", "middle", "ours", 0.0)


def test_vote_record_rejects_inconsistent_resolution():
    with pytest.raises(StudyError, match="resolved_method"):
        VoteRecord("s", "ann", "p", "ours", "baseline", "left", "baseline", 0.0)


def test_vote_record_dict_roundtrip():
    record = VoteRecord("s", "ann", "p", "ours", "baseline", "right", "baseline", 1.5)
    assert VoteRecord.from_dict(record.to_dict()) == record


# ------------------------------------------------------------------ VoteStore


def test_store_accepts_then_rejects_duplicate(tmp_path):
    study = small_manifest(tmp_path)
    store = VoteStore(tmp_path / "votes.ndjson")
    record = vote_for(study, "ann", study.pairs[0].pair_id, "ours")
    assert store.append(record) is True
    assert store.append(record) is False
    assert len(load_votes(store.path)) == 1


def test_store_reload_remembers_answers(tmp_path):
    study = small_manifest(tmp_path)
    path = tmp_path / "votes.ndjson"
    record = vote_for(study, "ann", study.pairs[0].pair_id, "ours")
    assert VoteStore(path).append(record) is True
    reopened = VoteStore(path)
    assert reopened.append(record) is False
    assert reopened.answered("ann") == {study.pairs[0].pair_id}


def test_store_allow_revote_appends_again(tmp_path):
    study = small_manifest(tmp_path)
    store = VoteStore(tmp_path / "votes.ndjson", allow_revote=True)
    first = vote_for(study, "ann", study.pairs[0].pair_id, "ours")
    second = vote_for(study, "ann", study.pairs[0].pair_id, "baseline")
    assert store.append(first) is True
    assert store.append(second) is True
    assert len(load_votes(store.path)) == 2


# ---------------------------------------------------------------------- tally


def test_tally_counts_per_annotator(tmp_path):
    study = small_manifest(tmp_path)
    ids = [p.pair_id for p in study.pairs]
    votes = [vote_for(study, "ann1", pid, "ours") for pid in ids]
    votes += [vote_for(study, "ann2", pid, "baseline") for pid in ids[:2]]
    votes += [vote_for(study, "ann2", pid, "ours") for pid in ids[2:]]
    table = tally(votes, study)
    assert table.per_annotator["ann1"] == (4, 0)
    assert table.per_annotator["ann2"] == (2, 2)
    assert table.total_votes == 8
    assert table.overall_percent_a == pytest.approx(75.0)
    assert table.overall_percent_a + table.overall_percent_b == pytest.approx(100.0)


def test_tally_is_permutation_invariant(tmp_path):
    study = small_manifest(tmp_path)
    ids = [p.pair_id for p in study.pairs]
    votes = [vote_for(study, "ann1", pid, "ours") for pid in ids]
    votes += [vote_for(study, "ann2", pid, "baseline") for pid in ids]
    assert tally(votes, study) == tally(votes[::-1], study)


def test_tally_revotes_resolve_last_write_wins(tmp_path):
    study = small_manifest(tmp_path)
    pid = study.pairs[0].pair_id
    votes = [vote_for(study, "ann", pid, "ours"), vote_for(study, "ann", pid, "baseline")]
    table = tally(votes, study)
    assert table.per_annotator["ann"] == (0, 1)
    assert table.total_votes == 1


def test_tally_empty_store_is_undefined(tmp_path):
    study = small_manifest(tmp_path)
    table = tally([], study)
    assert table.per_annotator == {}
    assert table.total_votes == 0
    assert table.overall_percent_a is None
    assert table.overall_percent_b is None


def test_tally_rejects_foreign_study(tmp_path):
    study = small_manifest(tmp_path)
    vote = vote_for(study, "ann", study.pairs[0].pair_id, "ours")
    other = StudyManifest("study-other", "ours", "baseline", study.pairs, study.seed)
    with pytest.raises(IntegrityError, match="foreign study"):
        tally([vote], other)


def test_tally_rejects_unknown_pair(tmp_path):
    study = small_manifest(tmp_path)
    vote = VoteRecord(study.study_id, "ann", "ghost", "ours", "baseline", "left", "ours", 0.0)
    with pytest.raises(IntegrityError, match="ghost"):
        tally([vote], study)


def test_tally_rejects_unknown_method(tmp_path):
    study = small_manifest(tmp_path)
    pid = study.pairs[0].pair_id
    vote = VoteRecord(study.study_id, "ann", pid, "mystery", "baseline", "left", "mystery", 0.0)
    with pytest.raises(IntegrityError, match="mystery"):
        tally([vote], study)


# ----------------------------------------------------------- published tallies


def test_counts_tally_first_comparison():
    table = tally_from_counts(WANG_ROWS, 200)
    assert round(table.overall_percent_a, 2) == 97.00
    assert round(table.overall_percent_b, 2) == 3.00


def test_counts_tally_second_comparison_keeps_rows_verbatim():
    table = tally_from_counts(ANWAR_ROWS, 200)
    assert round(table.overall_percent_a, 2) == 87.83
    assert round(table.overall_percent_b, 2) == 12.17
    assert table.per_annotator["annotator_1"] == (137, 66)


def test_counts_tally_third_comparison():
    table = tally_from_counts(HUANG_ROWS, 200)
    assert round(table.overall_percent_a, 2) == 98.50
    assert round(table.overall_percent_b, 2) == 1.50


def test_counts_tally_matches_oracle():
    for rows in (WANG_ROWS, ANWAR_ROWS, HUANG_ROWS):
        table = tally_from_counts(rows, 200)
        assert table.overall_percent_a == pytest.approx(
            oracles.tally_percent(rows, 200), abs=1e-12
        )


def test_counts_tally_rejects_degenerate_input():
    with pytest.raises(StudyError):
        tally_from_counts([], 200)
    with pytest.raises(StudyError):
        tally_from_counts([(1, 0)], 0)


# ------------------------------------------------------------------- service


def fetch(port, path, payload=None):
    url = f"http://127.0.0.1:{port}{path}"
    if payload is None:
        request = Request(url)
    else:
        request = Request(
            url,
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"},
        )
    try:
        with urlopen(request, timeout=5.0) as resp:
            return resp.status, resp.read()
    except HTTPError as err:
        return err.code, err.read()


def fetch_json(port, path, payload=None):
    status, body = fetch(port, path, payload)
    return status, json.loads(body)


class running_server:
    def __init__(self, manifest, votes_path, **kwargs):
        self.server = build_server(manifest, votes_path, ("127.0.0.1", 0), **kwargs)
        self.port = self.server.server_address[1]

    def __enter__(self):
        threading.Thread(target=self.server.serve_forever, daemon=True).start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def test_service_study_metadata_hides_labels(tmp_path):
    study = small_manifest(tmp_path)
    with running_server(study, tmp_path / "votes.ndjson") as svc:
        status, body = fetch(svc.port, "/api/study")
        assert status == 200
        payload = json.loads(body)
        assert payload == {"study_id": study.study_id, "total": 4}
        assert b"ours" not in body and b"baseline" not in body


def test_service_next_requires_annotator(tmp_path):
    study = small_manifest(tmp_path)
    with running_server(study, tmp_path / "votes.ndjson") as svc:
        status, payload = fetch_json(svc.port, "/api/next")
        assert status == 400
        assert "annotator" in payload["error"]


def test_service_next_walks_pairs_in_order(tmp_path):
    study = small_manifest(tmp_path)
    with running_server(study, tmp_path / "votes.ndjson") as svc:
        status, payload = fetch_json(svc.port, "/api/next?annotator=ann")
        assert status == 200
        assert payload["pair_id"] == study.pairs[0].pair_id
        assert payload["index"] == 1
        assert payload["total"] == 4
        assert payload["left_url"].startswith(f"/img/left/{payload['pair_id']}")
        assert "ours" not in payload["left_url"] and "ours" not in payload["right_url"]

        fetch_json(svc.port, "/api/vote", {"annotator": "ann", "pair_id": payload["pair_id"], "choice": "left"})
        status, payload = fetch_json(svc.port, "/api/next?annotator=ann")
        assert payload["pair_id"] == study.pairs[1].pair_id
        assert payload["index"] == 2


def test_service_serves_images_per_side_assignment(tmp_path):
    study = small_manifest(tmp_path)
    pair = study.pairs[0]
    bytes_a = open(pair.image_a_path, "rb").read()
    bytes_b = open(pair.image_b_path, "rb").read()
    with running_server(study, tmp_path / "votes.ndjson") as svc:
        suffix = f"/{pair.pair_id}?annotator=ann"
        _, left = fetch(svc.port, "/img/left" + suffix)
        _, right = fetch(svc.port, "/img/right" + suffix)
        if method_a_on_left(study.seed, "ann", pair.pair_id):
            assert (left, right) == (bytes_a, bytes_b)
        else:
            assert (left, right) == (bytes_b, bytes_a)


def test_service_image_errors(tmp_path):
    study = small_manifest(tmp_path)
    with running_server(study, tmp_path / "votes.ndjson") as svc:
        assert fetch(svc.port, f"/img/left/{study.pairs[0].pair_id}")[0] == 400
        assert fetch(svc.port, "/img/up/p?annotator=ann")[0] == 400
        assert fetch(svc.port, "/img/left/ghost?annotator=ann")[0] == 404


def test_service_vote_then_duplicate_conflict(tmp_path):
    study = small_manifest(tmp_path)
    votes_path = tmp_path / "votes.ndjson"
    pid = study.pairs[0].pair_id
    body = {"annotator": "ann", "pair_id": pid, "choice": "left"}
    with running_server(study, votes_path) as svc:
        status, payload = fetch_json(svc.port, "/api/vote", body)
        assert (status, payload["ok"]) == (200, True)
        status, payload = fetch_json(svc.port, "/api/vote", body)
        assert status == 409
        assert "already voted" in payload["error"]
    records = load_votes(votes_path)
    assert len(records) == 1
    assert records[0].resolved_method in (study.method_a, study.method_b)


def test_service_vote_validation(tmp_path):
    study = small_manifest(tmp_path)
    with running_server(study, tmp_path / "votes.ndjson") as svc:
        assert fetch(svc.port, "/api/vote", {"annotator": "ann"})[0] == 400
        assert fetch(svc.port, "/api/vote", {"annotator": "ann", "pair_id": "p", "choice": "up"})[0] == 400
        assert fetch(svc.port, "/api/vote", {"annotator": "ann", "pair_id": "ghost", "choice": "left"})[0] == 404
        assert fetch(svc.port, "/api/elsewhere", {"annotator": "ann"})[0] == 404


def test_service_full_session_reaches_done_and_results(tmp_path):
    study = small_manifest(tmp_path)
    with running_server(study, tmp_path / "votes.ndjson") as svc:
        for _ in study.pairs:
            _, payload = fetch_json(svc.port, "/api/next?annotator=ann")
            fetch_json(
                svc.port,
                "/api/vote",
                {"annotator": "ann", "pair_id": payload["pair_id"], "choice": "left"},
            )
        status, payload = fetch_json(svc.port, "/api/next?annotator=ann")
        assert status == 200
        assert payload == {"done": True, "total": 4}

        status, results = fetch_json(svc.port, "/api/results")
        assert status == 200
        assert results["method_a"] == "ours"
        counts = results["per_annotator"]["ann"]
        assert counts["votes_a"] + counts["votes_b"] == 4
        assert results["total_votes"] == 4


def test_service_static_disabled_by_default(tmp_path):
    study = small_manifest(tmp_path)
    with running_server(study, tmp_path / "votes.ndjson") as svc:
        assert fetch(svc.port, "/anything.html")[0] == 404


def test_service_static_serves_files_but_not_parents(tmp_path):
    study = small_manifest(tmp_path)
    static = tmp_path / "static"
    static.mkdir()
    (static / "index.html").write_text("<html>study</html>")
    (tmp_path / "secret.txt").write_text("keep out")
    with running_server(study, tmp_path / "votes.ndjson", static_dir=static) as svc:
        status, body = fetch(svc.port, "/")
        assert (status, body) == (200, b"<html>study</html>")
        conn = http.client.HTTPConnection("127.0.0.1", svc.port, timeout=5.0)
        conn.putrequest("GET", "/../secret.txt", skip_host=False)
        conn.endheaders()
        assert conn.getresponse().status == 404
        conn.close()


def test_service_busy_port_raises(tmp_path):
    study = small_manifest(tmp_path)
    with running_server(study, tmp_path / "votes.ndjson") as svc:
        with pytest.raises(OSError):
            build_server(study, tmp_path / "other.ndjson", ("127.0.0.1", svc.port))
