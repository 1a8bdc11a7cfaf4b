import json
import threading
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from captchalab.service import (
    ChallengeStore,
    PoolEntry,
    SessionExpired,
    SessionNotFound,
    SessionTerminal,
    create_app,
    load_pool,
)


class FakeClock:
    def __init__(self):
        self.now = 1000.0

    def __call__(self):
        return self.now


def make_entries(tmp_path, n=8, profile="v1", side=64):
    """Pool entries with known boxes on a 4x4 grid."""
    entries = []
    img = Image.fromarray(np.full((side, side, 3), 90, dtype=np.uint8))
    for i in range(n):
        path = tmp_path / f"{profile}-{i:03d}.png"
        img.save(path)
        boxes = [(4, 4, 10, 10), (30, 6, 12, 12), (10, 34, 12, 12), (40, 40, 12, 14)]
        glyphs = ["A", "B", "C", "D"]
        entries.append(
            PoolEntry(
                sample_id=f"{profile}-{i:03d}", profile=profile, image_path=path,
                prompt_glyphs=glyphs, boxes=boxes, image_size=side,
            )
        )
    return entries


def center_clicks(boxes, dt=500.0):
    return [
        (bx + bw / 2, by + bh / 2, (i + 1) * dt)
        for i, (bx, by, bw, bh) in enumerate(boxes)
    ]


class TestChallengeStore:
    def setup_method(self):
        self.clock = FakeClock()

    def make_store(self, tmp_path, **kw):
        return ChallengeStore(make_entries(tmp_path), ttl_seconds=120,
                             clock=self.clock, **kw)

    def test_issue_unique_sessions(self, tmp_path):
        store = self.make_store(tmp_path)
        s1, _ = store.issue("v1")
        s2, _ = store.issue("v1")
        assert s1.session_id != s2.session_id
        assert s1.sample_id != s2.sample_id  # take-once semantics

    def test_sample_returns_to_pool_after_terminal(self, tmp_path):
        store = ChallengeStore(make_entries(tmp_path, n=1), ttl_seconds=120, clock=self.clock)
        s1, e1 = store.issue("v1")
        with pytest.raises(LookupError):
            store.issue("v1")  # only sample is live
        store.verify(s1.session_id, center_clicks(s1.boxes))
        s2, e2 = store.issue("v1")
        assert e2.sample_id == e1.sample_id

    def test_center_clicks_succeed(self, tmp_path):
        store = self.make_store(tmp_path)
        s, _ = store.issue("v1")
        success, elapsed = store.verify(s.session_id, center_clicks(s.boxes))
        assert success
        assert elapsed == pytest.approx(4 * 500 / 1000)

    def test_order_swap_fails(self, tmp_path):
        store = self.make_store(tmp_path)
        s, _ = store.issue("v1")
        clicks = center_clicks(s.boxes)
        clicks[0], clicks[1] = (*clicks[1][:2], clicks[0][2]), (*clicks[0][:2], clicks[1][2])
        success, _ = store.verify(s.session_id, clicks)
        assert not success

    def test_boundary_inclusive(self, tmp_path):
        store = self.make_store(tmp_path)
        # one pixel inside the left edge succeeds
        s, _ = store.issue("v1")
        bx, by, bw, bh = s.boxes[0]
        clicks = center_clicks(s.boxes)
        clicks[0] = (bx + 1, by + 1, clicks[0][2])
        assert store.verify(s.session_id, clicks)[0]
        # exactly on the edge is inclusive
        s, _ = store.issue("v1")
        clicks = center_clicks(s.boxes)
        clicks[0] = (bx, by, clicks[0][2])
        assert store.verify(s.session_id, clicks)[0]
        # one pixel outside fails
        s, _ = store.issue("v1")
        clicks = center_clicks(s.boxes)
        clicks[0] = (bx - 1, by, clicks[0][2])
        assert not store.verify(s.session_id, clicks)[0]

    def test_wrong_click_count_fails(self, tmp_path):
        store = self.make_store(tmp_path)
        s, _ = store.issue("v1")
        assert not store.verify(s.session_id, center_clicks(s.boxes)[:-1])[0]

    def test_replay_rejected_and_stats_untouched(self, tmp_path):
        store = self.make_store(tmp_path)
        s, _ = store.issue("v1")
        store.verify(s.session_id, center_clicks(s.boxes))
        before = store.stats()
        with pytest.raises(SessionTerminal):
            store.verify(s.session_id, center_clicks(s.boxes))
        assert store.stats() == before

    def test_unknown_session(self, tmp_path):
        store = self.make_store(tmp_path)
        with pytest.raises(SessionNotFound):
            store.verify("nope", [])

    def test_expired_session_fails_even_when_correct(self, tmp_path):
        store = self.make_store(tmp_path)
        s, _ = store.issue("v1")
        self.clock.now += 121
        with pytest.raises(SessionExpired):
            store.verify(s.session_id, center_clicks(s.boxes))
        stats = store.stats()
        assert stats["n_attempts"] == 0  # expiry is not an attempt

    def test_stats_aggregation(self, tmp_path):
        store = self.make_store(tmp_path)
        for i in range(4):
            s, _ = store.issue("v1")
            clicks = center_clicks(s.boxes)
            if i % 2:
                clicks[0] = (0.0, 0.0, clicks[0][2])  # miss
            store.verify(s.session_id, clicks)
        stats = store.stats()
        assert stats["n_attempts"] == 4
        assert stats["n_success"] == 2
        assert stats["success_rate"] == 0.5
        assert stats["profiles"]["v1"]["n_attempts"] == 4

    def test_fresh_store_reports_null_rates(self, tmp_path):
        store = self.make_store(tmp_path)
        stats = store.stats()
        assert stats["n_attempts"] == 0
        assert stats["success_rate"] is None
        assert stats["mean_time_seconds"] is None

    def test_concurrent_verify_storm_exact_counters(self, tmp_path):
        store = ChallengeStore(make_entries(tmp_path, n=100), ttl_seconds=120,
                              clock=self.clock)
        sessions = [store.issue("v1")[0] for _ in range(100)]
        results = []

        def worker(idx, session):
            clicks = center_clicks(session.boxes)
            if idx % 4 == 0:
                clicks[-1] = (1.0, 1.0, clicks[-1][2])  # force failure
            results.append(store.verify(session.session_id, clicks)[0])

        threads = [
            threading.Thread(target=worker, args=(i, s)) for i, s in enumerate(sessions)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        stats = store.stats()
        assert stats["n_attempts"] == 100
        assert stats["n_success"] == sum(results) == 75

    def test_event_log_persistence_and_replay(self, tmp_path):
        state = tmp_path / "state"
        store = self.make_store(tmp_path, state_dir=state)
        s, _ = store.issue("v1")
        store.verify(s.session_id, center_clicks(s.boxes))
        assert (state / "events.jsonl").exists()
        counters = json.loads((state / "counters.json").read_text())
        assert counters["n_attempts"] == 1

        reloaded = ChallengeStore(make_entries(tmp_path), ttl_seconds=120,
                                 clock=self.clock, state_dir=state)
        assert reloaded.stats()["n_attempts"] == 1
        assert reloaded.stats()["n_success"] == 1


class TestHttpApi:
    @pytest.fixture()
    def client(self, tmp_path):
        store = ChallengeStore(make_entries(tmp_path), ttl_seconds=120)
        return TestClient(create_app(store))

    def test_challenge_payload_shape_and_no_box_leak(self, client):
        r = client.get("/api/v1/challenge", params={"profile": "v1"})
        assert r.status_code == 200
        body = r.json()
        assert set(body) == {"session_id", "image", "prompt", "display_scale",
                             "image_size", "ttl_seconds"}
        assert body["image"].startswith("data:image/png;base64,")
        assert 4 <= len(body["prompt"]) <= 6
        assert "box" not in json.dumps(body).lower()

    def test_unknown_profile_503(self, client):
        r = client.get("/api/v1/challenge", params={"profile": "nope"})
        assert r.status_code == 503

    def test_verify_flow(self, client):
        body = client.get("/api/v1/challenge").json()
        # the test pool always uses the same grid of boxes
        clicks = [
            {"x": x, "y": y, "t_ms": t}
            for x, y, t in center_clicks([(4, 4, 10, 10), (30, 6, 12, 12),
                                          (10, 34, 12, 12), (40, 40, 12, 14)])
        ]
        r = client.post("/api/v1/verify", json={"session_id": body["session_id"], "clicks": clicks})
        assert r.status_code == 200
        assert r.json()["success"] is True
        assert r.json()["elapsed_seconds"] == pytest.approx(2.0)

        # replay -> conflict
        r2 = client.post("/api/v1/verify", json={"session_id": body["session_id"], "clicks": clicks})
        assert r2.status_code == 409

    def test_unknown_session_404(self, client):
        r = client.post("/api/v1/verify", json={"session_id": "zzz", "clicks": []})
        assert r.status_code == 404

    def test_nonmonotone_timestamps_422(self, client):
        body = client.get("/api/v1/challenge").json()
        clicks = [{"x": 5, "y": 5, "t_ms": 900}, {"x": 6, "y": 6, "t_ms": 100}]
        r = client.post("/api/v1/verify", json={"session_id": body["session_id"], "clicks": clicks})
        assert r.status_code == 422

    def test_out_of_bounds_click_422(self, client):
        body = client.get("/api/v1/challenge").json()
        clicks = [{"x": 500, "y": 5, "t_ms": 100}]
        r = client.post("/api/v1/verify", json={"session_id": body["session_id"], "clicks": clicks})
        assert r.status_code == 422

    def test_stats_endpoint(self, client):
        r = client.get("/api/v1/stats")
        assert r.status_code == 200
        assert r.json()["n_attempts"] == 0

    def test_url_image_delivery(self, tmp_path):
        store = ChallengeStore(make_entries(tmp_path), ttl_seconds=120)
        client = TestClient(create_app(store, image_delivery="url"))
        body = client.get("/api/v1/challenge").json()
        assert body["image"].startswith("/api/v1/image/")
        img = client.get(body["image"])
        assert img.status_code == 200
        assert img.headers["content-type"] == "image/png"


def test_static_ui_hosted_when_built(tmp_path):
    ui = tmp_path / "dist"
    ui.mkdir()
    (ui / "index.html").write_text("<html><body>usability test</body></html>")
    store = ChallengeStore(make_entries(tmp_path), ttl_seconds=120)
    client = TestClient(create_app(store, ui_dir=ui))
    r = client.get("/")
    assert r.status_code == 200
    assert "usability test" in r.text
    # API routes still take precedence
    assert client.get("/api/v1/stats").status_code == 200


def test_load_pool_from_generated_dataset(tmp_path, toy_model_64):
    from captchalab.generator import generate_dataset
    from conftest import FONTS_5, LATIN_CHARSET, storage_backgrounds
    from test_generator import toy_profile

    predictor, schedule = toy_model_64
    backgrounds = storage_backgrounds(2, 64, seed=60)
    generate_dataset(
        predictor, schedule, toy_profile(), backgrounds, LATIN_CHARSET, FONTS_5,
        n=3, split=0.5, out_dir=tmp_path, master_seed=5,
    )
    entries = load_pool(tmp_path)
    assert len(entries) == 3
    for e in entries:
        assert len(e.prompt_glyphs) == len(e.boxes)
        assert e.image_path.exists()
        assert e.image_size == 64
