"""Challenge service: issues CAPTCHAs from a pre-generated pool, verifies
ordered click sequences, and keeps usability statistics.

Ground-truth boxes never leave the server; a challenge response carries
only the image, the ordered prompt glyphs and the declared display scale.
Click verification is inclusive on box edges. Every verification appends
one line to an event log and updates a compacted counters file, so the
stats survive restarts and can be recomputed from raw events.
"""

import base64
import io
import json
import secrets
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from PIL import Image
from pydantic import BaseModel, Field

from .generator import DatasetManifest, placement_from_dict


class ClickIn(BaseModel):
    x: float
    y: float
    t_ms: float = Field(ge=0)


class VerifyIn(BaseModel):
    session_id: str
    clicks: list[ClickIn]

EVENTS_FILE = "events.jsonl"
COUNTERS_FILE = "counters.json"


class SessionNotFound(KeyError):
    pass


class SessionExpired(RuntimeError):
    pass


class SessionTerminal(RuntimeError):
    """Submission replayed against an already solved/failed session."""


@dataclass
class ChallengeSession:
    session_id: str
    sample_id: str
    profile: str
    prompt_glyphs: list
    boxes: list  # ordered like prompt_glyphs; server-side only
    image_size: int
    display_scale: float
    issued_at: float
    ttl_seconds: int
    state: str = "pending"  # pending | solved | failed | expired


@dataclass
class PoolEntry:
    sample_id: str
    profile: str
    image_path: Path
    prompt_glyphs: list
    boxes: list
    image_size: int


@dataclass
class ProfileStats:
    n_attempts: int = 0
    n_success: int = 0
    total_time_seconds: float = 0.0

    def as_dict(self):
        return {
            "n_attempts": self.n_attempts,
            "n_success": self.n_success,
            "success_rate": (self.n_success / self.n_attempts) if self.n_attempts else None,
            "mean_time_seconds": (
                self.total_time_seconds / self.n_attempts if self.n_attempts else None
            ),
        }


def load_pool(pool_dir) -> list[PoolEntry]:
    """Read a generated dataset directory into pool entries."""
    pool_dir = Path(pool_dir)
    manifest = DatasetManifest.load(pool_dir / "manifest.jsonl")
    entries = []
    for r in manifest.written:
        placements = [placement_from_dict(p) for p in r.placements]
        boxes = [tuple(placements[i].bbox) for i in r.prompt_order]
        glyphs = [placements[i].glyph for i in r.prompt_order]
        with Image.open(pool_dir / r.image_path) as img:
            size = img.size[0]
        entries.append(
            PoolEntry(
                sample_id=r.id, profile=manifest.profile_name,
                image_path=pool_dir / r.image_path, prompt_glyphs=glyphs,
                boxes=boxes, image_size=size,
            )
        )
    return entries


class ChallengeStore:
    """Thread-safe session registry + usability counters.

    Samples are handed out take-once: a pool entry is popped at issue time
    and returns to the back of its queue only when the session reaches a
    terminal state, so no two live sessions ever share a sample.
    """

    def __init__(self, entries, ttl_seconds=120, display_scale=1.0, state_dir=None,
                 clock=time.monotonic):
        self._lock = threading.Lock()
        self._clock = clock
        self.ttl_seconds = ttl_seconds
        self.display_scale = display_scale
        self._pools: dict[str, deque] = {}
        for e in entries:
            self._pools.setdefault(e.profile, deque()).append(e)
        self._entries = {e.sample_id: e for e in entries}
        self._sessions: dict[str, ChallengeSession] = {}
        self._stats: dict[str, ProfileStats] = {}
        self.state_dir = Path(state_dir) if state_dir else None
        if self.state_dir:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            self._replay_events()

    # -- persistence ---------------------------------------------------

    def _replay_events(self):
        path = self.state_dir / EVENTS_FILE
        if not path.exists():
            return
        for line in path.read_text(encoding="utf-8").splitlines():
            ev = json.loads(line)
            s = self._stats.setdefault(ev["profile"], ProfileStats())
            s.n_attempts += 1
            s.n_success += bool(ev["success"])
            s.total_time_seconds += float(ev["elapsed_seconds"])

    def _record_event(self, session, success, elapsed):
        s = self._stats.setdefault(session.profile, ProfileStats())
        s.n_attempts += 1
        s.n_success += bool(success)
        s.total_time_seconds += elapsed
        if not self.state_dir:
            return
        event = {
            "session_id": session.session_id, "sample_id": session.sample_id,
            "profile": session.profile, "success": bool(success),
            "elapsed_seconds": elapsed, "wall_time": time.time(),
        }
        with open(self.state_dir / EVENTS_FILE, "a", encoding="utf-8") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")
        tmp = self.state_dir / (COUNTERS_FILE + ".tmp")
        tmp.write_text(json.dumps(self.stats(), sort_keys=True, indent=2), encoding="utf-8")
        tmp.replace(self.state_dir / COUNTERS_FILE)

    # -- session lifecycle ----------------------------------------------

    def profiles(self):
        return sorted(self._pools)

    def issue(self, profile: str) -> tuple[ChallengeSession, PoolEntry]:
        with self._lock:
            pool = self._pools.get(profile)
            if not pool:
                raise LookupError(f"no samples available for profile {profile!r}")
            entry = pool.popleft()
            session = ChallengeSession(
                session_id=secrets.token_urlsafe(16),
                sample_id=entry.sample_id,
                profile=profile,
                prompt_glyphs=list(entry.prompt_glyphs),
                boxes=list(entry.boxes),
                image_size=entry.image_size,
                display_scale=self.display_scale,
                issued_at=self._clock(),
                ttl_seconds=self.ttl_seconds,
            )
            self._sessions[session.session_id] = session
            return session, entry

    def _finish(self, session, state):
        # caller holds the lock; terminal transition is single-shot
        session.state = state
        self._pools.setdefault(session.profile, deque()).append(
            self._entries[session.sample_id]
        )

    def verify(self, session_id: str, clicks: list) -> tuple[bool, float]:
        """clicks: [(x, y, t_ms)] in native pixels (after display-scale
        normalisation). Success needs one in-box click per prompt glyph,
        in prompt order, with inclusive box edges."""
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise SessionNotFound(session_id)
            if session.state != "pending":
                raise SessionTerminal(session.state)
            if self._clock() - session.issued_at > session.ttl_seconds:
                self._finish(session, "expired")
                raise SessionExpired(session_id)
            for x, y, _ in clicks:
                if not (0 <= x <= session.image_size and 0 <= y <= session.image_size):
                    raise ValueError(f"click ({x}, {y}) outside image bounds")

            elapsed = (clicks[-1][2] / 1000.0) if clicks else 0.0
            success = len(clicks) == len(session.boxes)
            if success:
                for (x, y, _), (bx, by, bw, bh) in zip(clicks, session.boxes):
                    if not (bx <= x <= bx + bw and by <= y <= by + bh):
                        success = False
                        break
            self._finish(session, "solved" if success else "failed")
            self._record_event(session, success, elapsed)
            return success, elapsed

    def expire_stale(self):
        """Lazy sweep; expired sessions never count as attempts."""
        with self._lock:
            now = self._clock()
            for session in self._sessions.values():
                if session.state == "pending" and now - session.issued_at > session.ttl_seconds:
                    self._finish(session, "expired")

    def stats(self) -> dict:
        totals = ProfileStats()
        per_profile = {}
        for name, s in sorted(self._stats.items()):
            totals.n_attempts += s.n_attempts
            totals.n_success += s.n_success
            totals.total_time_seconds += s.total_time_seconds
            per_profile[name] = s.as_dict()
        out = totals.as_dict()
        out["profiles"] = per_profile
        return out


def _data_uri(path: Path) -> str:
    buf = io.BytesIO()
    with Image.open(path) as img:
        img.save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(store: ChallengeStore, ui_dir=None, image_delivery: str = "data-uri"):
    """FastAPI app over a ChallengeStore.

    image_delivery: 'data-uri' inlines the PNG; 'url' serves it from
    /api/v1/image/{sample_id}.png with the sample id as cache-buster.
    """
    from fastapi import FastAPI, HTTPException, Query
    from fastapi.responses import FileResponse, JSONResponse

    app = FastAPI(title="captchalab usability service", version="1")

    @app.get("/api/v1/challenge")
    def challenge(profile: str = Query("v1")):
        store.expire_stale()
        try:
            session, entry = store.issue(profile)
        except LookupError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        if image_delivery == "url":
            image = f"/api/v1/image/{entry.sample_id}.png?v={entry.sample_id}"
        else:
            image = _data_uri(entry.image_path)
        return {
            "session_id": session.session_id,
            "image": image,
            "prompt": session.prompt_glyphs,
            "display_scale": session.display_scale,
            "image_size": session.image_size,
            "ttl_seconds": session.ttl_seconds,
        }

    @app.get("/api/v1/image/{sample_id}.png")
    def image(sample_id: str):
        entry = store._entries.get(sample_id)
        if entry is None:
            raise HTTPException(status_code=404, detail="unknown sample")
        return FileResponse(entry.image_path, media_type="image/png")

    @app.post("/api/v1/verify")
    def verify(body: VerifyIn):
        t_values = [c.t_ms for c in body.clicks]
        if any(b < a for a, b in zip(t_values, t_values[1:])):
            raise HTTPException(status_code=422, detail="click timestamps must be nondecreasing")
        scale = store.display_scale or 1.0
        clicks = [(c.x / scale, c.y / scale, c.t_ms) for c in body.clicks]
        try:
            success, elapsed = store.verify(body.session_id, clicks)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except SessionNotFound as exc:
            raise HTTPException(status_code=404, detail="unknown session") from exc
        except SessionTerminal as exc:
            raise HTTPException(status_code=409, detail=f"session already {exc}") from exc
        except SessionExpired as exc:
            raise HTTPException(status_code=410, detail="session expired") from exc
        return {"success": success, "elapsed_seconds": elapsed}

    @app.get("/api/v1/stats")
    def stats():
        return JSONResponse(store.stats())

    if ui_dir and Path(ui_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
