"""HTTP study server: pairwise preference collection over triplets.

Raters are served one triplet at a time (lowest manifest position they have
not voted on). The two candidates are presented in a per-(rater, triplet)
randomized left/right order; the client translates its click back to the
canonical order before posting, and the permutation is logged server-side so
position bias can be audited. Votes land in an append-only JSON Lines log
that is flushed and fsynced before the request is acknowledged; replaying
the log after a restart reproduces identical aggregation.

Aggregation assigns the majority label when at least `min_raters` effective
votes agree with fraction >= theta, excludes contested triplets, and leaves
under-voted ones pending. A rater's later vote supersedes their earlier one.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .corpus import Manifest, TripletRenderer, write_manifest
from .imagecore import Image
from .rng import stream_key

DEFAULT_MIN_RATERS = 5
DEFAULT_THETA = 0.8

IDENTITY = "identity"
SWAP = "swap"


class StudyError(ValueError):
    pass


@dataclass(frozen=True)
class VoteRecord:
    triplet_id: str
    rater_id: str
    choice: int  # canonical: 0 = first distorted candidate preferred
    timestamp_ms: int


@dataclass
class AggregateResult:
    labels: dict[str, int] = field(default_factory=dict)
    excluded: list[str] = field(default_factory=list)
    pending: list[str] = field(default_factory=list)
    tallies: dict[str, dict] = field(default_factory=dict)


class StudyState:
    """Vote log plus assignment cursors over one manifest."""

    def __init__(
        self,
        manifest: Manifest,
        log_path=None,
        min_raters: int = DEFAULT_MIN_RATERS,
        theta: float = DEFAULT_THETA,
        seed: int = 0,
    ):
        self.manifest = manifest
        self.min_raters = min_raters
        self.theta = theta
        self.seed = seed
        self.log_path = log_path
        self.votes: list[VoteRecord] = []
        self._by_id = {rec.triplet_id: rec for rec in manifest.records}
        self._order = [rec.triplet_id for rec in manifest.records]
        self._lock = threading.Lock()
        self._log_fh = None
        if log_path is not None:
            self._replay_log()
            self._log_fh = open(log_path, "a")

    # -- persistence --------------------------------------------------------

    def _replay_log(self) -> None:
        if not os.path.exists(self.log_path):
            return
        with open(self.log_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if obj.get("event") == "vote":
                    self.votes.append(
                        VoteRecord(
                            obj["triplet_id"],
                            obj["rater_id"],
                            int(obj["choice"]),
                            int(obj["timestamp_ms"]),
                        )
                    )

    def _append_log(self, obj: dict) -> None:
        if self._log_fh is None:
            return
        self._log_fh.write(json.dumps(obj, sort_keys=True) + "\n")
        self._log_fh.flush()
        os.fsync(self._log_fh.fileno())

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    # -- core operations ----------------------------------------------------

    def permutation(self, rater_id: str, triplet_id: str) -> str:
        return SWAP if stream_key("perm", self.seed, rater_id, triplet_id) & 1 else IDENTITY

    def effective_votes(self) -> dict[str, dict[str, VoteRecord]]:
        """Latest vote per (triplet, rater); log order breaks timestamp ties."""
        eff: dict[str, dict[str, VoteRecord]] = {}
        for vote in self.votes:
            per = eff.setdefault(vote.triplet_id, {})
            prev = per.get(vote.rater_id)
            if prev is None or vote.timestamp_ms >= prev.timestamp_ms:
                per[vote.rater_id] = vote
        return eff

    def assign_next(self, rater_id: str) -> dict | None:
        """Descriptor for the first manifest triplet this rater hasn't voted on."""
        if not rater_id:
            raise StudyError("rater id required")
        with self._lock:
            eff = self.effective_votes()
            voted = {tid for tid, per in eff.items() if rater_id in per}
            for pos, tid in enumerate(self._order):
                if tid in voted:
                    continue
                perm = self.permutation(rater_id, tid)
                self._append_log(
                    {
                        "event": "assign",
                        "rater_id": rater_id,
                        "triplet_id": tid,
                        "perm": perm,
                        "timestamp_ms": _now_ms(),
                    }
                )
                return {
                    "triplet_id": tid,
                    "perm": perm,
                    "position": pos,
                    "progress": {"done": len(voted), "total": len(self._order)},
                }
            return None

    def record_vote(self, vote: VoteRecord) -> None:
        """Append durably; later votes supersede earlier ones per rater."""
        if vote.triplet_id not in self._by_id:
            raise StudyError(f"unknown triplet {vote.triplet_id!r}")
        if vote.choice not in (0, 1):
            raise StudyError("choice must be 0 or 1")
        if not vote.rater_id:
            raise StudyError("rater id required")
        with self._lock:
            self.votes.append(vote)
            self._append_log(
                {
                    "event": "vote",
                    "triplet_id": vote.triplet_id,
                    "rater_id": vote.rater_id,
                    "choice": vote.choice,
                    "timestamp_ms": vote.timestamp_ms,
                }
            )

    def aggregate_labels(self) -> AggregateResult:
        """Majority labels at threshold theta; contested triplets excluded."""
        eff = self.effective_votes()
        result = AggregateResult()
        for tid in self._order:
            per = eff.get(tid, {})
            count0 = sum(1 for v in per.values() if v.choice == 0)
            count1 = len(per) - count0
            total = len(per)
            tally = {"count0": count0, "count1": count1, "total": total}
            if total < self.min_raters:
                result.pending.append(tid)
                tally["status"] = "pending"
            else:
                fraction = max(count0, count1) / total
                tally["fraction"] = fraction
                if fraction >= self.theta:
                    label = 0 if count0 >= count1 else 1
                    result.labels[tid] = label
                    tally["status"] = "labeled"
                    tally["label"] = label
                else:
                    result.excluded.append(tid)
                    tally["status"] = "excluded"
            result.tallies[tid] = tally
        return result

    def export_labels(self, path, sidecar_path=None) -> Manifest:
        """Labeled manifest (excluded/pending omitted) plus vote tallies."""
        agg = self.aggregate_labels()
        records = [
            replace(self._by_id[tid], label=agg.labels[tid])
            for tid in self._order
            if tid in agg.labels
        ]
        settings = dict(self.manifest.settings)
        settings["study"] = {
            "min_raters": self.min_raters,
            "theta": self.theta,
            "labeled": len(records),
            "excluded": len(agg.excluded),
            "pending": len(agg.pending),
        }
        labeled = Manifest(seed=self.manifest.seed, settings=settings, records=records)
        write_manifest(labeled, path)
        if sidecar_path is not None:
            with open(sidecar_path, "w") as fh:
                json.dump(agg.tallies, fh, indent=2, sort_keys=True)
        return labeled


def _now_ms() -> int:
    return int(time.time() * 1000)


# ---------------------------------------------------------------------------
# image assets
# ---------------------------------------------------------------------------


class StudyAssets:
    """Content-hash-addressed PNGs for every triplet in the manifest."""

    def __init__(self, manifest: Manifest, frames_by_scene: dict[str, list[Image]], show_aligned: bool = False):
        from .imagecore import save_image

        self.show_aligned = show_aligned
        self.blobs: dict[str, bytes] = {}
        self.by_triplet: dict[str, dict[str, str]] = {}
        renderer = TripletRenderer(frames_by_scene)
        for rec in manifest.records:
            imgs = renderer.render(rec)
            entry = {}
            for key, img in (
                ("reference", imgs.reference),
                ("candidate0", imgs.pos),
                ("candidate1", imgs.neg),
                ("aligned", imgs.target),
            ):
                buf = io.BytesIO()
                save_image(img, buf)
                data = buf.getvalue()
                name = hashlib.sha256(data).hexdigest()[:20]
                self.blobs[name] = data
                entry[key] = f"/img/{name}.png"
            self.by_triplet[rec.triplet_id] = entry


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------


class _StudyHandler(BaseHTTPRequestHandler):
    server_version = "nariqa-study/1"

    # quiet the default stderr access log
    def log_message(self, fmt, *args):
        pass

    @property
    def state(self) -> StudyState:
        return self.server.study_state

    @property
    def assets(self) -> StudyAssets | None:
        return self.server.study_assets

    def _send_json(self, obj, status=200):
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _descriptor(self, assignment: dict) -> dict:
        tid = assignment["triplet_id"]
        perm = assignment["perm"]
        urls = self.assets.by_triplet.get(tid, {}) if self.assets else {}
        cands = [urls.get("candidate0"), urls.get("candidate1")]
        if perm == SWAP:
            cands = cands[::-1]
        desc = {
            "triplet_id": tid,
            "reference": urls.get("reference"),
            "candidates": cands,
            "perm": perm,
            "progress": assignment["progress"],
        }
        if self.assets is not None and self.assets.show_aligned:
            desc["aligned_reference"] = urls.get("aligned")
        return desc

    def do_GET(self):
        parsed = urlparse(self.path)
        parts = [p for p in parsed.path.split("/") if p]
        try:
            if parsed.path.startswith("/api/v1/next"):
                rater = parse_qs(parsed.query).get("rater", [""])[0]
                if not rater:
                    return self._send_json({"error": "rater parameter required"}, 400)
                assignment = self.state.assign_next(rater)
                if assignment is None:
                    return self._send_json({"done": True})
                return self._send_json(self._descriptor(assignment))
            if len(parts) == 4 and parts[:3] == ["api", "v1", "triplet"]:
                tid = parts[3]
                if tid not in self.state._by_id:
                    return self._send_json({"error": "unknown triplet"}, 404)
                urls = self.assets.by_triplet.get(tid, {}) if self.assets else {}
                return self._send_json({"triplet_id": tid, **urls})
            if parsed.path == "/api/v1/progress":
                agg = self.state.aggregate_labels()
                return self._send_json(
                    {
                        "total": len(self.state._order),
                        "labeled": len(agg.labels),
                        "excluded": len(agg.excluded),
                        "pending": len(agg.pending),
                        "votes": len(self.state.votes),
                    }
                )
            if parsed.path == "/api/v1/export":
                agg = self.state.aggregate_labels()
                return self._send_json(
                    {"labels": agg.labels, "excluded": agg.excluded,
                     "pending": agg.pending, "tallies": agg.tallies}
                )
            if len(parts) == 2 and parts[0] == "img" and parts[1].endswith(".png"):
                name = parts[1][:-4]
                blob = self.assets.blobs.get(name) if self.assets else None
                if blob is None:
                    self.send_response(404)
                    self.end_headers()
                    return None
                self.send_response(200)
                self.send_header("Content-Type", "image/png")
                self.send_header("Content-Length", str(len(blob)))
                self.end_headers()
                self.wfile.write(blob)
                return None
            return self._serve_static(parsed.path)
        except StudyError as exc:
            return self._send_json({"error": str(exc)}, 400)

    def _serve_static(self, path):
        ui_dir = getattr(self.server, "ui_dir", None)
        if ui_dir is None:
            return self._send_json({"error": "not found"}, 404)
        rel = "index.html" if path in ("", "/") else path.lstrip("/")
        full = os.path.realpath(os.path.join(ui_dir, rel))
        if not full.startswith(os.path.realpath(ui_dir)) or not os.path.isfile(full):
            return self._send_json({"error": "not found"}, 404)
        ctype = {
            ".html": "text/html",
            ".js": "application/javascript",
            ".css": "text/css",
            ".map": "application/json",
        }.get(os.path.splitext(full)[1], "application/octet-stream")
        with open(full, "rb") as fh:
            body = fh.read()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
        return None

    def do_POST(self):
        parsed = urlparse(self.path)
        if parsed.path != "/api/v1/vote":
            return self._send_json({"error": "not found"}, 404)
        try:
            length = int(self.headers.get("Content-Length", "0"))
            obj = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError):
            return self._send_json({"error": "malformed body"}, 400)
        try:
            tid = obj["triplet_id"]
            rater = obj["rater_id"]
            choice = int(obj["choice"])
        except (KeyError, TypeError, ValueError):
            return self._send_json({"error": "missing or malformed fields"}, 400)
        perm = obj.get("perm")
        if perm is not None and perm != self.state.permutation(rater, tid):
            return self._send_json({"error": "permutation token mismatch"}, 400)
        vote = VoteRecord(tid, rater, choice, int(obj.get("timestamp_ms", _now_ms())))
        try:
            self.state.record_vote(vote)
        except StudyError as exc:
            return self._send_json({"error": str(exc)}, 400)
        return self._send_json({"ok": True, "triplet_id": tid})


def make_server(
    state: StudyState,
    assets: StudyAssets | None = None,
    port: int = 0,
    ui_dir=None,
) -> ThreadingHTTPServer:
    """Bound but not yet serving; call serve_forever() or run in a thread."""
    server = ThreadingHTTPServer(("127.0.0.1", port), _StudyHandler)
    server.study_state = state
    server.study_assets = assets
    server.ui_dir = str(ui_dir) if ui_dir is not None else None
    return server
