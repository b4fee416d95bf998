#!/usr/bin/env python3
"""Drive the study server headlessly with scripted raters.

Builds a small synthetic manifest, starts the HTTP server, sends votes from
simulated raters through the JSON API exactly as the browser UI would
(including the left/right permutation translation), exports the labeled
manifest, and scores a scripted 2AFC decision rule against the exported
labels.

    python scripts/simulate_study.py --out-dir runs/study --raters 5
"""

import argparse
import json
import os
import sys
import threading
import urllib.request

from nariqa.config import RunConfig
from nariqa.corpus import build_triplets, merge_manifests, write_manifest
from nariqa.evalkit import two_afc_accuracy
from nariqa.score import Decision
from nariqa.studysrv import StudyState, make_server
from nariqa.synth import make_scene


def api(port, path, payload=None):
    url = f"http://127.0.0.1:{port}{path}"
    if payload is None:
        with urllib.request.urlopen(url) as resp:
            return json.loads(resp.read())
    req = urllib.request.Request(
        url, data=json.dumps(payload).encode(), headers={"Content-Type": "application/json"},
        method="POST",
    )
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--raters", type=int, default=5)
    parser.add_argument("--triplets", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)

    frames = make_scene("study", 21, h=48, w=48, seed=args.seed)
    manifest = build_triplets(frames, "study", seed=args.seed, per_target=1)
    manifest.records = manifest.records[: args.triplets]
    manifest_path = os.path.join(args.out_dir, "manifest.jsonl")
    write_manifest(manifest, manifest_path)

    log_path = os.path.join(args.out_dir, "votes.jsonl")
    state = StudyState(manifest, log_path=log_path, seed=args.seed)
    server = make_server(state)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()

    # Scripted ground truth: the lighter distortion (canonical 0) is better;
    # one rater in five dissents on every third triplet.
    for r in range(args.raters):
        rater = f"sim-rater-{r}"
        while True:
            desc = api(port, f"/api/v1/next?rater={rater}")
            if desc.get("done"):
                break
            idx = int(desc["triplet_id"].rsplit(":", 2)[-2])
            truth = 0
            choice = 1 if (r == args.raters - 1 and idx % 3 == 0) else truth
            # translate canonical -> presented side and back, like the UI
            side = choice if desc["perm"] == "identity" else 1 - choice
            canonical = side if desc["perm"] == "identity" else 1 - side
            api(port, "/api/v1/vote", {
                "triplet_id": desc["triplet_id"],
                "rater_id": rater,
                "choice": canonical,
                "perm": desc["perm"],
            })

    progress = api(port, "/api/v1/progress")
    server.shutdown()
    state.close()

    labeled_path = os.path.join(args.out_dir, "labeled.jsonl")
    sidecar = os.path.join(args.out_dir, "tallies.json")
    labeled = state.export_labels(labeled_path, sidecar)

    decisions = [Decision(0) for _ in labeled.records]  # scripted scorer: always 0
    labels = [rec.label for rec in labeled.records]
    report = two_afc_accuracy(decisions, labels) if labeled.records else None

    print(f"votes recorded:   {progress['votes']}")
    print(f"labeled:          {len(labeled.records)} / {len(manifest.records)}")
    if report:
        print(f"scripted scorer:  accuracy {report.overall:.4f}")
    print(f"outputs:          {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
