"""Builds the frontend's cross-interface fixtures.

Trains a small deterministic model, then drives BOTH the real HTTP
service and the real CLI for ten scripted (record, mask) ablation pairs
plus the three compare-panel attribution presets. The explorer's test
suite replays the recorded API responses through a stub fetch and
asserts the numbers it renders against the CLI outputs.

Usage: python scripts/gen_ui_fixtures.py [out.json]
"""

from __future__ import annotations

import json
import subprocess
import sys
import tempfile
import urllib.request
from pathlib import Path

from imn.data import SynthSpec, curated_split, generate_synthetic, write_manifest, zscore
from imn.model import ImnConfig, ImnModel
from imn.server import build_state, start_background
from imn.training import TrainConfig, fit

PRESETS = ((125, 67), (10, 5), (2, 1))

MASKS = [
    {"lead_mask": [2, 3, 4], "segments": [], "mode": "rerun"},
    {"lead_mask": [], "segments": [{"start": 130, "end": 156}], "mode": "rerun"},
    {"lead_mask": [0], "segments": [{"lead": 5, "start": 0, "end": 64}], "mode": "rerun"},
    {"lead_mask": [], "segments": [{"lead": 2, "start": 104, "end": 182}], "mode": "frozen"},
    {"lead_mask": [1, 7], "segments": [], "mode": "frozen"},
]


def http_post(port: int, path: str, payload: dict) -> dict:
    req = urllib.request.Request(
        f"http://127.0.0.1:{port}{path}", data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


def http_get(port: int, path: str) -> dict:
    with urllib.request.urlopen(f"http://127.0.0.1:{port}{path}") as resp:
        return json.loads(resp.read())


def cli_ablate(manifest: Path, checkpoint: Path, record_id: str, mask: dict) -> dict:
    argv = [sys.executable, "-m", "imn.cli", "ablate",
            "--manifest", str(manifest), "--checkpoint", str(checkpoint),
            "--record", record_id, "--mode", mask["mode"]]
    if mask["lead_mask"]:
        argv += ["--leads", ",".join(str(l) for l in mask["lead_mask"])]
    if mask["segments"]:
        parts = []
        for seg in mask["segments"]:
            if seg.get("lead") is None:
                parts.append(f"{seg['start']}:{seg['end']}")
            else:
                parts.append(f"{seg['lead']}:{seg['start']}:{seg['end']}")
        argv += ["--segments", ",".join(parts)]
    proc = subprocess.run(argv, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(out_path: Path) -> None:
    workdir = Path(tempfile.mkdtemp(prefix="ui-fixtures-"))
    spec = SynthSpec(seed=424, num_per_class=40, signal_length=256,
                     anomaly_leads=(2, 3, 4), anomaly_onset=130 / 256,
                     anomaly_duration=26 / 256, anomaly_amplitude=0.5,
                     noise_std=0.4, id_prefix="fix")
    records = generate_synthetic(spec)
    manifest = write_manifest(records, workdir / "data")
    splits = curated_split([zscore(r) for r in records], "MI")
    model = ImnModel(ImnConfig(signal_length=256), seed=424)
    checkpoint = workdir / "model.ckpt"
    fit(model, splits["train"], splits["val"],
        TrainConfig(epochs=2, batch_size=16, seed=424), checkpoint_path=checkpoint)

    state = build_state(checkpoint, manifest)
    server, port = start_background(state)
    try:
        listing = http_get(port, "/records")
        test_ids = [r.id for r in records if r.fold == 10]
        pair_ids = (test_ids * 3)[:10]  # ten scripted pairs over the held-out fold
        ablations = []
        for i, record_id in enumerate(pair_ids):
            mask = MASKS[i % len(MASKS)]
            request = {"id": record_id, **mask}
            api = http_post(port, "/ablate", request)
            cli = cli_ablate(manifest, checkpoint, record_id, mask)
            ablations.append({"request": request, "api": api, "cli": cli})

        signal_id = pair_ids[0]
        signal = http_get(port, f"/records/{signal_id}/signal")
        attributions = []
        for window, stride in PRESETS:
            request = {"id": signal_id, "window": window, "stride": stride}
            attributions.append({"request": request,
                                 "payload": http_post(port, "/attribute", request)})
        predict = http_post(port, "/predict", {"id": signal_id})

        # a positive-predicted record with its top positive segment masked
        pos_id = next(r.id for r in records
                      if r.fold == 10 and "MI" in r.labels
                      and http_post(port, "/predict", {"id": r.id})["probability"] >= 0.5)
        attr = http_post(port, "/attribute",
                         {"id": pos_id, "window": 26, "stride": 26, "sign": "positive"})
        top = attr["top_k"][0]
        top_request = {"id": pos_id, "lead_mask": [], "mode": "rerun",
                       "segments": [{"lead": top["lead"], "start": top["start"],
                                     "end": top["start"] + 26}]}
        top1 = {
            "attribution": {"request": {"id": pos_id, "window": 26, "stride": 26,
                                        "sign": "positive"}, "payload": attr},
            "request": top_request,
            "api": http_post(port, "/ablate", top_request),
            "cli": cli_ablate(manifest, checkpoint, pos_id, {
                "lead_mask": [], "mode": "rerun",
                "segments": top_request["segments"]}),
        }
    finally:
        server.shutdown()
        server.server_close()

    fixtures = {
        "records": listing,
        "signal": signal,
        "predict": {"request": {"id": signal_id}, "payload": predict},
        "attributions": attributions,
        "ablations": ablations,
        "top1": top1,
    }
    out_path.write_text(json.dumps(fixtures, sort_keys=True, indent=1) + "\n")
    print(f"wrote {out_path} ({len(ablations)} ablation pairs)")


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else \
        Path(__file__).resolve().parent.parent / "frontend" / "src" / "__tests__" / "fixtures.json"
    main(target)
