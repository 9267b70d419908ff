"""Command-line lifecycle: synth, train, eval, attribute, ablate, serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .attribution import (
    AblationRequest,
    SegmentMask,
    ablate,
    ablation_payload,
    attribution_export,
    aggregate_segments,
    heatmap_matrix,
    impact_map,
)
from .data import (
    DataError,
    SynthSpec,
    curated_split,
    generate_synthetic,
    load_manifest,
    write_manifest,
    zscore,
)
from .model import ImnConfig, ImnModel, load_checkpoint
from .training import TrainConfig, evaluate, fit

TASK_TARGETS = {"cd": "CD", "hyp": "HYP", "mi": "MI", "sttc": "STTC"}


class CliError(RuntimeError):
    pass


def _parse_leads(text: str) -> tuple[int, ...]:
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as e:
        raise CliError(f"bad lead list '{text}': {e}") from e


def _parse_segments(text: str) -> tuple[SegmentMask, ...]:
    """Comma-separated 'start:end' (all leads) or 'lead:start:end' ranges."""
    if not text:
        return ()
    masks = []
    for part in text.split(","):
        bits = part.split(":")
        try:
            if len(bits) == 2:
                masks.append(SegmentMask(start=int(bits[0]), end=int(bits[1])))
            elif len(bits) == 3:
                masks.append(SegmentMask(lead=int(bits[0]), start=int(bits[1]),
                                         end=int(bits[2])))
            else:
                raise ValueError("expected start:end or lead:start:end")
        except ValueError as e:
            raise CliError(f"bad segment '{part}': {e}") from e
    return tuple(masks)


def _load_normalized(manifest_path) -> list:
    return [zscore(rec) for rec in load_manifest(manifest_path)]


def _find_record(records, record_id: str):
    for rec in records:
        if rec.id == record_id:
            return rec
    raise CliError(f"record '{record_id}' not found in manifest")


def _checkpoint_guard(model: ImnModel, formulation: str | None) -> None:
    if formulation is not None and formulation != model.formulation:
        raise CliError(
            f"model_mismatch: checkpoint is {model.formulation} "
            f"(K={model.config.num_outputs}) but --formulation asked for {formulation}")


def cmd_synth(args) -> int:
    spec = SynthSpec(
        seed=args.seed, num_per_class=args.num_per_class,
        signal_length=args.freq_len, fs=args.fs,
        beat_rate_bpm=args.beat_rate, noise_std=args.noise_std,
        anomaly_leads=_parse_leads(args.anomaly_leads),
        anomaly_onset=args.onset, anomaly_duration=args.duration,
        anomaly_amplitude=args.anomaly_amplitude,
    )
    records = generate_synthetic(spec)
    path = write_manifest(records, args.out)
    print(f"wrote {len(records)} records to {path}")
    return 0


def cmd_train(args) -> int:
    records = _load_normalized(args.manifest)
    splits = curated_split(records, TASK_TARGETS[args.task])
    if not splits["train"]:
        raise CliError("no training records after curation")
    first = splits["train"].items[0][0]
    if args.freq_len is not None and args.freq_len != first.length:
        raise CliError(f"--freq-len {args.freq_len} does not match records (L={first.length})")
    config = ImnConfig(
        num_leads=first.num_leads, signal_length=first.length,
        num_outputs=1 if args.formulation == "binary" else 2,
        lambda_l1=args.lambda_l1,
    )
    model = ImnModel(config, variant=args.variant, seed=args.seed)
    train_config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        lambda_l1=args.lambda_l1, seed=args.seed, formulation=args.formulation,
        patience=args.patience, checkpoint_cadence=args.checkpoint_cadence,
    )
    result = fit(model, splits["train"], splits["val"], train_config,
                 checkpoint_path=args.checkpoint, history_path=args.history)
    print(f"best val AUROC {result.best_val_auroc:.4f} at epoch {result.best_epoch}; "
          f"checkpoint -> {args.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    _checkpoint_guard(model, args.formulation)
    records = _load_normalized(args.manifest)
    splits = curated_split(records, TASK_TARGETS[args.task])
    dataset = splits[args.split]
    if not dataset:
        raise CliError(f"{args.split} split is empty after curation")
    report = evaluate(model, dataset, threshold=args.threshold)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_attribute(args) -> int:
    model = load_checkpoint(args.checkpoint)
    records = _load_normalized(args.manifest)
    rec = _find_record(records, args.record)
    export = attribution_export(model, rec, k=args.k, window=args.window,
                                stride=args.stride, top_k=args.top_k, sign=args.sign)
    text = json.dumps(export, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    if args.heatmap_csv:
        output = model.forward(rec.signal)
        imap = impact_map(rec.signal, output,
                          None if model.config.num_outputs == 1 else export["k"],
                          record_id=rec.id)
        grid = aggregate_segments(imap, args.window, args.stride)
        matrix = heatmap_matrix(grid)
        lines = [",".join(repr(v) for v in row) for row in matrix.tolist()]
        Path(args.heatmap_csv).write_text("\n".join(lines) + "\n")
    print(text)
    return 0


def cmd_ablate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    records = _load_normalized(args.manifest)
    rec = _find_record(records, args.record)
    request = AblationRequest(
        record_id=rec.id, lead_mask=_parse_leads(args.leads),
        segments=_parse_segments(args.segments), mode=args.mode,
        class_index=args.k,
    )
    result = ablate(model, rec, request)
    print(json.dumps(ablation_payload(result), sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    serve(checkpoint_path=args.checkpoint, manifest_path=args.manifest,
          host=args.host, port=args.port, ui_dir=args.ui_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imn",
        description="Train, evaluate, explain, and serve the weight-generating classifier.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--num-per-class", type=int, default=100)
    synth.add_argument("--freq-len", type=int, default=256)
    synth.add_argument("--fs", type=float, default=100.0)
    synth.add_argument("--beat-rate", type=float, default=75.0)
    synth.add_argument("--noise-std", type=float, default=0.1)
    synth.add_argument("--anomaly-leads", default="2,3,4")
    synth.add_argument("--onset", type=float, default=0.5)
    synth.add_argument("--duration", type=float, default=0.1)
    synth.add_argument("--anomaly-amplitude", type=float, default=0.5)
    synth.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", help="fit a model on a curated binary task")
    train.add_argument("--manifest", required=True)
    train.add_argument("--task", choices=sorted(TASK_TARGETS), required=True)
    train.add_argument("--formulation", choices=["binary", "categorical"],
                       default="binary")
    train.add_argument("--variant", choices=["transnet", "direct"], default="transnet")
    train.add_argument("--freq-len", type=int, default=None,
                       help="expected signal length; validated against the data")
    train.add_argument("--lambda", dest="lambda_l1", type=float, default=1e-4)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--epochs", type=int, default=30)
    train.add_argument("--batch-size", type=int, default=32)
    train.add_argument("--lr", type=float, default=1e-3)
    train.add_argument("--patience", type=int, default=0)
    train.add_argument("--checkpoint-cadence", type=int, default=0)
    train.add_argument("--checkpoint", required=True)
    train.add_argument("--history", default=None)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score a checkpoint on a curated split")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--task", choices=sorted(TASK_TARGETS), required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--formulation", choices=["binary", "categorical"], default=None)
    ev.add_argument("--split", choices=["train", "val", "test"], default="test")
    ev.add_argument("--threshold", type=float, default=0.5)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)

    attr = sub.add_parser("attribute", help="export segment contributions for a record")
    attr.add_argument("--manifest", required=True)
    attr.add_argument("--checkpoint", required=True)
    attr.add_argument("--record", required=True)
    attr.add_argument("--k", type=int, default=None)
    attr.add_argument("--window", type=int, required=True)
    attr.add_argument("--stride", type=int, required=True)
    attr.add_argument("--top-k", type=int, default=5)
    attr.add_argument("--sign", choices=["positive", "negative", "absolute"],
                      default="positive")
    attr.add_argument("--out", default=None)
    attr.add_argument("--heatmap-csv", default=None)
    attr.set_defaults(func=cmd_attribute)

    abl = sub.add_parser("ablate", help="mask leads/segments and re-score")
    abl.add_argument("--manifest", required=True)
    abl.add_argument("--checkpoint", required=True)
    abl.add_argument("--record", required=True)
    abl.add_argument("--leads", default="")
    abl.add_argument("--segments", default="",
                     help="comma-separated start:end or lead:start:end")
    abl.add_argument("--mode", choices=["rerun", "frozen"], default="rerun")
    abl.add_argument("--k", type=int, default=None)
    abl.set_defaults(func=cmd_ablate)

    srv = sub.add_parser("serve", help="serve the HTTP API for the explorer")
    srv.add_argument("--checkpoint", required=True)
    srv.add_argument("--manifest", required=True)
    srv.add_argument("--host", default=os.environ.get("IMN_HOST", "127.0.0.1"))
    srv.add_argument("--port", type=int,
                     default=int(os.environ.get("IMN_PORT", "8750")))
    srv.add_argument("--ui-dir", default=None,
                     help="optional directory of static explorer files")
    srv.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DataError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
