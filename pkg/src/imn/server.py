"""JSON-over-HTTP service exposing one checkpoint to the explorer UI.

The loaded model and records are immutable; every request is computed
in isolation, so identical requests against one checkpoint return
byte-identical responses. All non-2xx responses carry exactly one
error object {code, message, detail}.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

import numpy as np

from .attribution import (
    AblationRequest,
    AttributionError,
    SegmentMask,
    ablate,
    ablation_payload,
    attribution_export,
)
from .data import DataError, EcgRecord, load_manifest, zscore
from .model import ImnModel, ModelError, load_checkpoint
from .tensor import TensorError

SCHEMA_VERSION = 1

_STATUS = {
    "bad_request": 400,
    "not_found": 404,
    "model_mismatch": 409,
    "internal": 500,
}

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".map": "application/json",
    ".ico": "image/x-icon",
}


class ApiFault(Exception):
    def __init__(self, code: str, message: str, detail: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message
        self.detail = detail


@dataclass(frozen=True)
class ServiceState:
    model: ImnModel
    records: dict[str, EcgRecord]  # normalized, keyed by id
    ui_dir: Optional[Path]


def build_state(checkpoint_path, manifest_path, ui_dir=None) -> ServiceState:
    model = load_checkpoint(checkpoint_path)
    records = {}
    for rec in load_manifest(manifest_path):
        normalized = zscore(rec)
        if normalized.num_leads != model.config.num_leads \
                or normalized.length != model.config.signal_length:
            raise ModelError(
                f"record {rec.id} shape ({normalized.num_leads}, {normalized.length}) "
                f"does not match the checkpoint")
        records[rec.id] = normalized
    return ServiceState(model=model, records=records,
                        ui_dir=Path(ui_dir) if ui_dir else None)


def _require_fields(body: dict, allowed: set[str], required: set[str]) -> None:
    unknown = set(body) - allowed
    if unknown:
        raise ApiFault("bad_request", f"unknown request field(s): {sorted(unknown)}")
    missing = required - set(body)
    if missing:
        raise ApiFault("bad_request", f"missing request field(s): {sorted(missing)}")
    version = body.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ApiFault("bad_request", f"unsupported schema_version {version!r}")


def _get_record(state: ServiceState, record_id) -> EcgRecord:
    if not isinstance(record_id, str):
        raise ApiFault("bad_request", "record id must be a string")
    rec = state.records.get(record_id)
    if rec is None:
        raise ApiFault("not_found", f"unknown record id '{record_id}'")
    return rec


def _int_field(body: dict, name: str, default=None, minimum=None):
    value = body.get(name, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ApiFault("bad_request", f"field '{name}' must be an integer")
    if minimum is not None and value < minimum:
        raise ApiFault("bad_request", f"field '{name}' must be >= {minimum}")
    return value


def handle_records(state: ServiceState) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "records": [
            {"id": rec.id, "labels": sorted(rec.labels), "fold": rec.fold,
             "L": rec.length, "fs": rec.fs}
            for rec in sorted(state.records.values(), key=lambda r: r.id)
        ],
    }


def handle_signal(state: ServiceState, record_id: str) -> dict:
    rec = _get_record(state, record_id)
    return {
        "schema_version": SCHEMA_VERSION,
        "id": rec.id,
        "fs": rec.fs,
        "labels": sorted(rec.labels),
        "notes": rec.notes,
        "values": rec.signal.astype(float).tolist(),
    }


def handle_predict(state: ServiceState, body: dict) -> dict:
    _require_fields(body, {"schema_version", "id", "signal"}, set())
    has_id = "id" in body
    has_signal = "signal" in body
    if has_id == has_signal:
        raise ApiFault("bad_request", "provide exactly one of 'id' or 'signal'")
    if has_id:
        rec = _get_record(state, body["id"])
        signal = rec.signal
    else:
        try:
            arr = np.asarray(body["signal"], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ApiFault("bad_request", f"signal is not numeric: {e}") from e
        cfg = state.model.config
        if arr.shape != (cfg.num_leads, cfg.signal_length):
            raise ApiFault(
                "bad_request",
                f"signal shape {list(arr.shape)} != [{cfg.num_leads}, {cfg.signal_length}]")
        if not np.isfinite(arr).all():
            raise ApiFault("bad_request", "signal contains non-finite values")
        # inline signals arrive raw; normalize them the same way training data is
        raw = EcgRecord(id="inline", signal=arr.astype(np.float32), fs=0.0,
                        labels=frozenset(), fold=1)
        signal = zscore(raw).signal
    output = state.model.forward(signal)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "logits": [float(v) for v in output.logits],
        "bias": [float(v) for v in output.bias],
        "normalized": True,
    }
    if state.model.config.num_outputs == 1:
        payload["probability"] = float(output.probabilities)
    else:
        probs = [float(v) for v in output.probabilities]
        payload["probabilities"] = probs
        positive = 1 if state.model.config.num_outputs == 2 else int(np.argmax(probs))
        payload["probability"] = probs[positive]
    return payload


def handle_attribute(state: ServiceState, body: dict) -> dict:
    _require_fields(body, {"schema_version", "id", "k", "window", "stride",
                           "top_k", "sign"}, {"id", "window", "stride"})
    rec = _get_record(state, body["id"])
    window = _int_field(body, "window", minimum=1)
    stride = _int_field(body, "stride", minimum=1)
    top_k = _int_field(body, "top_k", default=5, minimum=1)
    k = _int_field(body, "k")
    sign = body.get("sign", "positive")
    if sign not in ("positive", "negative", "absolute"):
        raise ApiFault("bad_request", f"unknown sign '{sign}'")
    if window > rec.length:
        raise ApiFault("bad_request",
                       f"window {window} exceeds signal length {rec.length}")
    try:
        return dict(attribution_export(state.model, rec, k=k, window=window,
                                       stride=stride, top_k=top_k, sign=sign))
    except AttributionError as e:
        raise ApiFault("bad_request", str(e)) from e


def handle_ablate(state: ServiceState, body: dict) -> dict:
    _require_fields(body, {"schema_version", "id", "lead_mask", "segments",
                           "mode", "k"}, {"id"})
    rec = _get_record(state, body["id"])
    lead_mask = body.get("lead_mask", [])
    if not isinstance(lead_mask, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in lead_mask):
        raise ApiFault("bad_request", "lead_mask must be a list of integers")
    raw_segments = body.get("segments", [])
    if not isinstance(raw_segments, list):
        raise ApiFault("bad_request", "segments must be a list")
    segments = []
    for seg in raw_segments:
        if not isinstance(seg, dict):
            raise ApiFault("bad_request", "each segment must be an object")
        unknown = set(seg) - {"lead", "start", "end"}
        if unknown:
            raise ApiFault("bad_request", f"unknown segment field(s): {sorted(unknown)}")
        if "start" not in seg or "end" not in seg:
            raise ApiFault("bad_request", "segments need 'start' and 'end'")
        lead = seg.get("lead")
        if lead is not None and (isinstance(lead, bool) or not isinstance(lead, int)):
            raise ApiFault("bad_request", "segment lead must be an integer")
        if any(isinstance(seg[f], bool) or not isinstance(seg[f], int)
               for f in ("start", "end")):
            raise ApiFault("bad_request", "segment bounds must be integers")
        segments.append(SegmentMask(start=seg["start"], end=seg["end"], lead=lead))
    mode = body.get("mode", "rerun")
    k = _int_field(body, "k")
    try:
        request = AblationRequest(record_id=rec.id, lead_mask=tuple(lead_mask),
                                  segments=tuple(segments), mode=mode, class_index=k)
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = ablate(state.model, rec, request)
    except AttributionError as e:
        raise ApiFault("bad_request", str(e)) from e
    return ablation_payload(result)


def make_handler(state: ServiceState):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send_json(self, payload: dict, status: int = 200) -> None:
            body = json.dumps(payload, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_fault(self, fault: ApiFault) -> None:
            self._send_json(
                {"code": fault.code, "message": fault.message, "detail": fault.detail},
                status=_STATUS.get(fault.code, 500),
            )

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length) if length else b""
            if not raw:
                raise ApiFault("bad_request", "request body is required")
            try:
                body = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise ApiFault("bad_request", f"body is not valid JSON: {e}") from e
            if not isinstance(body, dict):
                raise ApiFault("bad_request", "body must be a JSON object")
            return body

        def _serve_static(self, path: str) -> None:
            if state.ui_dir is None:
                raise ApiFault("not_found", f"no route for GET {path}")
            rel = path.lstrip("/") or "index.html"
            target = (state.ui_dir / rel).resolve()
            if not str(target).startswith(str(state.ui_dir.resolve())) \
                    or not target.is_file():
                raise ApiFault("not_found", f"no file for GET {path}")
            body = target.read_bytes()
            self.send_response(200)
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            try:
                path = self.path.split("?")[0]
                if path == "/records":
                    self._send_json(handle_records(state))
                elif path.startswith("/records/") and path.endswith("/signal"):
                    record_id = path[len("/records/"):-len("/signal")]
                    self._send_json(handle_signal(state, record_id))
                else:
                    self._serve_static(path)
            except ApiFault as fault:
                self._send_fault(fault)
            except Exception as e:  # pragma: no cover - defensive
                self._send_fault(ApiFault("internal", "unexpected failure", str(e)))

        def do_POST(self):
            try:
                body = self._read_body()
                if self.path == "/predict":
                    self._send_json(handle_predict(state, body))
                elif self.path == "/attribute":
                    self._send_json(handle_attribute(state, body))
                elif self.path == "/ablate":
                    self._send_json(handle_ablate(state, body))
                else:
                    raise ApiFault("not_found", f"no route for POST {self.path}")
            except ApiFault as fault:
                self._send_fault(fault)
            except (DataError, ModelError, TensorError) as e:
                self._send_fault(ApiFault("bad_request", str(e)))
            except Exception as e:  # pragma: no cover - defensive
                self._send_fault(ApiFault("internal", "unexpected failure", str(e)))

    return Handler


def create_server(state: ServiceState, host: str = "127.0.0.1",
                  port: int = 0) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), make_handler(state))
    server.daemon_threads = True
    return server


def serve(checkpoint_path, manifest_path, host: str, port: int, ui_dir=None) -> None:
    state = build_state(checkpoint_path, manifest_path, ui_dir=ui_dir)
    server = create_server(state, host=host, port=port)
    print(f"serving {len(state.records)} records on http://{host}:{server.server_port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def start_background(state: ServiceState, host: str = "127.0.0.1") -> tuple[ThreadingHTTPServer, int]:
    """Spin up the service on an ephemeral port; used by tests and tooling."""
    server = create_server(state, host=host, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, server.server_port
