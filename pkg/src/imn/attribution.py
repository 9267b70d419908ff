"""Exact per-sample attribution and counterfactual ablation.

The readout is linear in the input, so the contribution of every sample
is the plain product of its generated weight and its value. Everything
here works in float64 on detached arrays: the exactness checks
(impact sums reproducing logits, frozen-mode deltas) rely on it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import EcgRecord, zscore
from .model import ImnModel, ImnOutput
from .tensor import stable_sigmoid


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class ImpactMap:
    """Signed per-sample contributions W_k * X for one record and class."""

    values: np.ndarray  # (C, L) float64
    class_index: Optional[int]  # None for the binary scalar map
    record_id: str
    bias: float
    logit: float

    def total(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class SegmentGrid:
    """Windowed sums of an impact map on a fixed stride grid."""

    window: int
    stride: int
    starts: tuple[int, ...]
    contributions: np.ndarray  # (C, T) float64

    @property
    def num_segments(self) -> int:
        return self.contributions.shape[1]


@dataclass(frozen=True)
class Contribution:
    lead: int
    segment: int
    start: int
    value: float


@dataclass(frozen=True)
class SegmentMask:
    """[start, end) sample range; lead None applies to every lead."""

    start: int
    end: int
    lead: Optional[int] = None


@dataclass(frozen=True)
class AblationRequest:
    record_id: str
    lead_mask: tuple[int, ...] = ()
    segments: tuple[SegmentMask, ...] = ()
    mode: str = "rerun"  # rerun | frozen
    class_index: Optional[int] = None

    def __post_init__(self):
        if self.mode not in ("rerun", "frozen"):
            raise AttributionError(f"unknown ablation mode '{self.mode}'")


@dataclass(frozen=True)
class AblationResult:
    p_original: float
    p_ablated: float
    delta: float
    logit_original: float
    logit_ablated: float
    linear_delta: Optional[float]  # frozen mode: -sum of masked impact
    masked_samples: int
    class_index: Optional[int]
    ablated_impact: ImpactMap


def impact_map(x: np.ndarray, output: ImnOutput, k: Optional[int] = None,
               record_id: str = "") -> ImpactMap:
    """Elementwise product of the class-k weight map with the input."""
    num_outputs = output.weights.shape[0]
    if k is None:
        if num_outputs != 1:
            raise AttributionError("class index required for a categorical output")
        idx = 0
    else:
        if not 0 <= k < num_outputs:
            raise AttributionError(f"class index {k} out of range [0, {num_outputs})")
        idx = k
    values = output.weights[idx].astype(np.float64) * np.asarray(x, dtype=np.float64)
    return ImpactMap(
        values=values,
        class_index=None if num_outputs == 1 else idx,
        record_id=record_id,
        bias=float(output.bias[idx]),
        logit=float(output.logits[idx]),
    )


def aggregate_segments(imap: ImpactMap, window: int, stride: int) -> SegmentGrid:
    """Sum the impact map over a sliding window; only full windows count.

    T = floor((L - window) / stride) + 1 segments per lead, signed sums.
    """
    c, length = imap.values.shape
    if not 1 <= window <= length:
        raise AttributionError(f"window {window} outside [1, {length}]")
    if stride < 1:
        raise AttributionError(f"stride must be >= 1, got {stride}")
    starts = tuple(range(0, length - window + 1, stride))
    contributions = np.stack(
        [imap.values[:, s:s + window].sum(axis=1) for s in starts], axis=1)
    return SegmentGrid(window=window, stride=stride, starts=starts,
                       contributions=contributions)


def top_k_contributors(grid: SegmentGrid, k: int,
                       sign: str = "positive") -> list[Contribution]:
    """Rank segments by contribution; ties break on (lead, segment) ascending."""
    if k < 1:
        raise AttributionError("k must be >= 1")
    if sign not in ("positive", "negative", "absolute"):
        raise AttributionError(f"unknown sign mode '{sign}'")
    cells = [
        Contribution(lead=c, segment=t, start=grid.starts[t],
                     value=float(grid.contributions[c, t]))
        for c in range(grid.contributions.shape[0])
        for t in range(grid.num_segments)
    ]
    if sign == "positive":
        key = lambda cell: (-cell.value, cell.lead, cell.segment)
    elif sign == "negative":
        key = lambda cell: (cell.value, cell.lead, cell.segment)
    else:
        key = lambda cell: (-abs(cell.value), cell.lead, cell.segment)
    return sorted(cells, key=key)[:k]


def heatmap_matrix(grid: SegmentGrid) -> np.ndarray:
    """Per-record normalized intensities in [-1, 1]: sign keeps direction."""
    peak = np.max(np.abs(grid.contributions))
    if peak == 0:
        return np.zeros_like(grid.contributions)
    return grid.contributions / peak


def build_mask(num_leads: int, length: int, lead_mask: Sequence[int],
               segments: Sequence[SegmentMask]) -> np.ndarray:
    """Union of whole-lead and segment masks as a boolean (C, L) array."""
    mask = np.zeros((num_leads, length), dtype=bool)
    for lead in lead_mask:
        if not 0 <= lead < num_leads:
            raise AttributionError(f"lead {lead} out of range [0, {num_leads})")
        mask[lead, :] = True
    for seg in segments:
        if not (0 <= seg.start < seg.end <= length):
            raise AttributionError(
                f"segment [{seg.start}, {seg.end}) outside [0, {length})")
        if seg.lead is None:
            mask[:, seg.start:seg.end] = True
        else:
            if not 0 <= seg.lead < num_leads:
                raise AttributionError(f"lead {seg.lead} out of range [0, {num_leads})")
            mask[seg.lead, seg.start:seg.end] = True
    return mask


def _positive_class(model: ImnModel, logits: np.ndarray,
                    requested: Optional[int]) -> int:
    if model.config.num_outputs == 1:
        return 0
    if requested is not None:
        if not 0 <= requested < model.config.num_outputs:
            raise AttributionError(
                f"class index {requested} out of range [0, {model.config.num_outputs})")
        return requested
    return int(np.argmax(logits))


def _class_probability(model: ImnModel, logits: np.ndarray, k: int) -> float:
    if model.config.num_outputs == 1:
        return float(stable_sigmoid(np.asarray(logits[0], dtype=np.float64)))
    z = logits.astype(np.float64)
    e = np.exp(z - z.max())
    return float(e[k] / e.sum())


def ablate(model: ImnModel, record: EcgRecord, request: AblationRequest) -> AblationResult:
    """Zero out masked samples (post-normalization) and re-score the record.

    rerun mode feeds the masked signal back through the whole hypernetwork,
    so the weight maps are regenerated; frozen mode keeps the original
    W and b and only replays the linear readout, in which case the logit
    change is exactly minus the masked impact sum (reported as
    ``linear_delta``).
    """
    if not record.normalized:
        record = zscore(record)
    x = record.signal.astype(np.float64)
    mask = build_mask(record.num_leads, record.length, request.lead_mask,
                      request.segments)
    if not mask.any():
        warnings.warn("ablation request masks nothing; delta is zero", stacklevel=2)

    original = model.forward(record.signal)
    k = _positive_class(model, original.logits, request.class_index)
    masked_signal = record.signal.copy()
    masked_signal[mask] = 0.0

    if request.mode == "rerun":
        p_original = _class_probability(model, original.logits, k)
        logit_original = float(original.logits[k])
        ablated = model.forward(masked_signal)
        p_ablated = _class_probability(model, ablated.logits, k)
        logit_ablated = float(ablated.logits[k])
        linear_delta = None
        ablated_map = impact_map(masked_signal, ablated,
                                 None if model.config.num_outputs == 1 else k,
                                 record_id=record.id)
    else:
        # replay the linear readout in float64 on both sides so the delta
        # identity (logit change == -masked impact sum) holds tightly
        w = original.weights.astype(np.float64)
        b = original.bias.astype(np.float64)
        xm = x.copy()
        xm[mask] = 0.0
        logits0 = np.array([np.sum(w[j] * x) + b[j]
                            for j in range(model.config.num_outputs)])
        logits1 = np.array([np.sum(w[j] * xm) + b[j]
                            for j in range(model.config.num_outputs)])
        p_original = _class_probability(model, logits0, k)
        p_ablated = _class_probability(model, logits1, k)
        logit_original = float(logits0[k])
        logit_ablated = float(logits1[k])
        base_map = impact_map(x, original,
                              None if model.config.num_outputs == 1 else k,
                              record_id=record.id)
        linear_delta = -float(base_map.values[mask].sum())
        masked_values = base_map.values.copy()
        masked_values[mask] = 0.0
        ablated_map = ImpactMap(values=masked_values, class_index=base_map.class_index,
                                record_id=record.id, bias=base_map.bias,
                                logit=logit_ablated)

    return AblationResult(
        p_original=p_original,
        p_ablated=p_ablated,
        delta=p_ablated - p_original,
        logit_original=logit_original,
        logit_ablated=logit_ablated,
        linear_delta=linear_delta,
        masked_samples=int(mask.sum()),
        class_index=None if model.config.num_outputs == 1 else k,
        ablated_impact=ablated_map,
    )


def ablation_payload(result: AblationResult) -> dict:
    """JSON-ready ablation outcome shared by the CLI and the HTTP API."""
    payload = {
        "schema_version": 1,
        "p_original": result.p_original,
        "p_ablated": result.p_ablated,
        "delta": result.delta,
        "logit_original": result.logit_original,
        "logit_ablated": result.logit_ablated,
        "masked_samples": result.masked_samples,
        "k": result.class_index,
    }
    if result.linear_delta is not None:
        payload["linear_delta"] = result.linear_delta
    return payload


def attribution_export(model: ImnModel, record: EcgRecord, k: Optional[int],
                       window: int, stride: int, top_k: int = 5,
                       sign: str = "positive") -> dict:
    """JSON-ready attribution payload shared by the CLI and the HTTP API."""
    if not record.normalized:
        record = zscore(record)
    output = model.forward(record.signal)
    idx = _positive_class(model, output.logits, k)
    imap = impact_map(record.signal, output,
                      None if model.config.num_outputs == 1 else idx,
                      record_id=record.id)
    grid = aggregate_segments(imap, window, stride)
    ranked = top_k_contributors(grid, top_k, sign=sign)
    return {
        "schema_version": 1,
        "record_id": record.id,
        "k": imap.class_index,
        "window": window,
        "stride": stride,
        "num_segments": grid.num_segments,
        "segments": [
            {"lead": c, "start": int(grid.starts[t]),
             "value": float(grid.contributions[c, t])}
            for c in range(grid.contributions.shape[0])
            for t in range(grid.num_segments)
        ],
        "top_k": [
            {"lead": cell.lead, "segment": cell.segment, "start": cell.start,
             "value": cell.value}
            for cell in ranked
        ],
        "logit": imap.logit,
        "bias": imap.bias,
        "probability": _class_probability(model, output.logits, idx),
    }
