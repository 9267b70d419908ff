/**
 * Explorer view state and the ablation workflow around it.
 *
 * The state is plain serializable data; every mutation that affects the
 * prediction pair re-issues an ablation request, and a newer request
 * always cancels the pending one, so the displayed pair never mixes
 * epochs of interaction.
 */

import { AblatePayload, ApiClient, SegmentMaskSelection } from "./api.js";

export type AblationMode = "rerun" | "frozen";

export interface PredictionPair {
    original: number;
    ablated: number;
    delta: number;
    linearDelta: number | null;
    exchangeId: number;
}

export interface ViewState {
    recordId: string | null;
    recordLength: number;
    classIndex: number | null;
    window: number;
    stride: number;
    topK: number;
    leadMask: number[];
    segments: SegmentMaskSelection[];
    ablationMode: AblationMode;
    prediction: PredictionPair | null;
}

export function initialState(): ViewState {
    return {
        recordId: null,
        recordLength: 0,
        classIndex: null,
        window: 125,
        stride: 67,
        topK: 5,
        leadMask: [],
        segments: [],
        ablationMode: "rerun",
        prediction: null,
    };
}

export function selectRecord(state: ViewState, recordId: string, length: number): ViewState {
    return { ...initialState(), recordId, recordLength: length,
             window: Math.min(state.window, length), stride: state.stride,
             topK: state.topK, ablationMode: state.ablationMode };
}

export function setWindowStride(state: ViewState, window: number, stride: number): ViewState {
    if (window < 1 || stride < 1 || window > state.recordLength) {
        throw new Error(`window ${window} / stride ${stride} invalid for L=${state.recordLength}`);
    }
    return { ...state, window, stride };
}

export function toggleLead(state: ViewState, lead: number): ViewState {
    const leadMask = state.leadMask.includes(lead)
        ? state.leadMask.filter((l) => l !== lead)
        : [...state.leadMask, lead].sort((a, b) => a - b);
    return { ...state, leadMask };
}

/** Snap an arbitrary sample range onto the current stride grid. */
export function snapToGrid(state: ViewState, from: number, to: number): { start: number; end: number } {
    const start = Math.max(0, Math.floor(from / state.stride) * state.stride);
    const rawEnd = Math.max(start + state.window, Math.ceil(to / state.stride) * state.stride);
    const end = Math.min(state.recordLength, rawEnd);
    return { start, end };
}

export function addSegment(state: ViewState, from: number, to: number,
                           lead: number | null = null): ViewState {
    const { start, end } = snapToGrid(state, from, to);
    if (end <= start) {
        return state;
    }
    return { ...state, segments: [...state.segments, { lead, start, end }] };
}

export function clearMasks(state: ViewState): ViewState {
    return { ...state, leadMask: [], segments: [] };
}

export function hasMask(state: ViewState): boolean {
    return state.leadMask.length > 0 || state.segments.length > 0;
}

export function serializeState(state: ViewState): string {
    return JSON.stringify(state);
}

export function restoreState(text: string): ViewState {
    const parsed = JSON.parse(text) as ViewState;
    return { ...initialState(), ...parsed };
}

/**
 * Issues ablation requests and keeps only the latest response. Older
 * in-flight requests are aborted the moment a newer one starts.
 */
export class AblationRunner {
    private controller: AbortController | null = null;
    private generation = 0;

    constructor(private readonly api: ApiClient) {}

    async run(state: ViewState): Promise<PredictionPair | null> {
        if (!state.recordId) {
            return null;
        }
        this.controller?.abort();
        const controller = new AbortController();
        this.controller = controller;
        const generation = ++this.generation;
        const { payload, exchangeId } = await this.api.ablate({
            id: state.recordId,
            lead_mask: state.leadMask,
            segments: state.segments,
            mode: state.ablationMode,
            k: state.classIndex,
        }, controller.signal);
        if (generation !== this.generation) {
            return null; // a newer request superseded this one
        }
        return toPredictionPair(payload, exchangeId);
    }
}

export function toPredictionPair(payload: AblatePayload, exchangeId: number): PredictionPair {
    return {
        original: payload.p_original,
        ablated: payload.p_ablated,
        delta: payload.delta,
        linearDelta: payload.linear_delta ?? null,
        exchangeId,
    };
}

/** The three aggregation presets rendered side by side. */
export const COMPARE_PRESETS: ReadonlyArray<{ window: number; stride: number }> = [
    { window: 125, stride: 67 },
    { window: 10, stride: 5 },
    { window: 2, stride: 1 },
];
