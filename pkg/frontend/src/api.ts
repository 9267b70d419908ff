/**
 * Typed client for the model service. Every response is retained in a
 * request log so the UI can prove that each displayed number came from
 * the API rather than from local computation.
 */

export interface RecordSummary {
    id: string;
    labels: string[];
    fold: number;
    L: number;
    fs: number;
}

export interface RecordListing {
    schema_version: number;
    records: RecordSummary[];
}

export interface SignalPayload {
    schema_version: number;
    id: string;
    fs: number;
    labels: string[];
    notes: string;
    values: number[][];
}

export interface PredictPayload {
    schema_version: number;
    probability: number;
    probabilities?: number[];
    logits: number[];
    bias: number[];
    normalized: boolean;
}

export interface SegmentCell {
    lead: number;
    start: number;
    value: number;
}

export interface TopContributor {
    lead: number;
    segment: number;
    start: number;
    value: number;
}

export interface AttributionPayload {
    schema_version: number;
    record_id: string;
    k: number | null;
    window: number;
    stride: number;
    num_segments: number;
    segments: SegmentCell[];
    top_k: TopContributor[];
    logit: number;
    bias: number;
    probability: number;
}

export interface SegmentMaskSelection {
    lead?: number | null;
    start: number;
    end: number;
}

export interface AblateRequest {
    id: string;
    lead_mask?: number[];
    segments?: SegmentMaskSelection[];
    mode?: "rerun" | "frozen";
    k?: number | null;
}

export interface AblatePayload {
    schema_version: number;
    p_original: number;
    p_ablated: number;
    delta: number;
    logit_original: number;
    logit_ablated: number;
    masked_samples: number;
    k: number | null;
    linear_delta?: number;
}

export interface ApiErrorBody {
    code: string;
    message: string;
    detail: string;
}

export class ApiError extends Error {
    constructor(readonly status: number, readonly body: ApiErrorBody) {
        super(`${body.code}: ${body.message}`);
    }
}

export interface LoggedExchange {
    id: number;
    method: string;
    path: string;
    request: unknown;
    response: unknown;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
    readonly log: LoggedExchange[] = [];
    private nextId = 1;

    constructor(
        private readonly baseUrl: string = "",
        private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
    ) {}

    /** Returns the log id of the most recent exchange. */
    lastExchangeId(): number {
        return this.log.length ? this.log[this.log.length - 1].id : 0;
    }

    private record(method: string, path: string, request: unknown, response: unknown): number {
        const id = this.nextId++;
        this.log.push({ id, method, path, request, response });
        return id;
    }

    private async request<T>(method: string, path: string, body?: unknown,
                             signal?: AbortSignal): Promise<{ payload: T; exchangeId: number }> {
        const init: RequestInit = { method, signal };
        if (body !== undefined) {
            init.body = JSON.stringify(body);
            init.headers = { "Content-Type": "application/json" };
        }
        const resp = await this.fetchImpl(this.baseUrl + path, init);
        const payload = await resp.json();
        if (!resp.ok) {
            throw new ApiError(resp.status, payload as ApiErrorBody);
        }
        const exchangeId = this.record(method, path, body ?? null, payload);
        return { payload: payload as T, exchangeId };
    }

    listRecords(): Promise<{ payload: RecordListing; exchangeId: number }> {
        return this.request<RecordListing>("GET", "/records");
    }

    getSignal(id: string): Promise<{ payload: SignalPayload; exchangeId: number }> {
        return this.request<SignalPayload>("GET", `/records/${id}/signal`);
    }

    predict(id: string): Promise<{ payload: PredictPayload; exchangeId: number }> {
        return this.request<PredictPayload>("POST", "/predict", { id });
    }

    attribute(req: { id: string; window: number; stride: number; k?: number | null;
                     top_k?: number; sign?: string },
              signal?: AbortSignal): Promise<{ payload: AttributionPayload; exchangeId: number }> {
        return this.request<AttributionPayload>("POST", "/attribute", req, signal);
    }

    ablate(req: AblateRequest,
           signal?: AbortSignal): Promise<{ payload: AblatePayload; exchangeId: number }> {
        return this.request<AblatePayload>("POST", "/ablate", req, signal);
    }
}
