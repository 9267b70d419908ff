/**
 * SVG rendering for lead waveforms, contribution tints, and the
 * prediction panel.
 *
 * The UI computes no model math: every numeric node is created through
 * numericSpan(), which records the raw value and the id of the API
 * exchange it came from. Tests walk those attributes to prove purity.
 */

import { AttributionPayload, RecordSummary, TopContributor } from "./api.js";
import { formatContribution, formatDelta, formatProbability } from "./format.js";
import { PredictionPair } from "./state.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export interface LeadPlotOptions {
    width?: number;
    leadHeight?: number;
    /** Subset of leads to draw; defaults to all. */
    leads?: number[];
    exchangeId: number;
}

export function numericSpan(doc: Document, value: number, exchangeId: number,
                            text: string): HTMLElement {
    const span = doc.createElement("span");
    span.className = "metric";
    span.textContent = text;
    span.dataset.source = String(exchangeId);
    span.dataset.rawValue = String(value);
    return span;
}

function maxAbs(values: number[]): number {
    let peak = 0;
    for (const v of values) {
        const a = Math.abs(v);
        if (a > peak) peak = a;
    }
    return peak;
}

/**
 * Waveform per lead with one background band per grid segment, red for
 * positive contributions and blue for negative, opacity scaled by
 * |value| / max|value| over the whole record.
 */
export function renderLeads(container: HTMLElement, signal: number[][],
                            attribution: AttributionPayload,
                            opts: LeadPlotOptions): void {
    const doc = container.ownerDocument;
    container.textContent = "";
    const numLeads = signal.length;
    const length = numLeads ? signal[0].length : 0;
    const bad = attribution.segments.some(
        (s) => s.lead < 0 || s.lead >= numLeads || s.start < 0 || s.start >= length);
    if (bad || length === 0) {
        renderErrorBanner(container, "attribution grid does not match the signal shape");
        return;
    }
    const width = opts.width ?? 800;
    const leadHeight = opts.leadHeight ?? 60;
    const leads = opts.leads ?? signal.map((_, i) => i);
    const xScale = width / length;
    const peak = maxAbs(attribution.segments.map((s) => s.value));

    for (const lead of leads) {
        const svg = doc.createElementNS(SVG_NS, "svg");
        svg.setAttribute("width", String(width));
        svg.setAttribute("height", String(leadHeight));
        svg.setAttribute("data-lead", String(lead));
        svg.setAttribute("data-source", String(opts.exchangeId));
        svg.classList.add("lead-plot");

        for (const cell of attribution.segments) {
            if (cell.lead !== lead || cell.value === 0 || peak === 0) {
                continue;
            }
            const rect = doc.createElementNS(SVG_NS, "rect");
            rect.setAttribute("x", String(cell.start * xScale));
            rect.setAttribute("width", String(attribution.window * xScale));
            rect.setAttribute("y", "0");
            rect.setAttribute("height", String(leadHeight));
            rect.setAttribute("fill", cell.value > 0 ? "#d62728" : "#1f77b4");
            rect.setAttribute("fill-opacity", String(Math.abs(cell.value) / peak));
            rect.classList.add(cell.value > 0 ? "tint-pos" : "tint-neg");
            rect.dataset.lead = String(cell.lead);
            rect.dataset.start = String(cell.start);
            svg.appendChild(rect);
        }

        const samples = signal[lead];
        const lo = Math.min(...samples);
        const hi = Math.max(...samples);
        const span = hi - lo || 1;
        const points = samples
            .map((v, t) => `${(t * xScale).toFixed(2)},` +
                `${(leadHeight - ((v - lo) / span) * leadHeight).toFixed(2)}`)
            .join(" ");
        const line = doc.createElementNS(SVG_NS, "polyline");
        line.setAttribute("points", points);
        line.setAttribute("fill", "none");
        line.setAttribute("stroke", "#222");
        line.setAttribute("stroke-width", "1");
        svg.appendChild(line);

        const label = doc.createElementNS(SVG_NS, "text");
        label.setAttribute("x", "4");
        label.setAttribute("y", "12");
        label.textContent = `lead ${lead}`;
        svg.appendChild(label);
        container.appendChild(svg);
    }
}

export function renderTopContributors(container: HTMLElement, ranked: TopContributor[],
                                      exchangeId: number): void {
    const doc = container.ownerDocument;
    container.textContent = "";
    const list = doc.createElement("ol");
    list.className = "top-k";
    for (const cell of ranked) {
        const item = doc.createElement("li");
        item.dataset.lead = String(cell.lead);
        item.dataset.segment = String(cell.segment);
        item.append(`lead ${cell.lead}, t=${cell.start}: `);
        item.appendChild(numericSpan(doc, cell.value, exchangeId,
                                     formatContribution(cell.value)));
        list.appendChild(item);
    }
    container.appendChild(list);
}

export function renderPrediction(container: HTMLElement, pair: PredictionPair | null,
                                 mode: string): void {
    const doc = container.ownerDocument;
    container.textContent = "";
    if (!pair) {
        container.textContent = "no prediction yet";
        return;
    }
    const rows: Array<[string, number, string, string]> = [
        ["original", pair.original, formatProbability(pair.original), "p-original"],
        ["ablated", pair.ablated, formatProbability(pair.ablated), "p-ablated"],
        ["delta", pair.delta, formatDelta(pair.delta), "p-delta"],
    ];
    if (pair.linearDelta !== null) {
        rows.push(["linear delta (frozen)", pair.linearDelta,
                   formatDelta(pair.linearDelta), "p-linear-delta"]);
    }
    const dl = doc.createElement("dl");
    dl.className = "prediction";
    dl.dataset.mode = mode;
    for (const [label, value, text, cls] of rows) {
        const dt = doc.createElement("dt");
        dt.textContent = label;
        const dd = doc.createElement("dd");
        const span = numericSpan(doc, value, pair.exchangeId, text);
        span.classList.add(cls);
        dd.appendChild(span);
        dl.append(dt, dd);
    }
    container.appendChild(dl);
}

export function renderGroundTruth(container: HTMLElement, record: RecordSummary,
                                  notes: string, exchangeId: number): void {
    const doc = container.ownerDocument;
    container.textContent = "";
    const div = doc.createElement("div");
    div.className = "ground-truth";
    div.dataset.source = String(exchangeId);
    div.textContent = `labels: ${record.labels.join(", ") || "(none)"}`;
    if (notes) {
        const p = doc.createElement("p");
        p.className = "notes";
        p.textContent = notes;
        div.appendChild(p);
    }
    container.appendChild(div);
}

/**
 * Three aggregation scales side by side; panels share the record but
 * fetch their own attribution payloads.
 */
export function renderComparePanels(container: HTMLElement, signal: number[][],
                                    payloads: AttributionPayload[],
                                    exchangeIds: number[]): void {
    const doc = container.ownerDocument;
    container.textContent = "";
    payloads.forEach((payload, i) => {
        const panel = doc.createElement("section");
        panel.className = "compare-panel";
        panel.dataset.window = String(payload.window);
        panel.dataset.stride = String(payload.stride);
        panel.dataset.segments = String(payload.num_segments);
        const caption = doc.createElement("h3");
        caption.textContent = `window ${payload.window}, stride ${payload.stride}`;
        panel.appendChild(caption);
        renderLeads(panel, signal, payload, { exchangeId: exchangeIds[i], width: 400,
                                              leadHeight: 36 });
        container.appendChild(panel);
    });
}

export function renderErrorBanner(container: HTMLElement, message: string): void {
    const doc = container.ownerDocument;
    const banner = doc.createElement("div");
    banner.className = "error-banner";
    banner.setAttribute("role", "alert");
    banner.textContent = message;
    container.appendChild(banner);
}

export function renderRetryToast(container: HTMLElement, message: string,
                                 retry: () => void): void {
    const doc = container.ownerDocument;
    const toast = doc.createElement("div");
    toast.className = "toast";
    toast.textContent = message;
    const button = doc.createElement("button");
    button.textContent = "retry";
    button.addEventListener("click", () => {
        toast.remove();
        retry();
    });
    toast.appendChild(button);
    container.appendChild(toast);
}
