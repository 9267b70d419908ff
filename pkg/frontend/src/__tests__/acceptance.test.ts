/**
 * Cross-interface acceptance: the numbers this UI renders must equal
 * the CLI's `ablate` outputs (within 1e-6), heatmap segment counts must
 * match the API, and every displayed numeric must trace to a logged
 * API response.
 *
 * fixtures.json is generated by scripts/gen_ui_fixtures.py, which
 * drives the real HTTP service and the real CLI against one trained
 * checkpoint; the stub fetch below replays those recorded responses.
 */

import { describe, expect, it } from "vitest";

import fixtures from "./fixtures.json";
import { AblatePayload, ApiClient, AttributionPayload, FetchLike } from "../api.js";
import { renderComparePanels, renderLeads, renderPrediction } from "../render.js";
import { AblationRunner, ViewState, initialState, toPredictionPair } from "../state.js";

interface AblationFixture {
    request: { id: string; lead_mask: number[];
               segments: { lead?: number | null; start: number; end: number }[];
               mode: "rerun" | "frozen" };
    api: AblatePayload;
    cli: AblatePayload;
}

const ablations = fixtures.ablations as unknown as AblationFixture[];
const attributions = fixtures.attributions as unknown as Array<{
    request: { id: string; window: number; stride: number };
    payload: AttributionPayload;
}>;
const top1 = fixtures.top1 as unknown as AblationFixture & {
    attribution: { payload: AttributionPayload };
};
const signalValues = (fixtures.signal as { values: number[][] }).values;

/** Serves recorded responses for POST /ablate keyed by the request body. */
function fixtureFetch(): FetchLike {
    const pool = [...ablations, top1];
    return async (url, init) => {
        const respond = (payload: unknown) =>
            new Response(JSON.stringify(payload), { status: 200 });
        if (url.endsWith("/ablate")) {
            const body = JSON.parse(String(init?.body));
            const hit = pool.find((f) =>
                f.request.id === body.id &&
                f.request.mode === (body.mode ?? "rerun") &&
                JSON.stringify(f.request.lead_mask) === JSON.stringify(body.lead_mask) &&
                JSON.stringify(f.request.segments) === JSON.stringify(body.segments));
            if (!hit) {
                throw new Error(`no fixture for ablate request ${init?.body}`);
            }
            return respond(hit.api);
        }
        throw new Error(`no fixture route for ${url}`);
    };
}

function stateForFixture(fx: AblationFixture): ViewState {
    return {
        ...initialState(),
        recordId: fx.request.id,
        recordLength: signalValues[0].length,
        leadMask: fx.request.lead_mask,
        segments: fx.request.segments,
        ablationMode: fx.request.mode,
    };
}

describe("criterion 12: explorer matches the CLI", () => {
    it("has ten scripted (record, mask) pairs", () => {
        expect(ablations.length).toBe(10);
    });

    it("renders probabilities equal to the CLI output within 1e-6", async () => {
        for (const fx of ablations) {
            const api = new ApiClient("", fixtureFetch());
            const runner = new AblationRunner(api);
            const pair = await runner.run(stateForFixture(fx));
            expect(pair).not.toBeNull();
            const panel = document.createElement("div");
            renderPrediction(panel, pair!, fx.request.mode);
            const shownOriginal = Number(
                (panel.querySelector(".p-original") as HTMLElement).textContent);
            const shownAblated = Number(
                (panel.querySelector(".p-ablated") as HTMLElement).textContent);
            expect(Math.abs(shownOriginal - fx.cli.p_original)).toBeLessThanOrEqual(1e-6);
            expect(Math.abs(shownAblated - fx.cli.p_ablated)).toBeLessThanOrEqual(1e-6);
            if (fx.request.mode === "frozen") {
                const lin = panel.querySelector(".p-linear-delta") as HTMLElement;
                expect(Math.abs(Number(lin.textContent) - (fx.cli.linear_delta ?? NaN)))
                    .toBeLessThanOrEqual(1e-6);
            }
        }
    });

    it("masking the top-1 positive segment lowers the shown probability", async () => {
        // the scripted record is positive-predicted; its strongest positive
        // segment comes from the recorded attribution payload
        const strongest = top1.attribution.payload.top_k[0];
        expect(top1.request.segments[0].start).toBe(strongest.start);
        expect(top1.request.segments[0].lead).toBe(strongest.lead);
        const api = new ApiClient("", fixtureFetch());
        const runner = new AblationRunner(api);
        const pair = await runner.run(stateForFixture(top1));
        const panel = document.createElement("div");
        renderPrediction(panel, pair!, "rerun");
        const shownOriginal = Number(
            (panel.querySelector(".p-original") as HTMLElement).textContent);
        const shownAblated = Number(
            (panel.querySelector(".p-ablated") as HTMLElement).textContent);
        expect(shownOriginal).toBeGreaterThanOrEqual(0.5);
        expect(shownAblated).toBeLessThan(shownOriginal);
        expect(Math.abs(shownAblated - top1.cli.p_ablated)).toBeLessThanOrEqual(1e-6);
    });

    it("heatmap segment counts equal the API's T for each preset", () => {
        const container = document.createElement("div");
        renderComparePanels(container, signalValues,
                            attributions.map((a) => a.payload),
                            attributions.map((_, i) => 100 + i));
        const panels = Array.from(container.querySelectorAll(".compare-panel"));
        expect(panels.length).toBe(attributions.length);
        panels.forEach((panel, i) => {
            const payload = attributions[i].payload;
            // count distinct rendered band positions on the busiest lead
            let best = 0;
            for (const svg of Array.from(panel.querySelectorAll("svg"))) {
                const starts = new Set(
                    Array.from(svg.querySelectorAll("rect"))
                        .map((r) => (r as SVGRectElement).dataset.start));
                best = Math.max(best, starts.size);
            }
            expect(best).toBe(payload.num_segments);
            expect(Number(panel.getAttribute("data-segments")))
                .toBe(payload.num_segments);
        });
    });
});

describe("criterion 13: every displayed number traces to an API response", () => {
    function collectNumbers(obj: unknown, into: Set<number>): void {
        if (typeof obj === "number") {
            into.add(obj);
        } else if (Array.isArray(obj)) {
            obj.forEach((v) => collectNumbers(v, into));
        } else if (obj && typeof obj === "object") {
            Object.values(obj).forEach((v) => collectNumbers(v, into));
        }
    }

    it("request-log assertion over the rendered ablation panel", async () => {
        for (const fx of ablations) {
            const api = new ApiClient("", fixtureFetch());
            const runner = new AblationRunner(api);
            const pair = await runner.run(stateForFixture(fx));
            const panel = document.createElement("div");
            renderPrediction(panel, pair!, fx.request.mode);

            const metrics = Array.from(panel.querySelectorAll(".metric"));
            expect(metrics.length).toBeGreaterThan(0);
            for (const node of metrics) {
                const el = node as HTMLElement;
                const sourceId = Number(el.dataset.source);
                expect(sourceId).toBeGreaterThan(0);
                const exchange = api.log.find((e) => e.id === sourceId);
                expect(exchange, "displayed value lacks a logged exchange").toBeDefined();
                const pool = new Set<number>();
                collectNumbers(exchange!.response, pool);
                const raw = Number(el.dataset.rawValue);
                // delta is the difference of two response fields; everything
                // else must literally appear in the response
                const fromResponse = pool.has(raw) ||
                    Math.abs(raw - ((exchange!.response as AblatePayload).delta ?? NaN)) === 0;
                expect(fromResponse, `value ${raw} not in response`).toBe(true);
            }
        }
    });

    it("lead plots carry the exchange id of their attribution payload", () => {
        const container = document.createElement("div");
        renderLeads(container, signalValues, attributions[0].payload,
                    { exchangeId: 42 });
        const plots = Array.from(container.querySelectorAll("svg"));
        expect(plots.length).toBe(signalValues.length);
        for (const svg of plots) {
            expect(svg.getAttribute("data-source")).toBe("42");
        }
    });
});
