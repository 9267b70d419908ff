/**
 * Explorer bootstrap: record picker, lead plots with contribution
 * tints, top-k evidence, compare panels, and counterfactual ablation.
 */

import { ApiClient, AttributionPayload, RecordSummary, SignalPayload } from "./api.js";
import {
    AblationRunner,
    COMPARE_PRESETS,
    ViewState,
    addSegment,
    clearMasks,
    hasMask,
    initialState,
    selectRecord,
    setWindowStride,
    toggleLead,
} from "./state.js";
import {
    renderComparePanels,
    renderErrorBanner,
    renderGroundTruth,
    renderLeads,
    renderPrediction,
    renderRetryToast,
    renderTopContributors,
} from "./render.js";

interface Elements {
    recordSelect: HTMLSelectElement;
    classInput: HTMLInputElement;
    windowInput: HTMLInputElement;
    strideInput: HTMLInputElement;
    topKInput: HTMLInputElement;
    modeSelect: HTMLSelectElement;
    leadToggles: HTMLElement;
    leads: HTMLElement;
    topK: HTMLElement;
    prediction: HTMLElement;
    groundTruth: HTMLElement;
    compare: HTMLElement;
    status: HTMLElement;
    clearButton: HTMLButtonElement;
}

export class ExplorerApp {
    state: ViewState = initialState();
    private records: RecordSummary[] = [];
    private signal: SignalPayload | null = null;
    private runner: AblationRunner;

    constructor(private readonly api: ApiClient, private readonly el: Elements) {
        this.runner = new AblationRunner(api);
    }

    async start(): Promise<void> {
        const { payload } = await this.api.listRecords();
        this.records = payload.records;
        this.el.recordSelect.textContent = "";
        for (const rec of this.records) {
            const option = this.el.recordSelect.ownerDocument.createElement("option");
            option.value = rec.id;
            option.textContent = `${rec.id} [${rec.labels.join(",")}]`;
            this.el.recordSelect.appendChild(option);
        }
        this.wireControls();
        if (this.records.length) {
            await this.loadRecord(this.records[0].id);
        }
    }

    private wireControls(): void {
        this.el.recordSelect.addEventListener("change", () => {
            void this.loadRecord(this.el.recordSelect.value);
        });
        const applyGrid = () => {
            try {
                this.state = setWindowStride(
                    this.state,
                    Number(this.el.windowInput.value),
                    Number(this.el.strideInput.value));
            } catch (e) {
                renderErrorBanner(this.el.status, String(e));
                return;
            }
            void this.refreshAttribution();
        };
        this.el.windowInput.addEventListener("change", applyGrid);
        this.el.strideInput.addEventListener("change", applyGrid);
        this.el.topKInput.addEventListener("change", () => {
            this.state = { ...this.state, topK: Number(this.el.topKInput.value) };
            void this.refreshAttribution();
        });
        this.el.classInput.addEventListener("change", () => {
            const raw = this.el.classInput.value.trim();
            this.state = { ...this.state, classIndex: raw === "" ? null : Number(raw) };
            void this.refreshAttribution();
            void this.refreshAblation();
        });
        this.el.modeSelect.addEventListener("change", () => {
            this.state = { ...this.state,
                           ablationMode: this.el.modeSelect.value as "rerun" | "frozen" };
            void this.refreshAblation();
        });
        this.el.clearButton.addEventListener("click", () => {
            this.state = clearMasks(this.state);
            this.renderLeadToggles();
            void this.refreshAblation();
        });
    }

    async loadRecord(id: string): Promise<void> {
        const record = this.records.find((r) => r.id === id);
        if (!record) {
            renderErrorBanner(this.el.status, `unknown record ${id}`);
            return;
        }
        const { payload: signal, exchangeId } = await this.api.getSignal(id);
        this.signal = signal;
        this.state = selectRecord(this.state, id, record.L);
        renderGroundTruth(this.el.groundTruth, record, signal.notes, exchangeId);
        this.renderLeadToggles();
        await this.refreshAttribution();
        await this.refreshAblation();
    }

    private renderLeadToggles(): void {
        const doc = this.el.leadToggles.ownerDocument;
        this.el.leadToggles.textContent = "";
        if (!this.signal) {
            return;
        }
        this.signal.values.forEach((_, lead) => {
            const button = doc.createElement("button");
            button.textContent = `lead ${lead}`;
            button.dataset.lead = String(lead);
            button.classList.toggle("masked", this.state.leadMask.includes(lead));
            button.addEventListener("click", () => {
                this.state = toggleLead(this.state, lead);
                this.renderLeadToggles();
                void this.refreshAblation();
            });
            this.el.leadToggles.appendChild(button);
        });
    }

    async refreshAttribution(): Promise<void> {
        if (!this.state.recordId || !this.signal) {
            return;
        }
        try {
            const main = await this.api.attribute({
                id: this.state.recordId,
                window: this.state.window,
                stride: this.state.stride,
                k: this.state.classIndex,
                top_k: this.state.topK,
            });
            renderLeads(this.el.leads, this.signal.values, main.payload,
                        { exchangeId: main.exchangeId });
            renderTopContributors(this.el.topK, main.payload.top_k, main.exchangeId);
            this.attachSegmentSelection();

            const panels: AttributionPayload[] = [];
            const ids: number[] = [];
            for (const preset of COMPARE_PRESETS) {
                if (preset.window > this.state.recordLength) {
                    continue;
                }
                const r = await this.api.attribute({
                    id: this.state.recordId,
                    window: preset.window,
                    stride: preset.stride,
                    k: this.state.classIndex,
                });
                panels.push(r.payload);
                ids.push(r.exchangeId);
            }
            renderComparePanels(this.el.compare, this.signal.values, panels, ids);
        } catch (e) {
            renderRetryToast(this.el.status, `attribution failed: ${e}`,
                             () => void this.refreshAttribution());
        }
    }

    /** Clicking a lead plot selects the stride-aligned segment under the cursor. */
    private attachSegmentSelection(): void {
        for (const svg of Array.from(this.el.leads.querySelectorAll("svg"))) {
            svg.addEventListener("click", (event) => {
                const lead = Number((svg as SVGSVGElement).dataset.lead);
                const rect = (svg as SVGSVGElement).getBoundingClientRect();
                const frac = rect.width
                    ? ((event as MouseEvent).clientX - rect.left) / rect.width : 0;
                const sample = Math.floor(frac * this.state.recordLength);
                this.state = addSegment(this.state, sample, sample + 1, lead);
                void this.refreshAblation();
            });
        }
    }

    async refreshAblation(): Promise<void> {
        if (!this.state.recordId) {
            return;
        }
        try {
            const pair = await this.runner.run(this.state);
            if (pair) {
                this.state = { ...this.state, prediction: pair };
                renderPrediction(this.el.prediction, pair, this.state.ablationMode);
                this.el.status.textContent = hasMask(this.state)
                    ? `${this.state.leadMask.length} lead(s), ` +
                      `${this.state.segments.length} segment(s) masked`
                    : "no mask active";
            }
        } catch (e) {
            if ((e as Error).name === "AbortError") {
                return; // superseded by a newer interaction
            }
            renderRetryToast(this.el.status, `ablation failed: ${e}`,
                             () => void this.refreshAblation());
        }
    }
}

export function bootstrap(doc: Document, api?: ApiClient): ExplorerApp {
    const byId = (id: string) => {
        const node = doc.getElementById(id);
        if (!node) {
            throw new Error(`missing #${id}`);
        }
        return node;
    };
    const app = new ExplorerApp(api ?? new ApiClient(""), {
        recordSelect: byId("record-select") as HTMLSelectElement,
        classInput: byId("class-index") as HTMLInputElement,
        windowInput: byId("window-input") as HTMLInputElement,
        strideInput: byId("stride-input") as HTMLInputElement,
        topKInput: byId("topk-input") as HTMLInputElement,
        modeSelect: byId("mode-select") as HTMLSelectElement,
        leadToggles: byId("lead-toggles"),
        leads: byId("lead-plots"),
        topK: byId("top-contributors"),
        prediction: byId("prediction-panel"),
        groundTruth: byId("ground-truth"),
        compare: byId("compare-panels"),
        status: byId("status-line"),
        clearButton: byId("clear-masks") as HTMLButtonElement,
    });
    void app.start();
    return app;
}

declare global {
    interface Window { explorer?: ExplorerApp; }
}

if (typeof window !== "undefined" && typeof document !== "undefined"
        && document.getElementById("record-select")) {
    window.explorer = bootstrap(document);
}
