/** Numeric formatting shared by every panel. */

export function formatProbability(p: number): string {
    return p.toFixed(6);
}

export function formatDelta(d: number): string {
    const text = d.toFixed(6);
    return d > 0 ? `+${text}` : text;
}

export function formatContribution(v: number): string {
    return v.toFixed(4);
}
