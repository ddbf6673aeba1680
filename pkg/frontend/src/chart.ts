// Turn-by-turn preference chart: grouped bars of the top item scores per
// turn, keyed by item id. Values come straight from service snapshots; the
// only transformation is layout.

import type { ScoreEntry, Snapshot } from "./types.js";

export interface ChartPoint {
  turn: number;
  id: string;
  score: number;
  label: string; // the score as displayed, e.g. for tooltips
}

export interface ChartSeries {
  points: ChartPoint[];
  maxScore: number;
}

export function buildSeries(snapshots: Snapshot[], depth = 10): ChartSeries {
  const points: ChartPoint[] = [];
  let maxScore = 0;
  for (const snap of snapshots) {
    for (const entry of snap.items.slice(0, depth)) {
      points.push({
        turn: snap.turn,
        id: entry.id,
        score: entry.score,
        label: String(entry.score),
      });
      if (entry.score > maxScore) {
        maxScore = entry.score;
      }
    }
  }
  return { points, maxScore };
}

const WIDTH = 640;
const HEIGHT = 180;
const PAD = 24;

function esc(value: string): string {
  return value.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Render the series as standalone SVG markup (no DOM dependency). */
export function renderChartSvg(series: ChartSeries): string {
  const turns = [...new Set(series.points.map((p) => p.turn))].sort((a, b) => a - b);
  if (turns.length === 0) {
    return `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" class="chart"></svg>`;
  }
  const groupWidth = (WIDTH - 2 * PAD) / turns.length;
  const bars: string[] = [];
  for (const [g, turn] of turns.entries()) {
    const group = series.points.filter((p) => p.turn === turn);
    const barWidth = Math.max(1, (groupWidth - 6) / Math.max(1, group.length));
    for (const [i, point] of group.entries()) {
      const height = series.maxScore > 0
        ? (point.score / series.maxScore) * (HEIGHT - 2 * PAD)
        : 0;
      const x = PAD + g * groupWidth + i * barWidth;
      const y = HEIGHT - PAD - height;
      bars.push(
        `<rect x="${x.toFixed(2)}" y="${y.toFixed(2)}" width="${barWidth.toFixed(2)}"` +
        ` height="${height.toFixed(2)}" data-item="${esc(point.id)}"` +
        ` data-score="${esc(point.label)}"><title>item ${esc(point.id)}: ` +
        `${esc(point.label)}</title></rect>`,
      );
    }
    bars.push(
      `<text x="${(PAD + g * groupWidth + groupWidth / 2).toFixed(2)}"` +
      ` y="${HEIGHT - 6}" text-anchor="middle" class="turn-label">t${turn}</text>`,
    );
  }
  return `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" class="chart">${bars.join("")}</svg>`;
}
