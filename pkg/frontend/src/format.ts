// Presentation helpers for the live statistics panel.

import type { ProfileStats } from "./api.js";

export const PLACEHOLDER = "—"; // em dash for "no data yet"

export function formatPercent(rate: number | null): string {
  if (rate === null || !isFinite(rate)) return PLACEHOLDER;
  return `${(rate * 100).toFixed(1)}%`;
}

export function formatSeconds(seconds: number | null): string {
  if (seconds === null || !isFinite(seconds)) return PLACEHOLDER;
  return `${seconds.toFixed(2)} s`;
}

/** "93.5% / 9.37 s", or em-dash placeholders before any attempt. */
export function formatStatsRow(stats: ProfileStats): string {
  if (!stats.n_attempts) return `${PLACEHOLDER} / ${PLACEHOLDER}`;
  return `${formatPercent(stats.success_rate)} / ${formatSeconds(stats.mean_time_seconds)}`;
}
