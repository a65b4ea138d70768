/**
 * Pure helpers for stage ordering and snapshot view comparison.
 */

import {
  renderPath,
  VIEW_NAMES,
  type SessionResource,
  type ViewName,
} from "./api.js";

/** Pipeline stages in progression order. */
export const STAGE_ORDER = [
  "Created",
  "Structured",
  "Built",
  "VisualRefined",
  "Finalized",
] as const;

/** True once `stage` is at or past `target` in the pipeline. */
export function stageReached(stage: string, target: string): boolean {
  const have = STAGE_ORDER.indexOf(stage as (typeof STAGE_ORDER)[number]);
  const want = STAGE_ORDER.indexOf(target as (typeof STAGE_ORDER)[number]);
  if (have < 0 || want < 0) {
    return false;
  }
  return have >= want;
}

/** One row of the comparison grid: the same view preset, then and now. */
export type ViewPair = {
  view: ViewName;
  previousUrl: string | null;
  currentUrl: string;
};

/**
 * Pair every view preset of snapshot `index` with the same preset of the
 * snapshot before it.  Comparison rows never mix presets: a pair is built
 * per view name, so both images always share the camera.
 */
export function viewPairs(session: SessionResource, index: number): ViewPair[] {
  if (index < 0 || index >= session.snapshot_count) {
    return [];
  }
  return VIEW_NAMES.map((view) => ({
    view,
    previousUrl: index > 0 ? renderPath(session.id, index - 1, view) : null,
    currentUrl: renderPath(session.id, index, view),
  }));
}
