/** Mirror of the server's job status machine. The UI consults this — and
 * only this — to decide which controls are live, so no action is ever
 * offered that the current status forbids.
 */
import type { JobStatusValue } from "./types";

export const STATUSES: readonly JobStatusValue[] = [
  "pending",
  "stage1_running",
  "awaiting_selection",
  "stage2_running",
  "done",
  "failed",
];

/** Legal forward edges, identical to the server's set. */
const LEGAL_EDGES: ReadonlySet<string> = new Set([
  "pending>stage1_running",
  "stage1_running>awaiting_selection",
  "stage1_running>stage2_running",
  "awaiting_selection>stage2_running",
  "stage2_running>done",
  "pending>failed",
  "stage1_running>failed",
  "stage2_running>failed",
]);

export function canTransition(
  from: JobStatusValue,
  to: JobStatusValue,
): boolean {
  return LEGAL_EDGES.has(`${from}>${to}`);
}

export function isTerminal(status: JobStatusValue): boolean {
  return status === "done" || status === "failed";
}

export type UiAction =
  | "draw"
  | "submit"
  | "select"
  | "override_strength"
  | "new_job";

const NO_JOB: ReadonlySet<UiAction> = new Set(["draw", "submit"]);
const RUNNING: ReadonlySet<UiAction> = new Set();
const AWAITING: ReadonlySet<UiAction> = new Set([
  "select",
  "override_strength",
]);
const TERMINAL: ReadonlySet<UiAction> = new Set(["new_job"]);

/** Actions the UI may offer for a job in `status` (null = no job open). */
export function allowedActions(
  status: JobStatusValue | null,
): ReadonlySet<UiAction> {
  switch (status) {
    case null:
      return NO_JOB;
    case "pending":
    case "stage1_running":
    case "stage2_running":
      return RUNNING;
    case "awaiting_selection":
      return AWAITING;
    case "done":
    case "failed":
      return TERMINAL;
  }
}
