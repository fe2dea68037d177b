/** Icon color semantics, mirrored from the station's mapping table.
 *
 * The console never derives warning logic on its own: live values arrive
 * with the color already decided. This function exists for the shared
 * fixture test (both suites consume fixtures/icon_color_mapping.json) and
 * for labeling legends; rendering always uses the received color verbatim.
 */

import type { FlagValue, GlobalFlags, IconColor, Phase } from "./types.js";

export function iconColor(
  phase: Phase,
  gpsAvailable: boolean,
  health: FlagValue,
  environment: FlagValue,
  equipment: FlagValue,
): IconColor {
  if (phase === "disconnected" || !gpsAvailable) {
    return "grey";
  }
  if (health === "warn" || environment === "warn" || equipment === "warn") {
    return "red";
  }
  return "green";
}

export function anyWarn(flags: GlobalFlags): boolean {
  return flags.health === "warn" || flags.environment === "warn" || flags.equipment === "warn";
}

/** Render colors for the three marker states. */
export const MARKER_COLORS: Record<IconColor, string> = {
  grey: "#9ca3af",
  green: "#4ade80",
  red: "#ef4444",
};
