/** Map rendering: markers and trails over a pluggable base layer.
 *
 * Drawing goes through the small Draw interface so the renderer runs
 * against a real canvas 2D context in the browser and against a recording
 * stub in tests. The default base layer is an offline distance grid;
 * deployments with connectivity can plug a tile layer implementing the
 * same interface.
 */

import { MARKER_COLORS } from "./color.js";
import type { OperatorView } from "./store.js";

export interface Draw {
  clear(color: string): void;
  circle(x: number, y: number, r: number, color: string, alpha?: number): void;
  line(x1: number, y1: number, x2: number, y2: number, color: string, width?: number, alpha?: number): void;
  text(x: number, y: number, text: string, color: string, size?: number): void;
}

export interface Viewport {
  centerLat: number;
  centerLon: number;
  metersPerPixel: number;
  width: number;
  height: number;
}

const EARTH_RADIUS_M = 6_371_000;

export function project(view: Viewport, lat: number, lon: number): [number, number] {
  const dy = ((lat - view.centerLat) * Math.PI * EARTH_RADIUS_M) / 180;
  const dx =
    ((lon - view.centerLon) * Math.PI * EARTH_RADIUS_M * Math.cos((view.centerLat * Math.PI) / 180)) / 180;
  return [view.width / 2 + dx / view.metersPerPixel, view.height / 2 - dy / view.metersPerPixel];
}

/** Fit the viewport around every known position (station at origin included). */
export function fitViewport(
  width: number,
  height: number,
  positions: [number, number][],
  fallbackCenter: [number, number] = [45.0, 9.0],
): Viewport {
  if (!positions.length) {
    return { centerLat: fallbackCenter[0], centerLon: fallbackCenter[1], metersPerPixel: 2, width, height };
  }
  const lats = positions.map((p) => p[0]);
  const lons = positions.map((p) => p[1]);
  const centerLat = (Math.min(...lats) + Math.max(...lats)) / 2;
  const centerLon = (Math.min(...lons) + Math.max(...lons)) / 2;
  const spanLat = ((Math.max(...lats) - Math.min(...lats)) * Math.PI * EARTH_RADIUS_M) / 180;
  const spanLon =
    ((Math.max(...lons) - Math.min(...lons)) * Math.PI * EARTH_RADIUS_M * Math.cos((centerLat * Math.PI) / 180)) /
    180;
  const span = Math.max(spanLat, spanLon, 100);
  const metersPerPixel = (span * 1.3) / Math.min(width, height);
  return { centerLat, centerLon, metersPerPixel, width, height };
}

export interface TileLayer {
  draw(d: Draw, view: Viewport): void;
}

/** Offline fallback: concentric distance grid around the viewport center. */
export class GridTileLayer implements TileLayer {
  constructor(private spacingM = 100) {}

  draw(d: Draw, view: Viewport): void {
    d.clear("#111827");
    const spacingPx = this.spacingM / view.metersPerPixel;
    const cx = view.width / 2;
    const cy = view.height / 2;
    for (let x = cx % spacingPx; x < view.width; x += spacingPx) {
      d.line(x, 0, x, view.height, "#1f2937", 1);
    }
    for (let y = cy % spacingPx; y < view.height; y += spacingPx) {
      d.line(0, y, view.width, y, "#1f2937", 1);
    }
    d.text(8, view.height - 8, `grid ${this.spacingM} m`, "#4b5563", 11);
  }
}

export interface MarkerView {
  opId: string;
  x: number;
  y: number;
  color: string;
  icon: string;
  dimmed: boolean;
  trail: [number, number][];
}

/** Pure marker computation: the bit the end-to-end test asserts against. */
export function computeMarkers(
  view: Viewport,
  operators: OperatorView[],
  gatewayOk: boolean,
): MarkerView[] {
  const markers: MarkerView[] = [];
  for (const op of operators) {
    if (!op.position) continue; // never had a fix: nothing to pin yet
    const [x, y] = project(view, op.position[0], op.position[1]);
    markers.push({
      opId: op.op_id,
      x,
      y,
      color: MARKER_COLORS[op.icon], // verbatim gateway color, no re-derivation
      icon: op.icon,
      dimmed: !gatewayOk,
      trail: op.trail.map(([lat, lon]) => project(view, lat, lon)),
    });
  }
  return markers;
}

export function renderMap(
  d: Draw,
  view: Viewport,
  operators: OperatorView[],
  gatewayOk: boolean,
  tiles: TileLayer = new GridTileLayer(),
): MarkerView[] {
  tiles.draw(d, view);
  const [sx, sy] = project(view, view.centerLat, view.centerLon);
  const markers = computeMarkers(view, operators, gatewayOk);
  for (const m of markers) {
    const alpha = m.dimmed ? 0.35 : 1.0;
    for (let i = 1; i < m.trail.length; i++) {
      d.line(m.trail[i - 1][0], m.trail[i - 1][1], m.trail[i][0], m.trail[i][1], m.color, 1, alpha * 0.5);
    }
    d.circle(m.x, m.y, 7, m.color, alpha);
    d.text(m.x + 10, m.y + 4, m.opId, "#e5e7eb", 12);
  }
  if (!gatewayOk) {
    d.text(view.width / 2 - 60, 20, "gateway unreachable", "#f87171", 13);
  }
  return markers;
}
