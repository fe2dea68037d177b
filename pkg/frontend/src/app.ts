/** Browser entry point: binds the store to the DOM.
 *
 * Layout: a canvas map on the left, operator cards with controls and the
 * warning timeline on the right. Everything repaints from the store on
 * each gateway event (throttled to animation frames).
 */

import { ControlPanel } from "./controls.js";
import { GatewayClient } from "./gateway.js";
import { GridTileLayer, fitViewport, renderMap, type Draw } from "./map.js";
import { ConsoleStore } from "./store.js";
import { formatClock, timelineView } from "./timeline.js";

function canvasDraw(ctx: CanvasRenderingContext2D): Draw {
  return {
    clear(color) {
      ctx.fillStyle = color;
      ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
    },
    circle(x, y, r, color, alpha = 1) {
      ctx.globalAlpha = alpha;
      ctx.fillStyle = color;
      ctx.beginPath();
      ctx.arc(x, y, r, 0, Math.PI * 2);
      ctx.fill();
      ctx.globalAlpha = 1;
    },
    line(x1, y1, x2, y2, color, width = 1, alpha = 1) {
      ctx.globalAlpha = alpha;
      ctx.strokeStyle = color;
      ctx.lineWidth = width;
      ctx.beginPath();
      ctx.moveTo(x1, y1);
      ctx.lineTo(x2, y2);
      ctx.stroke();
      ctx.globalAlpha = 1;
    },
    text(x, y, text, color, size = 12) {
      ctx.fillStyle = color;
      ctx.font = `${size}px system-ui, sans-serif`;
      ctx.fillText(text, x, y);
    },
  };
}

function el<K extends keyof HTMLElementTagNameMap>(tag: K, cls?: string, text?: string) {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text) node.textContent = text;
  return node;
}

export async function startApp(root: HTMLElement, baseUrl: string): Promise<ConsoleStore> {
  const gateway = new GatewayClient(baseUrl);
  const store = new ConsoleStore(gateway);
  const panels = new Map<string, ControlPanel>();

  const canvas = el("canvas", "map") as HTMLCanvasElement;
  canvas.width = 720;
  canvas.height = 640;
  const sidebar = el("div", "sidebar");
  root.append(canvas, sidebar);
  const draw = canvasDraw(canvas.getContext("2d")!);
  const tiles = new GridTileLayer(100);

  let dirty = true;
  store.onChange(() => {
    dirty = true;
  });

  function repaint(): void {
    const snap = store.snapshot();
    const positions = snap.operators.flatMap((op) => (op.position ? [op.position] : []));
    const view = fitViewport(canvas.width, canvas.height, positions);
    renderMap(draw, view, snap.operators, snap.gatewayOk, tiles);

    sidebar.replaceChildren();
    const head = el("div", "head");
    head.append(
      el("span", "title", `${snap.scenario ?? "?"} / ${snap.session ?? "no session"}`),
      el("span", snap.streaming ? "live" : "poll", snap.streaming ? "stream" : "polling"),
    );
    sidebar.append(head);

    for (const op of snap.operators) {
      const card = el("div", `card ${op.icon}`);
      const title = el("div", "row");
      title.append(
        el("span", `dot ${op.icon}`),
        el("strong", undefined, op.op_id),
        el("span", "phase", op.phase),
        el("span", "seq", `seq ${op.last_seq}`),
      );
      card.append(title);
      const flags = el("div", "row flags");
      for (const [name, value] of Object.entries(op.flags)) {
        flags.append(el("span", `flag ${value}`, `${name}: ${value}`));
      }
      card.append(flags);
      card.append(
        el(
          "div",
          "row vitals",
          `battery ${op.battery === null ? "?" : Math.round(op.battery * 100) + "%"}  ` +
            `gps ${op.gps_available ? "fix" : "no fix"}  losses ${op.counters.parity_dropped}`,
        ),
      );

      if (!panels.has(op.op_id)) panels.set(op.op_id, new ControlPanel(gateway, store, op.op_id));
      const panel = panels.get(op.op_id)!;
      const controls = el("div", "row controls");
      const periodBtn = el("button", undefined, "period 2 s") as HTMLButtonElement;
      const periodBackBtn = el("button", undefined, "period 1 s") as HTMLButtonElement;
      const gpsBtn = el("button", undefined, "gps only") as HTMLButtonElement;
      const allBtn = el("button", undefined, "all sensors") as HTMLButtonElement;
      periodBtn.onclick = () => void panel.setPeriod(2000).then(() => (dirty = true));
      periodBackBtn.onclick = () => void panel.setPeriod(1000).then(() => (dirty = true));
      gpsBtn.onclick = () => void panel.setFilter(["gps"]).then(() => (dirty = true));
      allBtn.onclick = () => void panel.setFilter("all").then(() => (dirty = true));
      for (const b of [periodBtn, periodBackBtn, gpsBtn, allBtn]) {
        b.disabled = !panel.enabled;
        controls.append(b);
      }
      card.append(controls);
      if (!panel.enabled) card.append(el("div", "row error", panel.disabledReason!));
      if (panel.state.phase !== "idle") {
        card.append(
          el("div", `row cmd ${panel.state.phase}`, `${panel.state.label}: ${panel.state.phase}` +
            (panel.state.detail ? ` (${panel.state.detail})` : "")),
        );
      }

      const tl = timelineView(store, op.op_id);
      if (tl.rows.length) {
        const list = el("div", "timeline");
        for (const row of tl.rows.slice(-6)) {
          list.append(el("div", "tl-row", `${formatClock(row.t)}  ${row.icon}  ${row.changes.join(", ")}`));
        }
        card.append(list);
      }
      for (const m of tl.metrics.slice(-1)) {
        card.append(
          el("div", "row metrics", `correct ${m.pct_correct.toFixed(2)}%  realtime ${m.pct_realtime.toFixed(2)}%`),
        );
      }
      sidebar.append(card);
    }
  }

  function frame(): void {
    if (dirty) {
      dirty = false;
      repaint();
    }
    requestAnimationFrame(frame);
  }

  await store.start();
  const refreshTimer = setInterval(() => void store.refresh(), 5000);
  window.addEventListener("beforeunload", () => {
    clearInterval(refreshTimer);
    store.stop();
  });
  frame();
  return store;
}

declare global {
  interface Window {
    fieldlinkConsole?: Promise<ConsoleStore>;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("gateway") ?? "http://127.0.0.1:8787";
  window.fieldlinkConsole = startApp(document.getElementById("app")!, base);
}
