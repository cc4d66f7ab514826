/**
 * DOM wiring: connect to the frame server, then steer it from the page.
 *
 * All numerics and request plumbing live in the sibling modules; this file
 * only builds elements and forwards events.
 */

import { ApiError, connect, Frame, Info, renderFrame, RenderRequest } from "./api.js";
import { defaultOrbit, OrbitState, orbitMatrix, rotateOrbit, zoomOrbit } from "./camera.js";
import { clampRatio, floorCount } from "./count.js";
import { createRenderLoop, RenderLoop } from "./loop.js";

const params = new URLSearchParams(location.search);
const BASE = params.get("server") ?? "http://127.0.0.1:8000";
const FRAME_SIZE = 512;

interface Pane {
  ratio: number;
  root: HTMLElement;
  image: HTMLImageElement;
  count: HTMLElement;
  latency: HTMLElement;
  loop: RenderLoop<RenderRequest>;
  frameUrl?: string;
}

const banner = element("div", "banner", "connecting to " + BASE + " ...");
const toast = element("div", "toast", "");
let toastTimer: ReturnType<typeof setTimeout> | undefined;

function element(tag: string, className: string, text: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  node.textContent = text;
  return node;
}

function showToast(message: string): void {
  toast.textContent = message;
  toast.classList.add("visible");
  if (toastTimer !== undefined) {
    clearTimeout(toastTimer);
  }
  toastTimer = setTimeout(() => toast.classList.remove("visible"), 2500);
}

function describe(error: unknown): string {
  if (error instanceof ApiError) {
    return error.field === undefined
      ? error.message
      : `${error.message} (field: ${error.field})`;
  }
  return error instanceof Error ? error.message : String(error);
}

function main(): void {
  document.body.append(banner, toast);
  void connect(BASE, {
    onStatus: (online) => banner.classList.toggle("visible", !online),
  }).then(start, (error) => {
    banner.textContent = describe(error);
    banner.classList.add("visible");
  });
}

function start(info: Info): void {
  banner.classList.remove("visible");
  let orbit: OrbitState = defaultOrbit(info.bounds);
  const panes: Pane[] = [];

  function requestFor(pane: Pane): RenderRequest {
    return {
      ratio: pane.ratio,
      camera: orbitMatrix(orbit),
      width: FRAME_SIZE,
      height: FRAME_SIZE,
    };
  }

  function refresh(pane: Pane): void {
    pane.count.textContent =
      `${floorCount(pane.ratio, info.n_gaussians)} / ${info.n_gaussians} gaussians`;
    pane.loop.update(requestFor(pane));
  }

  function refreshAll(): void {
    for (const pane of panes) {
      if (!pane.root.hidden) {
        refresh(pane);
      }
    }
  }

  function makePane(initialRatio: number): Pane {
    const root = element("section", "pane", "");
    const image = document.createElement("img");
    image.className = "frame";
    image.width = FRAME_SIZE;
    image.height = FRAME_SIZE;
    image.draggable = false;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0.01";
    slider.max = "1";
    slider.step = "0.01";
    slider.value = String(initialRatio);
    const ratioLabel = element("span", "ratio", `e = ${initialRatio.toFixed(2)}`);
    const count = element("span", "count", "");
    const latency = element("span", "latency", "");
    const bar = element("div", "bar", "");
    bar.append(ratioLabel, slider, count, latency);
    root.append(image, bar);

    const pane: Pane = {
      ratio: initialRatio, root, image, count, latency,
      loop: createRenderLoop<RenderRequest, Frame>({
        render: (request) => renderFrame(BASE, request),
        onFrame: (_request, frame: Frame) => {
          const url = URL.createObjectURL(frame.png);
          if (pane.frameUrl !== undefined) {
            URL.revokeObjectURL(pane.frameUrl);
          }
          pane.frameUrl = url;
          image.src = url;
          latency.textContent = `${frame.ms.toFixed(0)} ms`;
        },
        onError: (_request, error) => showToast(describe(error)),
      }),
    };

    slider.addEventListener("input", () => {
      pane.ratio = clampRatio(Number(slider.value));
      ratioLabel.textContent = `e = ${pane.ratio.toFixed(2)}`;
      refresh(pane);
    });

    let drag: { x: number; y: number } | undefined;
    image.addEventListener("pointerdown", (event) => {
      drag = { x: event.clientX, y: event.clientY };
      image.setPointerCapture(event.pointerId);
    });
    image.addEventListener("pointermove", (event) => {
      if (drag === undefined) {
        return;
      }
      orbit = rotateOrbit(orbit, event.clientX - drag.x, event.clientY - drag.y);
      drag = { x: event.clientX, y: event.clientY };
      refreshAll();
    });
    image.addEventListener("pointerup", () => {
      drag = undefined;
    });
    image.addEventListener("wheel", (event) => {
      event.preventDefault();
      orbit = zoomOrbit(orbit, event.deltaY > 0 ? 1.1 : 1 / 1.1);
      refreshAll();
    }, { passive: false });

    return pane;
  }

  const left = makePane(0.15);
  const right = makePane(1.0);
  right.root.hidden = true;
  panes.push(left, right);

  const compare = document.createElement("input");
  compare.type = "checkbox";
  compare.id = "compare";
  const compareLabel = document.createElement("label");
  compareLabel.htmlFor = "compare";
  compareLabel.textContent = "compare";
  compare.addEventListener("change", () => {
    right.root.hidden = !compare.checked;
    if (compare.checked) {
      refresh(right);
    }
  });

  const header = element("header", "header", "");
  header.append(
    element("h1", "title", "elastisplat"),
    element("span", "total", `scene: ${info.n_gaussians} gaussians`),
    compare, compareLabel,
  );
  const row = element("main", "row", "");
  row.append(left.root, right.root);
  document.body.append(header, row);
  refresh(left);
}

main();
