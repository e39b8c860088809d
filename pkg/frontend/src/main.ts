/**
 * Wires the trackball, size slider, mode switch, and HDRI rotation scrubber
 * to the preview server, keeping the URL fragment in sync for deep links.
 */

import { PreviewClient } from "./client.js";
import { PreviewScheduler } from "./preview.js";
import { clampState, defaultState, fromFragment, toFragment, UiLightState } from "./state.js";
import { Trackball, toAzEl } from "./trackball.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function degrees(rad: number): string {
  return ((rad * 180) / Math.PI).toFixed(1);
}

export function boot(): void {
  const image = byId<HTMLImageElement>("preview");
  const pad = byId<HTMLDivElement>("trackball");
  const sizeSlider = byId<HTMLInputElement>("size");
  const rotSlider = byId<HTMLInputElement>("rotation");
  const modeSelect = byId<HTMLSelectElement>("mode");
  const stackInput = byId<HTMLInputElement>("stack-id");
  const envFile = byId<HTMLInputElement>("env-file");
  const readout = byId<HTMLSpanElement>("readout");
  const toastBox = byId<HTMLDivElement>("toast");

  const client = new PreviewClient({
    toast: (message) => {
      toastBox.textContent = message;
      toastBox.classList.add("visible");
      setTimeout(() => toastBox.classList.remove("visible"), 4000);
    },
  });

  let state: UiLightState = window.location.hash.length > 1
    ? fromFragment(window.location.hash)
    : defaultState();
  const trackball = new Trackball(
    { x: state.direction[0], y: state.direction[1], z: state.direction[2] },
    pad.clientWidth || 300,
    pad.clientHeight || 300,
  );

  let displayedUrl: string | null = null;
  const scheduler = new PreviewScheduler<Blob>(
    (url) => client.fetchImage(url),
    (result) => {
      if (displayedUrl) URL.revokeObjectURL(displayedUrl);
      displayedUrl = URL.createObjectURL(result.value);
      image.src = displayedUrl;
    },
  );

  function sync(): void {
    state = clampState(state);
    const ae = toAzEl({ x: state.direction[0], y: state.direction[1], z: state.direction[2] });
    readout.textContent =
      `az ${degrees(ae.azimuth)}° el ${degrees(ae.elevation)}° ` +
      `size ${state.size.toFixed(2)} rot ${degrees(state.rotation)}°`;
    window.history.replaceState(null, "", "#" + toFragment(state));
    if (state.stackId && (state.mode !== "hdri" || state.envId)) {
      scheduler.request(state);
    }
  }

  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  pad.addEventListener("pointerdown", (e) => {
    dragging = true;
    lastX = e.clientX;
    lastY = e.clientY;
    pad.setPointerCapture(e.pointerId);
  });
  pad.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    const d = trackball.drag(e.clientX - lastX, e.clientY - lastY);
    lastX = e.clientX;
    lastY = e.clientY;
    state.direction = [d.x, d.y, d.z];
    sync();
  });
  pad.addEventListener("pointerup", () => {
    dragging = false;
  });

  sizeSlider.addEventListener("input", () => {
    state.size = Number(sizeSlider.value);
    if (state.mode === "directional" && state.size > 0) state.mode = "area";
    sync();
  });
  rotSlider.addEventListener("input", () => {
    state.rotation = Number(rotSlider.value);
    sync();
  });
  modeSelect.addEventListener("change", () => {
    state.mode = modeSelect.value as UiLightState["mode"];
    sync();
  });
  stackInput.addEventListener("change", () => {
    state.stackId = stackInput.value.trim();
    sync();
  });
  envFile.addEventListener("change", async () => {
    const file = envFile.files?.[0];
    if (!file) return;
    state.envId = await client.uploadEnv(await file.arrayBuffer());
    state.mode = "hdri";
    modeSelect.value = "hdri";
    sync();
  });

  modeSelect.value = state.mode;
  sizeSlider.value = String(state.size);
  rotSlider.value = String(state.rotation);
  stackInput.value = state.stackId;
  sync();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
