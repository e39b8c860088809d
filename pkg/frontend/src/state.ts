/**
 * UI lighting state: a unit light direction, the area-size slider, the
 * lighting mode, and the HDRI rotation, plus the ids of the uploaded
 * resources the preview server knows about.
 *
 * The whole state serializes losslessly into the URL fragment so any view
 * can be deep-linked and reproduced.
 */

export type LightMode = "directional" | "area" | "hdri";

export interface UiLightState {
  mode: LightMode;
  /** unit vector, stage coordinates (z up) */
  direction: [number, number, number];
  /** area-size factor in [0, 1]; 0 = hard source, 1 = flat-lit */
  size: number;
  /** HDRI azimuth in [0, 2*pi) */
  rotation: number;
  stackId: string;
  envId: string;
}

export const TWO_PI = 2 * Math.PI;

export function defaultState(): UiLightState {
  return {
    mode: "directional",
    direction: [0, 0, 1],
    size: 0,
    rotation: 0,
    stackId: "",
    envId: "",
  };
}

export function normalize(v: [number, number, number]): [number, number, number] {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (!isFinite(n) || n === 0) return [0, 0, 1];
  // a unit vector is left untouched so clamping is idempotent at the ulp level
  if (Math.abs(n - 1) <= 1e-12) return [v[0], v[1], v[2]];
  return [v[0] / n, v[1] / n, v[2] / n];
}

export function clampState(state: UiLightState): UiLightState {
  let rot = state.rotation % TWO_PI;
  if (rot < 0) rot += TWO_PI;
  return {
    ...state,
    direction: normalize(state.direction),
    size: Math.min(1, Math.max(0, state.size)),
    rotation: rot,
  };
}

const MODES: LightMode[] = ["directional", "area", "hdri"];

/** Serialize to a URL fragment (without the leading '#'). Numbers use the
 * default double-precision string form, so parsing them back is lossless. */
export function toFragment(state: UiLightState): string {
  const params = new URLSearchParams();
  params.set("mode", state.mode);
  params.set("dir", state.direction.map(String).join(","));
  params.set("size", String(state.size));
  params.set("rot", String(state.rotation));
  if (state.stackId) params.set("stack", state.stackId);
  if (state.envId) params.set("env", state.envId);
  return params.toString();
}

export function fromFragment(fragment: string): UiLightState {
  const params = new URLSearchParams(fragment.replace(/^#/, ""));
  const state = defaultState();
  const mode = params.get("mode");
  if (mode && (MODES as string[]).includes(mode)) state.mode = mode as LightMode;
  const dir = params.get("dir");
  if (dir) {
    const parts = dir.split(",").map(Number);
    if (parts.length === 3 && parts.every((p) => isFinite(p))) {
      state.direction = [parts[0]!, parts[1]!, parts[2]!];
    }
  }
  const size = params.get("size");
  if (size !== null && isFinite(Number(size))) state.size = Number(size);
  const rot = params.get("rot");
  if (rot !== null && isFinite(Number(rot))) state.rotation = Number(rot);
  state.stackId = params.get("stack") ?? "";
  state.envId = params.get("env") ?? "";
  return clampState(state);
}
