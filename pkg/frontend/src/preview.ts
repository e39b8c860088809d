/**
 * Maps UI state to preview-server queries and keeps the displayed image
 * consistent: requests are debounced to at most one every hundred
 * milliseconds, carry monotonically increasing ids, run at most one at a
 * time, and stale responses are discarded so the newest completed request
 * always wins.
 */

import { UiLightState } from "./state.js";

/** Compact number formatting for query strings: up to 7 decimals, trailing
 * zeros trimmed ("0", "0.5", "0.7071068"). */
export function fmtNum(n: number): string {
  const s = n.toFixed(7).replace(/\.?0+$/, "");
  return s === "-0" ? "0" : s;
}

/** The radians query parameter is always printed with 7 decimals. */
export function fmtRadians(n: number): string {
  return n.toFixed(7);
}

export function previewRequest(state: UiLightState): string {
  const dir = state.direction.map(fmtNum).join(",");
  if (state.mode === "hdri") {
    return (
      `/render-env?stack=${encodeURIComponent(state.stackId)}` +
      `&env=${encodeURIComponent(state.envId)}` +
      `&mode=olat&rot=${fmtRadians(state.rotation)}`
    );
  }
  const size = state.mode === "directional" ? 0 : state.size;
  return (
    `/render?stack=${encodeURIComponent(state.stackId)}` +
    `&dir=${dir}&size=${fmtNum(size)}`
  );
}

export interface PreviewResult<T> {
  id: number;
  url: string;
  value: T;
}

export type SendFn<T> = (url: string) => Promise<T>;
export type ApplyFn<T> = (result: PreviewResult<T>) => void;

export class PreviewScheduler<T> {
  private nextId = 0;
  private lastApplied = 0;
  private lastDispatch = 0;
  private inFlight = false;
  private pendingUrl: string | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private send: SendFn<T>,
    private apply: ApplyFn<T>,
    private minIntervalMs = 100,
    private now: () => number = () => Date.now(),
  ) {}

  /** Latest-wins: calling again before dispatch replaces the queued URL. */
  request(state: UiLightState): void {
    this.pendingUrl = previewRequest(state);
    this.pump();
  }

  get dispatchedCount(): number {
    return this.nextId;
  }

  /** Resolves once nothing is queued or in flight (test helper). */
  async settle(): Promise<void> {
    while (this.inFlight || this.pendingUrl !== null || this.timer !== null) {
      await new Promise((resolve) => setTimeout(resolve, 5));
    }
  }

  private pump(): void {
    if (this.inFlight || this.pendingUrl === null) return;
    const wait = this.lastDispatch + this.minIntervalMs - this.now();
    if (wait > 0) {
      if (this.timer === null) {
        this.timer = setTimeout(() => {
          this.timer = null;
          this.pump();
        }, wait);
      }
      return;
    }
    const url = this.pendingUrl;
    this.pendingUrl = null;
    this.lastDispatch = this.now();
    const id = ++this.nextId;
    this.inFlight = true;
    this.send(url)
      .then((value) => {
        if (id > this.lastApplied) {
          this.lastApplied = id;
          this.apply({ id, url, value });
        }
      })
      .catch(() => {
        // transport reports errors through its own channel (toasts)
      })
      .finally(() => {
        this.inFlight = false;
        this.pump();
      });
  }
}
