/**
 * Thin fetch wrapper for the preview server. Errors surface through a
 * non-blocking toast callback; 503 (stack still loading) retries with
 * backoff instead of failing the preview loop.
 */

export type ToastFn = (message: string) => void;

export interface ClientOptions {
  baseUrl?: string;
  toast?: ToastFn;
  maxRetries?: number;
  backoffMs?: number;
  fetchImpl?: typeof fetch;
}

export class PreviewClient {
  private baseUrl: string;
  private toast: ToastFn;
  private maxRetries: number;
  private backoffMs: number;
  private fetchImpl: typeof fetch;

  constructor(options: ClientOptions = {}) {
    this.baseUrl = options.baseUrl ?? "";
    this.toast = options.toast ?? (() => undefined);
    this.maxRetries = options.maxRetries ?? 4;
    this.backoffMs = options.backoffMs ?? 250;
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  async fetchImage(path: string): Promise<Blob> {
    let attempt = 0;
    for (;;) {
      const response = await this.fetchImpl(this.baseUrl + path);
      if (response.ok) return response.blob();
      if (response.status === 503 && attempt < this.maxRetries) {
        attempt += 1;
        await new Promise((r) => setTimeout(r, this.backoffMs * attempt));
        continue;
      }
      const message = `render failed: HTTP ${response.status}`;
      this.toast(message);
      throw new Error(message);
    }
  }

  async uploadEnv(pfmBytes: ArrayBuffer): Promise<string> {
    const response = await this.fetchImpl(this.baseUrl + "/envs", {
      method: "POST",
      headers: { "content-type": "application/octet-stream" },
      body: pfmBytes,
    });
    if (!response.ok) {
      const message = `environment upload failed: HTTP ${response.status}`;
      this.toast(message);
      throw new Error(message);
    }
    const doc = (await response.json()) as { id: string };
    return doc.id;
  }

  async health(): Promise<{ status: string; stacks: number; panels: number }> {
    const response = await this.fetchImpl(this.baseUrl + "/health");
    return response.json();
  }
}
