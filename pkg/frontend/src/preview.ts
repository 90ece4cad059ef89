/**
 * Live paste preview: debounced server calls while dragging, mask-outline
 * overlay, and the client-side diff that verifies pixels outside the mask
 * are identical to the raw background asset.
 */

import type { ApiClient, PlacementJson, PreviewResponse } from './api.js';

export interface Rgba {
  data: Uint8ClampedArray; // RGBA, 4 bytes per pixel
  width: number;
  height: number;
}

/**
 * Count pixels outside the mask whose RGB differs between the preview and
 * the background asset. Pasting must never touch unmasked pixels, so a
 * faithful preview returns 0.
 */
export function diffOutsideMask(preview: Rgba, background: Rgba, mask: Rgba): number {
  if (
    preview.width !== background.width ||
    preview.height !== background.height ||
    preview.width !== mask.width ||
    preview.height !== mask.height
  ) {
    throw new Error('preview, background and mask must share dimensions');
  }
  let differing = 0;
  const n = preview.width * preview.height;
  for (let i = 0; i < n; i++) {
    const o = i * 4;
    if (mask.data[o] > 127) continue; // inside the editing mask
    if (
      preview.data[o] !== background.data[o] ||
      preview.data[o + 1] !== background.data[o + 1] ||
      preview.data[o + 2] !== background.data[o + 2]
    ) {
      differing++;
    }
  }
  return differing;
}

/** Trace the mask boundary: returns pixel indices to paint as the outline. */
export function maskOutline(mask: Rgba): number[] {
  const { width, height, data } = mask;
  const inside = (x: number, y: number) =>
    x >= 0 && x < width && y >= 0 && y < height && data[(y * width + x) * 4] > 127;
  const outline: number[] = [];
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (!inside(x, y)) continue;
      if (!inside(x - 1, y) || !inside(x + 1, y) || !inside(x, y - 1) || !inside(x, y + 1)) {
        outline.push(y * width + x);
      }
    }
  }
  return outline;
}

export type PreviewListener = (result: PreviewResponse) => void;
export type PreviewErrorListener = (message: string) => void;

/**
 * Debounces preview requests while the user drags and keeps the last good
 * response when the server errors (the UI shows a toast instead of
 * clearing the canvas).
 */
export class PreviewLoop {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private pending: (() => void) | null = null;
  lastGood: PreviewResponse | null = null;

  constructor(
    private api: ApiClient,
    private onResult: PreviewListener,
    private onError: PreviewErrorListener,
    private debounceMs = 120,
  ) {}

  /** Schedule a preview for the current state; rapid calls coalesce. */
  schedule(body: { object: string; view_tag: string; background: string; placement: PlacementJson }): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire(body);
    }, this.debounceMs);
  }

  private async fire(body: {
    object: string;
    view_tag: string;
    background: string;
    placement: PlacementJson;
  }): Promise<void> {
    if (this.inFlight) {
      this.pending = () => void this.fire(body);
      return;
    }
    this.inFlight = true;
    try {
      const result = await this.api.preview(body);
      this.lastGood = result;
      this.onResult(result);
    } catch (err) {
      const detail = (err as { detail?: string }).detail ?? String(err);
      this.onError(detail);
      if (this.lastGood) this.onResult(this.lastGood);
    } finally {
      this.inFlight = false;
      if (this.pending) {
        const next = this.pending;
        this.pending = null;
        next();
      }
    }
  }
}
