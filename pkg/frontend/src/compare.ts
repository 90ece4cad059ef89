/**
 * Side-by-side comparison: two pinned slots plus a history strip, so the
 * user sees before/after across knob or view changes. New results land in
 * slot B; the previous B is pinned into A (unless A is user-pinned).
 */

import type { JobDetail } from './api.js';

export interface ComparisonEntry {
  jobId: string;
  label: string;
  imagePath: string;
  imageSha256: string;
  request: JobDetail['request'];
}

export interface ComparisonView {
  slotA: ComparisonEntry | null;
  slotB: ComparisonEntry | null;
  history: ComparisonEntry[];
}

export function entryFromDetail(detail: JobDetail, label?: string): ComparisonEntry {
  if (detail.status !== 'done' || !detail.result) {
    throw new Error(`job ${detail.job_id} has no result to compare`);
  }
  return {
    jobId: detail.job_id,
    label: label ?? defaultLabel(detail),
    imagePath: detail.result.image,
    imageSha256: detail.result.image_sha256,
    request: detail.request,
  };
}

function defaultLabel(detail: JobDetail): string {
  const r = detail.request;
  return `${r.object}/${r.view_tag} seed=${r.seed}`;
}

export class ComparisonBoard {
  private view: ComparisonView = { slotA: null, slotB: null, history: [] };
  private pinnedA = false;

  current(): ComparisonView {
    return {
      slotA: this.view.slotA,
      slotB: this.view.slotB,
      history: [...this.view.history],
    };
  }

  /** Pin slot A so subsequent results only rotate through slot B. */
  pinA(): void {
    this.pinnedA = true;
  }

  unpinA(): void {
    this.pinnedA = false;
  }

  /**
   * Add a finished job. The first result fills slot A, later ones fill
   * slot B; existing slots are never mutated, so a what-if resubmission
   * (e.g. a new view_tag) appears beside the prior result untouched.
   */
  add(entry: ComparisonEntry): ComparisonView {
    this.view.history.push(entry);
    if (this.view.slotA === null) {
      this.view.slotA = entry;
    } else if (this.view.slotB === null) {
      this.view.slotB = entry;
    } else if (this.pinnedA) {
      this.view.slotB = entry;
    } else {
      this.view.slotA = this.view.slotB;
      this.view.slotB = entry;
    }
    return this.current();
  }
}
