/**
 * Studio acceptance criteria, against a scripted server:
 *   S1 preview fidelity  — pixels outside the mask match the background
 *   S2 state echo        — job detail request equals submitted state
 *   S3 what-if loop      — view_tag resubmission fills a second slot
 *                          without disturbing the first
 */

import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import type { JobDetail, JobRequestJson } from '../src/api.js';
import { ComparisonBoard, entryFromDetail } from '../src/compare.js';
import { JobTracker } from '../src/jobs.js';
import { diffOutsideMask } from '../src/preview.js';
import type { Rgba } from '../src/preview.js';
import { defaultState, echoMismatches, toRequestJson } from '../src/state.js';

/** Server-side paste semantics in miniature: edits only inside the mask. */
function serverPaste(bg: Rgba, box: [number, number, number, number]): { preview: Rgba; mask: Rgba } {
  const preview: Rgba = {
    data: new Uint8ClampedArray(bg.data),
    width: bg.width,
    height: bg.height,
  };
  const mask: Rgba = {
    data: new Uint8ClampedArray(bg.width * bg.height * 4),
    width: bg.width,
    height: bg.height,
  };
  const [x0, y0, x1, y1] = box;
  for (let y = y0; y < y1; y++) {
    for (let x = x0; x < x1; x++) {
      const o = (y * bg.width + x) * 4;
      preview.data[o] = 230;
      preview.data[o + 1] = 120;
      preview.data[o + 2] = 40;
      mask.data[o] = 255;
    }
  }
  return { preview, mask };
}

function background(width: number, height: number): Rgba {
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    data[i * 4] = (i * 7) % 256;
    data[i * 4 + 1] = (i * 13) % 256;
    data[i * 4 + 2] = (i * 29) % 256;
    data[i * 4 + 3] = 255;
  }
  return { data, width, height };
}

describe('S1 preview fidelity', () => {
  it('client-side diff outside the mask is exactly zero', () => {
    const bg = background(32, 32);
    const { preview, mask } = serverPaste(bg, [8, 8, 20, 20]);
    expect(diffOutsideMask(preview, bg, mask)).toBe(0);
    // and the check is not vacuous: inside-mask pixels did change
    const changedInside = preview.data.some((v, i) => v !== bg.data[i]);
    expect(changedInside).toBe(true);
  });
});

function echoServer() {
  const jobs = new Map<string, JobRequestJson>();
  let n = 0;
  const fetchFn = (input: string, init?: RequestInit): Promise<Response> => {
    const json = (status: number, body: unknown) =>
      Promise.resolve(new Response(JSON.stringify(body), { status }));
    if (input === '/jobs' && init?.method === 'POST') {
      const id = `job-${n++}`;
      jobs.set(id, JSON.parse(init.body as string));
      return json(200, { job_id: id, status: 'submitted' });
    }
    const match = input.match(/^\/jobs\/(.+)$/);
    if (match && jobs.has(match[1])) {
      const request = jobs.get(match[1])!;
      const detail: JobDetail = {
        job_id: match[1],
        status: 'done',
        request,
        result: {
          image: `out/${match[1]}/image.png`,
          metadata: `out/${match[1]}/metadata.json`,
          injection_log: `out/${match[1]}/injection_log.json`,
          image_sha256: `sha-${match[1]}`,
        },
        error: null,
      };
      return json(200, detail);
    }
    return json(404, { detail: 'unknown' });
  };
  return fetchFn;
}

describe('S2 state echo', () => {
  it('job detail request equals the submitted studio state field-for-field', async () => {
    const tracker = new JobTracker(new ApiClient('', echoServer()), 1);
    const state = defaultState('mug', 'azimuth=30', 'desk');
    state.seed = 123;
    state.tauQ = 0.35;
    state.placement = { x: 17, y: 9, scale: 1.5, rotation_deg: 10 };

    const detail = await tracker.submitAndWait(toRequestJson(state));
    expect(echoMismatches(state, detail.request)).toEqual([]);
    expect(detail.request).toEqual(toRequestJson(state));
  });
});

describe('S3 what-if loop', () => {
  it('changing only view_tag yields a second slot, first result undisturbed', async () => {
    const tracker = new JobTracker(new ApiClient('', echoServer()), 1);
    const board = new ComparisonBoard();

    const state = defaultState('mug', 'azimuth=30', 'desk');
    const first = await tracker.submitAndWait(toRequestJson(state));
    board.add(entryFromDetail(first, state.viewTag));
    const snapshotA = board.current().slotA;

    state.viewTag = 'azimuth=60'; // the only change
    const second = await tracker.submitAndWait(toRequestJson(state));
    const view = board.add(entryFromDetail(second, state.viewTag));

    expect(view.slotA).toEqual(snapshotA);
    expect(view.slotA?.label).toBe('azimuth=30');
    expect(view.slotB?.label).toBe('azimuth=60');
    expect(view.slotB?.jobId).not.toBe(view.slotA?.jobId);
    expect(view.history).toHaveLength(2);
  });
});
