import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import type { JobDetail, JobRequestJson } from '../src/api.js';
import { JobTracker } from '../src/jobs.js';

function request(over: Partial<JobRequestJson> = {}): JobRequestJson {
  return {
    object: 'mug',
    view_tag: 'azimuth=30',
    background: 'desk',
    placement: { x: 4, y: 4, scale: 1, rotation_deg: 0 },
    prompt: null,
    tau_f: 0.2,
    tau_q: 0.5,
    tau_k: 0.5,
    seed: 1,
    guidance: 5,
    style_weight: 0.6,
    content_weight: 0.8,
    num_steps: 50,
    ...over,
  };
}

/** Scripted server: jobs run for `pollsUntilDone` polls, echoing requests. */
function fakeServer(pollsUntilDone = 2) {
  const jobs = new Map<string, { request: JobRequestJson; polls: number }>();
  let counter = 0;
  const fetchFn = (input: string, init?: RequestInit): Promise<Response> => {
    const json = (status: number, body: unknown) =>
      Promise.resolve(new Response(JSON.stringify(body), { status }));
    if (input === '/jobs' && init?.method === 'POST') {
      const body = JSON.parse(init.body as string) as JobRequestJson;
      if (!body.background.startsWith('desk')) {
        return json(400, { detail: 'unknown background', field: 'background' });
      }
      const id = `job-${counter++}`;
      jobs.set(id, { request: body, polls: 0 });
      return json(200, { job_id: id, status: 'submitted' });
    }
    const match = input.match(/^\/jobs\/(.+)$/);
    if (match) {
      const job = jobs.get(match[1]);
      if (!job) return json(404, { detail: 'unknown job' });
      job.polls++;
      const done = job.polls >= pollsUntilDone;
      const detail: JobDetail = {
        job_id: match[1],
        status: done ? 'done' : 'running',
        request: job.request,
        result: done
          ? {
              image: `out/${match[1]}/image.png`,
              metadata: `out/${match[1]}/metadata.json`,
              injection_log: `out/${match[1]}/injection_log.json`,
              image_sha256: `sha-${JSON.stringify(job.request).length}-${job.request.seed}-${job.request.view_tag}`,
            }
          : null,
        error: null,
      };
      return json(200, detail);
    }
    return json(404, { detail: `no route ${input}` });
  };
  return { fetchFn, jobs };
}

describe('JobTracker', () => {
  it('submits, polls to done, and records the lifecycle', async () => {
    const server = fakeServer(3);
    const tracker = new JobTracker(new ApiClient('', server.fetchFn), 1);
    const detail = await tracker.submitAndWait(request());
    expect(detail.status).toBe('done');
    expect(detail.result?.image).toMatch(/image\.png$/);
    expect(tracker.jobs).toHaveLength(1);
    expect(tracker.jobs[0].status).toBe('done');
  });

  it('echoes the submitted request field-for-field', async () => {
    const server = fakeServer(1);
    const tracker = new JobTracker(new ApiClient('', server.fetchFn), 1);
    const sent = request({ seed: 77, tau_q: 0.4 });
    const detail = await tracker.submitAndWait(sent);
    expect(detail.request).toEqual(sent);
  });

  it('surfaces a 400 with the offending field', async () => {
    const server = fakeServer(1);
    const tracker = new JobTracker(new ApiClient('', server.fetchFn), 1);
    await expect(tracker.submitAndWait(request({ background: 'ghost' }))).rejects.toMatchObject({
      status: 400,
      field: 'background',
    });
    expect(tracker.jobs).toHaveLength(0);
  });

  it('same state and seed produce the same result hash', async () => {
    const server = fakeServer(1);
    const tracker = new JobTracker(new ApiClient('', server.fetchFn), 1);
    const a = await tracker.submitAndWait(request({ seed: 5 }));
    const b = await tracker.submitAndWait(request({ seed: 5 }));
    expect(a.result?.image_sha256).toBe(b.result?.image_sha256);
  });
});
