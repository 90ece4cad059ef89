/**
 * Job submission and polling. The server is the authority on results; the
 * client only tracks ids and statuses.
 */

import type { ApiClient, ApiError, JobDetail, JobRequestJson } from './api.js';

export interface TrackedJob {
  jobId: string;
  request: JobRequestJson;
  status: JobDetail['status'];
  detail: JobDetail | null;
}

export class JobTracker {
  jobs: TrackedJob[] = [];

  constructor(
    private api: ApiClient,
    private pollIntervalMs = 500,
  ) {}

  /**
   * Submit the request and resolve with the terminal job detail. 400s are
   * rethrown with the offending field so the UI can surface the message
   * inline next to the control.
   */
  async submitAndWait(request: JobRequestJson, timeoutMs = 120_000): Promise<JobDetail> {
    let submitted: { job_id: string };
    try {
      submitted = await this.api.submitJob(request);
    } catch (err) {
      throw err as ApiError;
    }
    const tracked: TrackedJob = {
      jobId: submitted.job_id,
      request,
      status: 'submitted',
      detail: null,
    };
    this.jobs.push(tracked);
    const detail = await this.poll(tracked.jobId, timeoutMs);
    tracked.status = detail.status;
    tracked.detail = detail;
    if (detail.status === 'failed') {
      throw { status: 500, detail: detail.error ?? 'job failed' } as ApiError;
    }
    return detail;
  }

  /** Poll until the job reaches a terminal state (done / failed). */
  poll(jobId: string, timeoutMs = 120_000): Promise<JobDetail> {
    const deadline = Date.now() + timeoutMs;
    return new Promise((resolve, reject) => {
      const tick = async () => {
        try {
          const detail = await this.api.getJob(jobId);
          const tracked = this.jobs.find((j) => j.jobId === jobId);
          if (tracked) tracked.status = detail.status;
          if (detail.status === 'done' || detail.status === 'failed') {
            resolve(detail);
            return;
          }
          if (Date.now() > deadline) {
            reject({ status: 0, detail: `job ${jobId} timed out` } as ApiError);
            return;
          }
          setTimeout(() => void tick(), this.pollIntervalMs);
        } catch (err) {
          reject(err);
        }
      };
      void tick();
    });
  }
}
