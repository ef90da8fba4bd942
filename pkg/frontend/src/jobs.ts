import type { ServiceClient } from './api.js';
import type { JobEvent, JobView } from './types.js';

export interface JobWatchOptions {
  intervalMs?: number;
  onEvent?: (event: JobEvent) => void;
  /** EventSource constructor; omit to force polling (tests, old browsers). */
  eventSource?: typeof EventSource;
}

class JobFailedError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'JobFailedError';
  }
}

/**
 * Poll a job until it reaches a terminal state. Resolves with the final job
 * on done, rejects with the job's error message on failed.
 */
export function pollJob(
  client: ServiceClient,
  jobId: string,
  intervalMs = 500,
  onProgress?: (job: JobView) => void,
): Promise<JobView> {
  return new Promise((resolve, reject) => {
    const tick = async () => {
      let job: JobView;
      try {
        job = await client.getJob(jobId);
      } catch (err) {
        reject(err);
        return;
      }
      onProgress?.(job);
      if (job.state === 'done') {
        resolve(job);
      } else if (job.state === 'failed') {
        reject(new JobFailedError(job.error ?? 'job failed'));
      } else {
        setTimeout(tick, intervalMs);
      }
    };
    tick();
  });
}

/**
 * Follow a job over its event stream when an EventSource constructor is
 * supplied, otherwise by polling. Progress and lifecycle events reach
 * onEvent either way; the returned promise settles on the terminal event
 * exactly like pollJob.
 */
export function watchJob(
  client: ServiceClient,
  jobId: string,
  options: JobWatchOptions = {},
): Promise<JobView> {
  const EventSourceImpl = options.eventSource;
  if (EventSourceImpl === undefined) {
    return pollJob(client, jobId, options.intervalMs ?? 500, (job) => {
      options.onEvent?.({
        event: 'training-progress',
        job_id: job.job_id,
        step: job.progress.step,
        loss: job.progress.loss,
      });
    });
  }

  return new Promise((resolve, reject) => {
    const source = new EventSourceImpl(client.jobEventsUrl(jobId));
    const finish = (settle: () => void) => {
      source.close();
      settle();
    };
    source.onmessage = (message: MessageEvent) => {
      let event: JobEvent;
      try {
        event = JSON.parse(message.data as string) as JobEvent;
      } catch {
        return;
      }
      options.onEvent?.(event);
      if (event.event === 'job-done') {
        finish(() => client.getJob(jobId).then(resolve, reject));
      } else if (event.event === 'job-failed') {
        finish(() => reject(new JobFailedError(String(event.error ?? 'job failed'))));
      }
    };
    source.onerror = () => {
      // Stream dropped; the job may still be running, so fall back to polling.
      finish(() => pollJob(client, jobId, options.intervalMs ?? 500).then(resolve, reject));
    };
  });
}
