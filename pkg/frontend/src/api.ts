/** Typed client for the job service: JSON endpoints plus the server-sent
 * event stream. Event subscriptions resume automatically after a dropped
 * connection, replaying from the last sequence number seen.
 */
import type {
  JobDoc,
  JobEvent,
  JobSpec,
  RefineOverride,
  Violation,
  VocabDoc,
} from "./types";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

/** 422 with a per-field breakdown the form can render inline. */
export class ValidationError extends ApiError {
  constructor(
    message: string,
    readonly violations: Violation[],
  ) {
    super(message, 422);
  }

  byField(): Map<string, string> {
    const map = new Map<string, string>();
    for (const v of this.violations) {
      if (!map.has(v.field)) {
        map.set(v.field, v.message);
      }
    }
    return map;
  }
}

/** 409: the job is not in a state that permits the request. */
export class ConflictError extends ApiError {
  constructor(message: string) {
    super(message, 409);
  }
}

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export interface SSEFrame {
  id: number | null;
  data: string;
}

/** Incremental parser for `id:` / `data:` framed event streams. Feed it
 * arbitrary chunk boundaries; complete frames come out in order. */
export class SSEParser {
  private buffer = "";
  private pendingId: number | null = null;
  private pendingData: string[] = [];

  push(chunk: string): SSEFrame[] {
    this.buffer += chunk;
    const frames: SSEFrame[] = [];
    for (;;) {
      const newline = this.buffer.indexOf("\n");
      if (newline < 0) {
        break;
      }
      let line = this.buffer.slice(0, newline);
      this.buffer = this.buffer.slice(newline + 1);
      if (line.endsWith("\r")) {
        line = line.slice(0, -1);
      }
      if (line === "") {
        if (this.pendingData.length > 0) {
          frames.push({
            id: this.pendingId,
            data: this.pendingData.join("\n"),
          });
        }
        this.pendingId = null;
        this.pendingData = [];
      } else if (line.startsWith("id:")) {
        const value = Number(line.slice(3).trim());
        this.pendingId = Number.isNaN(value) ? null : value;
      } else if (line.startsWith("data:")) {
        this.pendingData.push(line.slice(5).replace(/^ /, ""));
      }
      // other fields (event:, retry:, comments) are ignored
    }
    return frames;
  }
}

export interface SubscribeOptions {
  signal?: AbortSignal;
  /** Delay before resubscribing after a dropped stream. */
  retryDelayMs?: number;
  /** Resume after this sequence number instead of from the beginning. */
  fromSeq?: number;
}

function delay(ms: number, signal?: AbortSignal): Promise<void> {
  return new Promise((resolve) => {
    const timer = setTimeout(done, ms);
    function done(): void {
      signal?.removeEventListener("abort", done);
      clearTimeout(timer);
      resolve();
    }
    signal?.addEventListener("abort", done);
  });
}

export class TcigClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  url(path: string): string {
    return this.baseUrl + path;
  }

  artifactUrl(artifactId: string): string {
    return this.url(`/artifacts/${artifactId}`);
  }

  private async checked(path: string, init?: RequestInit): Promise<Response> {
    const res = await this.fetchImpl(this.url(path), init);
    if (res.ok) {
      return res;
    }
    let body: any = null;
    try {
      body = await res.json();
    } catch {
      // non-JSON error body; fall through with the status alone
    }
    const detail = body?.detail ?? `request failed (${res.status})`;
    if (res.status === 422) {
      throw new ValidationError(detail, body?.violations ?? []);
    }
    if (res.status === 409) {
      throw new ConflictError(detail);
    }
    throw new ApiError(detail, res.status);
  }

  async submitJob(spec: JobSpec): Promise<{ id: string; status: string }> {
    const res = await this.checked("/jobs", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(spec),
    });
    return res.json();
  }

  async getJob(jobId: string): Promise<JobDoc> {
    const res = await this.checked(`/jobs/${jobId}`);
    return res.json();
  }

  async selectCandidates(
    jobId: string,
    stage1Ids: string[],
    refine?: RefineOverride,
  ): Promise<JobDoc> {
    const body: Record<string, unknown> = { stage1_ids: stage1Ids };
    if (refine !== undefined) {
      body["refine"] = refine;
    }
    const res = await this.checked(`/jobs/${jobId}/select`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return res.json();
  }

  async getVocab(): Promise<VocabDoc> {
    const res = await this.checked("/vocab");
    return res.json();
  }

  async fetchArtifact(artifactId: string): Promise<Uint8Array> {
    const res = await this.checked(`/artifacts/${artifactId}`);
    return new Uint8Array(await res.arrayBuffer());
  }

  /** Follow a job's event stream until its terminal event, invoking
   * `onEvent(seq, event)` for each event exactly once, in order. Dropped
   * connections resubscribe with a Last-Event-ID replay cursor. */
  async subscribeEvents(
    jobId: string,
    onEvent: (seq: number, event: JobEvent) => void,
    options: SubscribeOptions = {},
  ): Promise<void> {
    let last = options.fromSeq ?? -1;
    const retryDelayMs = options.retryDelayMs ?? 1000;
    for (;;) {
      if (options.signal?.aborted) {
        return;
      }
      let sawTerminal = false;
      try {
        const headers: Record<string, string> = {
          Accept: "text/event-stream",
        };
        if (last >= 0) {
          headers["Last-Event-ID"] = String(last);
        }
        const res = await this.fetchImpl(this.url(`/jobs/${jobId}/events`), {
          headers,
          signal: options.signal,
        });
        if (res.status === 404) {
          throw new ApiError("unknown job", 404);
        }
        if (!res.ok || res.body === null) {
          throw new ApiError(`event stream failed (${res.status})`, res.status);
        }
        const reader = res.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SSEParser();
        for (;;) {
          const { done, value } = await reader.read();
          const text = done
            ? decoder.decode()
            : decoder.decode(value, { stream: true });
          for (const frame of parser.push(text)) {
            const event = JSON.parse(frame.data) as JobEvent;
            const seq = frame.id ?? last + 1;
            if (seq <= last) {
              continue; // replay overlap; already delivered
            }
            last = seq;
            onEvent(seq, event);
            if (event.type === "terminal") {
              sawTerminal = true;
            }
          }
          if (done) {
            break;
          }
        }
      } catch (err) {
        if (options.signal?.aborted) {
          return;
        }
        if (err instanceof ApiError && err.status === 404) {
          throw err; // the job does not exist; retrying cannot help
        }
        // network drop or mid-stream failure: resubscribe below
      }
      if (sawTerminal || options.signal?.aborted) {
        return;
      }
      await delay(retryDelayMs, options.signal);
    }
  }
}
