/** Single-user steering session: append-only intervention history with
 * serialized requests so history order matches request order. */

import { SteerClient, SteerRequest, SteerResponse } from "./api.js";
import { reflectPrefixAt } from "./tokens.js";

export interface HistoryEntry {
  prefix: string;
  request: SteerRequest;
  response: SteerResponse;
  at: number;
}

export class SteerSession {
  private history_: HistoryEntry[] = [];
  private current_: SteerResponse | null = null;
  private queue: Promise<unknown> = Promise.resolve();

  constructor(
    private readonly client: SteerClient,
    public readonly psmId: string,
    private readonly beam: number = 1,
  ) {}

  get history(): readonly HistoryEntry[] {
    return this.history_;
  }

  get current(): SteerResponse | null {
    return this.current_;
  }

  /** Serialize calls: a new steer waits for the one in flight. */
  private enqueue<T>(task: () => Promise<T>): Promise<T> {
    const next = this.queue.then(task);
    this.queue = next.catch(() => undefined);
    return next;
  }

  predict(): Promise<SteerResponse> {
    return this.enqueue(async () => {
      const response = await this.client.predict({
        psm_id: this.psmId,
        beam: this.beam,
      });
      this.current_ = response;
      return response;
    });
  }

  steerWithPrefix(prefix: string): Promise<SteerResponse> {
    return this.enqueue(async () => {
      const request: SteerRequest = {
        psm_id: this.psmId,
        prefix,
        beam: this.beam,
      };
      const response = await this.client.steer(request);
      this.history_.push({ prefix, request, response, at: Date.now() });
      this.current_ = response;
      return response;
    });
  }

  /** Insert a reflection after raw-token position k of the current view. */
  insertReflectAt(k: number): Promise<SteerResponse> {
    const view = this.current_;
    if (view === null) {
      return Promise.reject(new Error("no current prediction to steer from"));
    }
    return this.steerWithPrefix(reflectPrefixAt(view.raw_tokens, k));
  }

  /** Re-issue a history entry's request; the backend is stateless, so the
   * stored response must come back unchanged. */
  replay(index: number): Promise<SteerResponse> {
    const entry = this.history_[index];
    if (entry === undefined) {
      return Promise.reject(new Error(`no history entry ${index}`));
    }
    return this.enqueue(() => this.client.steer(entry.request));
  }
}
