// Latest-wins request scheduling for the angle picker.
//
// Two guarantees, both load-bearing for the UI contract:
//  - dispatches are spaced >= minIntervalMs apart, so a continuous drag
//    emits at most 1000/minIntervalMs requests per second, and each slot
//    goes to the newest query (intermediate drag positions are skipped);
//  - every issue() supersedes everything before it: a response is delivered
//    only if no newer query has been issued since its dispatch, so a slow or
//    reordered response can never overwrite a newer frame.

export const DEFAULT_MIN_INTERVAL_MS = 105;

type Timer = ReturnType<typeof setTimeout>;

export interface SchedulerCallbacks<Q, T> {
  send: (query: Q) => Promise<T>;
  onResult: (query: Q, value: T) => void;
  onError?: (query: Q, err: unknown) => void;
}

export class LatestWins<Q, T> {
  private issueSeq = 0;
  private pending: { query: Q } | null = null;
  private timer: Timer | null = null;
  private lastDispatchAt = -Infinity;
  private dispatchTimes: number[] = [];

  constructor(
    private readonly cb: SchedulerCallbacks<Q, T>,
    private readonly minIntervalMs = DEFAULT_MIN_INTERVAL_MS,
    private readonly now: () => number = () => Date.now(),
  ) {}

  /** Newest query wins the next dispatch slot; older pending queries are
   * replaced, in-flight ones are superseded. */
  issue(query: Q): void {
    this.issueSeq += 1;
    this.pending = { query };
    if (this.timer === null) {
      const wait = Math.max(0, this.lastDispatchAt + this.minIntervalMs - this.now());
      this.timer = setTimeout(() => this.dispatch(), wait);
    }
  }

  /** Timestamps of every dispatch so far (test hook for the rate bound). */
  get dispatchLog(): readonly number[] {
    return this.dispatchTimes;
  }

  private dispatch(): void {
    this.timer = null;
    if (this.pending === null) return;
    const { query } = this.pending;
    this.pending = null;
    const tag = this.issueSeq;
    this.lastDispatchAt = this.now();
    this.dispatchTimes.push(this.lastDispatchAt);
    this.cb
      .send(query)
      .then((value) => {
        if (tag === this.issueSeq) {
          this.cb.onResult(query, value);
        }
      })
      .catch((err) => {
        if (tag === this.issueSeq) {
          this.cb.onError?.(query, err);
        }
      });
  }
}
