/**
 * Debounced, single-flight dispatcher for render requests.
 *
 * During a drag the session schedules a request every mouse move; only
 * the latest payload survives the debounce window, and while a request
 * is in flight newer payloads replace any queued one (latest-wins), so
 * the server never sees more than one concurrent render.
 */

export class RenderScheduler<T, R> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private queued: T | null = null;

  constructor(private send: (payload: T) => Promise<R>,
              private onResult: (payload: T, result: R) => void,
              private onError: (error: unknown) => void = () => {},
              private delayMs: number = 150) {}

  schedule(payload: T): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
    }
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.dispatch(payload);
    }, this.delayMs);
  }

  /** Bypass the debounce window (initial load, undo). */
  immediate(payload: T): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    void this.dispatch(payload);
  }

  private async dispatch(payload: T): Promise<void> {
    if (this.inFlight) {
      this.queued = payload; // newer drags supersede pending ones
      return;
    }
    this.inFlight = true;
    try {
      const result = await this.send(payload);
      this.onResult(payload, result);
    } catch (error) {
      this.onError(error);
    } finally {
      this.inFlight = false;
      if (this.queued !== null) {
        const next = this.queued;
        this.queued = null;
        void this.dispatch(next);
      }
    }
  }
}
