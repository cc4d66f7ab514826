/**
 * Debounced single-flight render dispatcher with latest-wins semantics.
 */

export interface Timers {
  set(fn: () => void, ms: number): unknown;
  clear(handle: unknown): void;
}

const realTimers: Timers = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (handle) => clearTimeout(handle as ReturnType<typeof setTimeout>),
};

export interface RenderLoop<S> {
  /** Record the newest desired state; never blocks, never throws. */
  update(state: S): void;
  inFlight(): boolean;
}

export interface RenderLoopOptions<S, F> {
  render: (state: S) => Promise<F>;
  onFrame: (state: S, frame: F) => void;
  onError: (state: S, error: unknown) => void;
  debounceMs?: number;
  timers?: Timers;
}

/**
 * At most one request is in the air at a time; updates within the trailing
 * debounce window coalesce to the newest state. A state arriving mid-flight
 * dispatches the moment the current request settles, skipping the debounce
 * wait. Flights never overlap, so responses arrive in dispatch order and
 * every delivered frame can be shown without reordering; a failed flight
 * reports through onError and leaves the previous frame in place.
 */
export function createRenderLoop<S, F>(options: RenderLoopOptions<S, F>): RenderLoop<S> {
  const debounceMs = options.debounceMs ?? 100;
  const timers = options.timers ?? realTimers;
  let latest!: S;
  let newest = 0;
  let dispatched = 0;
  let flying = false;
  let handle: unknown;

  function dispatch(): void {
    const state = latest;
    dispatched = newest;
    flying = true;
    options.render(state).then(
      (frame) => options.onFrame(state, frame),
      (error) => options.onError(state, error),
    ).then(() => {
      flying = false;
      if (dispatched < newest) {
        dispatch();
      }
    });
  }

  function fire(): void {
    handle = undefined;
    if (!flying && dispatched < newest) {
      dispatch();
    }
  }

  return {
    update(state: S): void {
      latest = state;
      newest++;
      if (handle !== undefined) {
        timers.clear(handle);
      }
      handle = timers.set(fire, debounceMs);
    },
    inFlight(): boolean {
      return flying;
    },
  };
}
