/**
 * Typed client for the frame server: /healthz, /info, and POST /render.
 */

export interface Info {
  n_gaussians: number;
  trained_ratios: number[];
  bounds: { lo: number[]; hi: number[] };
}

export interface RenderRequest {
  ratio: number;
  /** Row-major 4x4 world-to-camera matrix. */
  camera: number[][];
  width: number;
  height: number;
  fx?: number;
  fy?: number;
}

export interface Frame {
  png: Blob;
  /** Round-trip latency of the request, milliseconds. */
  ms: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** A response the server answered deliberately (400/404/422 with a body). */
export class ApiError extends Error {
  constructor(readonly status: number, message: string, readonly field?: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function toApiError(resp: Response): Promise<ApiError> {
  let message = `request failed with status ${resp.status}`;
  let field: string | undefined;
  try {
    const body = await resp.json();
    if (body !== null && typeof body.error === "string") {
      message = body.error;
      field = typeof body.field === "string" ? body.field : undefined;
    }
  } catch {
    // non-JSON error body; keep the status message
  }
  return new ApiError(resp.status, message, field);
}

export async function fetchInfo(base: string, f: FetchLike = fetch): Promise<Info> {
  const resp = await f(new URL("/info", base).toString());
  if (!resp.ok) {
    throw await toApiError(resp);
  }
  return (await resp.json()) as Info;
}

export async function fetchHealth(base: string, f: FetchLike = fetch): Promise<boolean> {
  const resp = await f(new URL("/healthz", base).toString());
  return resp.ok;
}

/**
 * One rendered frame. The PNG bytes are passed through untouched, so the
 * displayed image is pixel-identical to what the server rendered.
 */
export async function renderFrame(
  base: string,
  request: RenderRequest,
  f: FetchLike = fetch,
  now: () => number = () => Date.now(),
): Promise<Frame> {
  const started = now();
  const resp = await f(new URL("/render", base).toString(), {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(request),
  });
  if (!resp.ok) {
    throw await toApiError(resp);
  }
  const png = await resp.blob();
  return { png, ms: now() - started };
}

export interface ConnectOptions {
  onStatus?: (online: boolean) => void;
  retryMs?: number;
  f?: FetchLike;
  sleep?: (ms: number) => Promise<void>;
}

/**
 * Fetch /info, retrying forever while the server is unreachable.
 *
 * Network failures flip `onStatus(false)` and retry after `retryMs`; a
 * deliberate server answer (ApiError) propagates, since retrying a 404
 * would loop on a configuration mistake rather than an outage.
 */
export async function connect(base: string, options: ConnectOptions = {}): Promise<Info> {
  const retryMs = options.retryMs ?? 2000;
  const sleep = options.sleep ?? ((ms: number) => new Promise<void>((r) => setTimeout(r, ms)));
  for (;;) {
    try {
      const info = await fetchInfo(base, options.f);
      options.onStatus?.(true);
      return info;
    } catch (error) {
      if (error instanceof ApiError) {
        throw error;
      }
      options.onStatus?.(false);
      await sleep(retryMs);
    }
  }
}
