/**
 * Typed client for the segmentation server's HTTP/JSON + PNG API.
 *
 * Every mask byte the UI displays comes through this module; nothing is
 * segmented or mutated locally.
 */

export interface SessionInfo {
  session_id: string;
  c: number;
  h: number;
  w: number;
}

export interface SessionState {
  round: number;
  quality_scores: number[];
  suggested_slice: number | null;
  annotated_slices: number[];
}

export interface GuidanceResponse {
  round: number;
  status: string;
}

export interface RleMask {
  slice_index: number;
  shape: [number, number];
  order: string;
  counts: number[];
}

export interface SyntheticSpec {
  shape?: [number, number, number];
  kind?: string;
  drift_px?: number;
  radius_range?: [number, number];
  noise_level?: number;
  contrast?: number;
  seed?: number;
}

export interface CreateSessionBody {
  path?: string;
  format?: string;
  synthetic?: SyntheticSpec;
}

export interface GuidanceBody {
  slice_index: number;
  type: string;
  geometry: Record<string, unknown>;
}

export class ApiError extends Error {
  readonly status: number;
  readonly field: string | null;

  constructor(status: number, message: string, field: string | null = null) {
    super(message);
    this.status = status;
    this.field = field;
    this.name = "ApiError";
  }
}

async function raiseFor(response: Response): Promise<never> {
  let message = `${response.status} ${response.statusText}`;
  let field: string | null = null;
  try {
    const body = (await response.json()) as { detail?: unknown };
    const detail = body.detail;
    if (typeof detail === "string") {
      message = detail;
    } else if (detail !== null && typeof detail === "object") {
      const d = detail as { field?: string; message?: string };
      field = d.field ?? null;
      message = d.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(response.status, message, field);
}

export class ApiClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      await raiseFor(response);
    }
    return (await response.json()) as T;
  }

  createSession(body: CreateSessionBody): Promise<SessionInfo> {
    return this.json<SessionInfo>("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async deleteSession(sessionId: string): Promise<void> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}`, {
      method: "DELETE",
    });
    if (!response.ok) {
      await raiseFor(response);
    }
  }

  sliceUrl(sessionId: string, k: number, window?: [number, number]): string {
    const query = window ? `?window=${window[0]},${window[1]}` : "";
    return `${this.baseUrl}/sessions/${sessionId}/slices/${k}${query}`;
  }

  maskUrl(sessionId: string, k: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/masks/${k}`;
  }

  async fetchSlicePng(
    sessionId: string,
    k: number,
    window?: [number, number],
  ): Promise<Uint8Array> {
    const response = await fetch(this.sliceUrl(sessionId, k, window));
    if (!response.ok) {
      await raiseFor(response);
    }
    return new Uint8Array(await response.arrayBuffer());
  }

  async fetchMaskPng(sessionId: string, k: number): Promise<Uint8Array> {
    const response = await fetch(this.maskUrl(sessionId, k));
    if (!response.ok) {
      await raiseFor(response);
    }
    return new Uint8Array(await response.arrayBuffer());
  }

  fetchMaskRle(sessionId: string, k: number): Promise<RleMask> {
    return this.json<RleMask>(`/sessions/${sessionId}/masks/${k}?format=rle`);
  }

  submitGuidance(sessionId: string, body: GuidanceBody): Promise<GuidanceResponse> {
    return this.json<GuidanceResponse>(`/sessions/${sessionId}/guidance`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  fetchState(sessionId: string): Promise<SessionState> {
    return this.json<SessionState>(`/sessions/${sessionId}/state`);
  }
}

/** Expand run-length counts (background first) into a binary mask. */
export function decodeRle(mask: RleMask): Uint8Array {
  const [h, w] = mask.shape;
  const out = new Uint8Array(h * w);
  let offset = 0;
  let value = 0;
  for (const count of mask.counts) {
    if (value === 1) {
      out.fill(1, offset, offset + count);
    }
    offset += count;
    value = 1 - value;
  }
  if (offset !== h * w) {
    throw new Error(`RLE counts cover ${offset} pixels, expected ${h * w}`);
  }
  return out;
}

/**
 * The slice the engine would suggest next: lowest quality score among
 * slices not yet annotated, ties broken by slice index. Used to check the
 * badge against the server's own suggestion.
 */
export function argminQuality(
  scores: readonly number[],
  annotated: readonly number[],
): number | null {
  const taken = new Set(annotated);
  let best: number | null = null;
  for (let k = 0; k < scores.length; k++) {
    if (taken.has(k)) {
      continue;
    }
    if (best === null || scores[k]! < scores[best]!) {
      best = k;
    }
  }
  return best;
}
