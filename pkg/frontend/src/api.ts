/** Typed client for the orientation service HTTP API.
 *
 * Every response is validated before it reaches the rest of the app;
 * a malformed payload throws ApiError rather than leaking `any`.
 */

export const ORIENT_CODES = [
  "000", "001", "010", "011", "100", "101", "110", "111",
] as const;

export type OrientCode = (typeof ORIENT_CODES)[number];

export function isOrientCode(v: unknown): v is OrientCode {
  return typeof v === "string" && (ORIENT_CODES as readonly string[]).includes(v);
}

export interface UploadResult {
  id: string;
  nSlices: number;
  shape: number[];
  maxGray: number;
}

export interface SlicePrediction {
  index: number;
  code: OrientCode;
  confidence: number;
  probs: number[];
}

export interface Prediction {
  slices: SlicePrediction[];
  consensus: OrientCode;
  confidence: number;
  unanimous: boolean;
}

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
    this.name = "ApiError";
  }
}

function asRecord(v: unknown, what: string): Record<string, unknown> {
  if (typeof v !== "object" || v === null || Array.isArray(v)) {
    throw new ApiError(`malformed ${what}: not an object`);
  }
  return v as Record<string, unknown>;
}

function asNumber(v: unknown, what: string): number {
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new ApiError(`malformed ${what}: expected a number`);
  }
  return v;
}

function asCode(v: unknown, what: string): OrientCode {
  if (!isOrientCode(v)) throw new ApiError(`malformed ${what}: bad code ${String(v)}`);
  return v;
}

export function parseUploadResult(raw: unknown): UploadResult {
  const r = asRecord(raw, "upload result");
  if (typeof r.id !== "string" || r.id.length === 0) {
    throw new ApiError("malformed upload result: missing id");
  }
  if (!Array.isArray(r.shape) || !r.shape.every((x) => typeof x === "number")) {
    throw new ApiError("malformed upload result: bad shape");
  }
  return {
    id: r.id,
    nSlices: asNumber(r.n_slices, "upload result n_slices"),
    shape: r.shape as number[],
    maxGray: asNumber(r.max_gray, "upload result max_gray"),
  };
}

export function parsePrediction(raw: unknown): Prediction {
  const r = asRecord(raw, "prediction");
  if (!Array.isArray(r.slices)) throw new ApiError("malformed prediction: slices");
  const slices = r.slices.map((s, i) => {
    const rec = asRecord(s, `slice ${i}`);
    const probs = rec.probs;
    if (!Array.isArray(probs) || probs.length !== 8
        || !probs.every((p) => typeof p === "number")) {
      throw new ApiError(`malformed prediction: slice ${i} probs`);
    }
    return {
      index: asNumber(rec.index, `slice ${i} index`),
      code: asCode(rec.code, `slice ${i} code`),
      confidence: asNumber(rec.confidence, `slice ${i} confidence`),
      probs: probs as number[],
    };
  });
  return {
    slices,
    consensus: asCode(r.consensus, "consensus"),
    confidence: asNumber(r.confidence, "confidence"),
    unanimous: r.unanimous === true,
  };
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
  } catch {
    /* non-JSON error body */
  }
  return `HTTP ${res.status}`;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private async checked(res: Response): Promise<unknown> {
    if (!res.ok) throw new ApiError(await errorDetail(res), res.status);
    return res.json();
  }

  async upload(data: Blob | ArrayBuffer): Promise<UploadResult> {
    const res = await fetch(`${this.base}/volumes`, {
      method: "POST",
      headers: { "Content-Type": "application/octet-stream" },
      body: data,
    });
    return parseUploadResult(await this.checked(res));
  }

  sliceUrl(id: string, k: number): string {
    return `${this.base}/volumes/${id}/slices/${k}`;
  }

  async prediction(id: string): Promise<Prediction> {
    const res = await fetch(`${this.base}/volumes/${id}/prediction`);
    return parsePrediction(await this.checked(res));
  }

  async adjust(id: string, code: OrientCode): Promise<Prediction> {
    const res = await fetch(`${this.base}/volumes/${id}/adjust`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ code }),
    });
    return parsePrediction(await this.checked(res));
  }

  async save(id: string): Promise<Blob> {
    const res = await fetch(`${this.base}/volumes/${id}/save`, { method: "POST" });
    if (!res.ok) throw new ApiError(await errorDetail(res), res.status);
    return res.blob();
  }
}
