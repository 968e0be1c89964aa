import { afterEach, describe, expect, it, vi } from "vitest";

import {
  ApiClient,
  ApiError,
  isOrientCode,
  parsePrediction,
  parseUploadResult,
} from "./api.js";

const uploadPayload = { id: "ab12", n_slices: 4, shape: [64, 64, 4], max_gray: 250.5 };

const predictionPayload = {
  slices: [
    { index: 0, code: "101", confidence: 0.92, probs: Array(8).fill(0.125) },
    { index: 1, code: "101", confidence: 0.88, probs: Array(8).fill(0.125) },
  ],
  consensus: "101",
  confidence: 0.9,
  unanimous: true,
};

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

afterEach(() => {
  vi.restoreAllMocks();
});

describe("isOrientCode", () => {
  it("accepts exactly the 8 codes", () => {
    const ok = ["000", "001", "010", "011", "100", "101", "110", "111"];
    for (const c of ok) expect(isOrientCode(c)).toBe(true);
    for (const c of ["", "00", "0000", "102", "abc", 5, null]) {
      expect(isOrientCode(c)).toBe(false);
    }
  });
});

describe("response validation", () => {
  it("parses a well-formed upload result", () => {
    const r = parseUploadResult(uploadPayload);
    expect(r).toEqual({ id: "ab12", nSlices: 4, shape: [64, 64, 4], maxGray: 250.5 });
  });

  it.each([
    [{ ...uploadPayload, id: "" }],
    [{ ...uploadPayload, n_slices: "four" }],
    [{ ...uploadPayload, shape: "nope" }],
    [null],
    ["just a string"],
  ])("rejects malformed upload result %#", (bad) => {
    expect(() => parseUploadResult(bad)).toThrow(ApiError);
  });

  it("parses a well-formed prediction", () => {
    const p = parsePrediction(predictionPayload);
    expect(p.consensus).toBe("101");
    expect(p.slices).toHaveLength(2);
    expect(p.slices[0]?.probs).toHaveLength(8);
    expect(p.unanimous).toBe(true);
  });

  it.each([
    [{ ...predictionPayload, consensus: "999" }],
    [{ ...predictionPayload, slices: "none" }],
    [{
      ...predictionPayload,
      slices: [{ index: 0, code: "101", confidence: 0.9, probs: [0.5, 0.5] }],
    }],
  ])("rejects malformed prediction %#", (bad) => {
    expect(() => parsePrediction(bad)).toThrow(ApiError);
  });
});

describe("ApiClient", () => {
  it("upload posts octet-stream and returns the parsed result", async () => {
    const fetchMock = vi.spyOn(globalThis, "fetch")
      .mockResolvedValue(jsonResponse(uploadPayload));
    const r = await new ApiClient().upload(new Blob([new Uint8Array([1, 2])]));
    expect(r.id).toBe("ab12");
    const [url, init] = fetchMock.mock.calls[0]!;
    expect(url).toBe("/volumes");
    expect(init?.method).toBe("POST");
    expect((init?.headers as Record<string, string>)["Content-Type"])
      .toBe("application/octet-stream");
  });

  it("surfaces the service error detail with the status code", async () => {
    vi.spyOn(globalThis, "fetch")
      .mockResolvedValue(jsonResponse({ detail: "upload too large" }, 413));
    const err = await new ApiClient().upload(new Blob([])).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(413);
    expect(err.message).toBe("upload too large");
  });

  it("falls back to the status line on a non-JSON error body", async () => {
    vi.spyOn(globalThis, "fetch")
      .mockResolvedValue(new Response("boom", { status: 500 }));
    const err = await new ApiClient().prediction("x").catch((e) => e);
    expect(err.message).toBe("HTTP 500");
  });

  it("adjust sends the code as JSON and parses the new prediction", async () => {
    const fetchMock = vi.spyOn(globalThis, "fetch").mockResolvedValue(
      jsonResponse({ ...predictionPayload, consensus: "000" }));
    const p = await new ApiClient().adjust("ab12", "101");
    expect(p.consensus).toBe("000");
    const [url, init] = fetchMock.mock.calls[0]!;
    expect(url).toBe("/volumes/ab12/adjust");
    expect(JSON.parse(init?.body as string)).toEqual({ code: "101" });
  });

  it("rejects a malformed prediction from the wire", async () => {
    vi.spyOn(globalThis, "fetch")
      .mockResolvedValue(jsonResponse({ consensus: "101" }));
    await expect(new ApiClient().prediction("ab12")).rejects.toThrow(ApiError);
  });

  it("sliceUrl respects the configured base", () => {
    expect(new ApiClient("..").sliceUrl("ab12", 3)).toBe("../volumes/ab12/slices/3");
  });

  it("save returns the blob on success and throws on 404", async () => {
    vi.spyOn(globalThis, "fetch")
      .mockResolvedValueOnce(new Response(new Uint8Array([1, 2, 3])))
      .mockResolvedValueOnce(jsonResponse({ detail: "unknown volume id" }, 404));
    const blob = await new ApiClient().save("ab12");
    expect(blob.size).toBe(3);
    const err = await new ApiClient().save("nope").catch((e) => e);
    expect(err.status).toBe(404);
  });
});
