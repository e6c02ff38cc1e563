import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "./api.js";
import { DEFAULT_SESSION } from "./core.js";

const HITS = [
  { id: "b", distance: 0.3, lesion_type: "x", patient_id: "p", thumbnail_url: "/t/b.png" },
  { id: "a", distance: 0.1, lesion_type: "y", patient_id: "q", thumbnail_url: "/t/a.png" },
];

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient.query", () => {
  it("returns the server body untouched (no client-side sorting)", async () => {
    const fetchMock = vi.fn(async () => jsonResponse(HITS));
    const client = new ApiClient("http://svc", fetchMock as unknown as typeof fetch);
    const hits = await client.query(new Blob([""]), "q.png", DEFAULT_SESSION);
    expect(hits.map((h) => h.id)).toEqual(["b", "a"]);
  });

  it("posts multipart form data with the session parameters", async () => {
    const fetchMock = vi.fn(async () => jsonResponse([]));
    const client = new ApiClient("http://svc", fetchMock as unknown as typeof fetch);
    await client.query(
      new Blob(["img"]),
      "q.png",
      { k: 5, setting: "cross_patient", patientId: "p7" },
      [1, 2, 30, 40],
    );
    const [url, init] = fetchMock.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe("http://svc/api/v1/query");
    const form = init.body as FormData;
    expect(form.get("k")).toBe("5");
    expect(form.get("setting")).toBe("cross_patient");
    expect(form.get("patient_id")).toBe("p7");
    expect(form.get("bbox")).toBe("1,2,30,40");
  });

  it("aborts the previous in-flight query when a new one starts", async () => {
    const seenSignals: AbortSignal[] = [];
    const fetchMock = vi.fn((_url: string, init: RequestInit) => {
      seenSignals.push(init.signal as AbortSignal);
      return new Promise<Response>((resolve) => {
        setTimeout(() => resolve(jsonResponse([])), 5);
      });
    });
    const client = new ApiClient("http://svc", fetchMock as unknown as typeof fetch);
    const first = client.query(new Blob([""]), "a.png", DEFAULT_SESSION);
    const second = client.query(new Blob([""]), "b.png", DEFAULT_SESSION);
    await Promise.all([first, second]);
    expect(seenSignals[0].aborted).toBe(true);
    expect(seenSignals[1].aborted).toBe(false);
  });

  it("surfaces non-2xx responses as ApiError with the verbatim detail", async () => {
    const fetchMock = vi.fn(async () =>
      jsonResponse({ detail: "no candidates under setting 'cross_patient'" }, 422),
    );
    const client = new ApiClient("http://svc", fetchMock as unknown as typeof fetch);
    await expect(client.query(new Blob([""]), "q.png", DEFAULT_SESSION)).rejects.toMatchObject({
      status: 422,
      detail: "no candidates under setting 'cross_patient'",
    });
  });
});

describe("ApiClient annotations and stats", () => {
  it("posts annotation bodies as-is", async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ stored: 1, image_id: "roi-0" }));
    const client = new ApiClient("http://svc", fetchMock as unknown as typeof fetch);
    const body = '{"image_id": "roi-0"}';
    const reply = await client.postAnnotation(body);
    expect(reply.stored).toBe(1);
    const [, init] = fetchMock.mock.calls[0] as unknown as [string, RequestInit];
    expect(init.body).toBe(body);
  });

  it("maps 404 on unknown annotation targets", async () => {
    const fetchMock = vi.fn(async () => jsonResponse({ detail: "unknown image_id" }, 404));
    const client = new ApiClient("http://svc", fetchMock as unknown as typeof fetch);
    await expect(client.getAnnotations("ghost")).rejects.toBeInstanceOf(ApiError);
  });

  it("reads filter-preview info from the response header", async () => {
    const fetchMock = vi.fn(
      async () =>
        new Response(new Blob([new Uint8Array([137, 80, 78, 71])]), {
          status: 200,
          headers: {
            "Content-Type": "image/png",
            "X-Filter-Info": JSON.stringify({
              width: 64,
              height: 64,
              band: 1,
              band_count: 4,
              scales: [3, 5],
            }),
          },
        }),
    );
    const client = new ApiClient("http://svc", fetchMock as unknown as typeof fetch);
    const result = await client.filterPreview(new Blob([""]), "q.png", 1, 4);
    expect(result.info.band).toBe(1);
    expect(result.info.scales).toEqual([3, 5]);
    expect(result.pngBlob.size).toBeGreaterThan(0);
  });
});
