/**
 * Thin client for the /api/v1 endpoints. One query may be in flight per
 * client: starting a new one aborts the previous request so a stale
 * response can never render over a newer one.
 */

import type { AnnotationDraft, QueryHit, QuerySession } from "./core.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(`HTTP ${status}`);
  }
}

export interface FilterPreviewResult {
  pngBlob: Blob;
  info: {
    width: number;
    height: number;
    band: number | null;
    band_count: number;
    scales: number[];
  };
}

type FetchLike = typeof fetch;

export class ApiClient {
  private inflight: AbortController | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  private async reject(response: Response): Promise<never> {
    let detail: unknown = null;
    try {
      detail = (await response.json()).detail;
    } catch {
      detail = await response.text().catch(() => null);
    }
    throw new ApiError(response.status, detail);
  }

  /** POST /api/v1/query; cancels any query still in flight. */
  async query(
    image: Blob,
    filename: string,
    session: QuerySession,
    bbox?: [number, number, number, number],
  ): Promise<QueryHit[]> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    const form = new FormData();
    form.append("image", image, filename);
    form.append("k", String(session.k));
    form.append("setting", session.setting);
    if (session.patientId) form.append("patient_id", session.patientId);
    if (bbox) form.append("bbox", bbox.join(","));
    const response = await this.fetchImpl(this.url("/api/v1/query"), {
      method: "POST",
      body: form,
      signal: controller.signal,
    });
    if (this.inflight === controller) this.inflight = null;
    if (!response.ok) await this.reject(response);
    return (await response.json()) as QueryHit[];
  }

  async postAnnotation(body: string): Promise<{ stored: number; image_id: string }> {
    const response = await this.fetchImpl(this.url("/api/v1/annotations"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body,
    });
    if (!response.ok) await this.reject(response);
    return (await response.json()) as { stored: number; image_id: string };
  }

  async getAnnotations(imageId: string): Promise<AnnotationDraft[]> {
    const response = await this.fetchImpl(
      this.url(`/api/v1/annotations/${encodeURIComponent(imageId)}`),
    );
    if (!response.ok) await this.reject(response);
    return (await response.json()) as AnnotationDraft[];
  }

  async stats(): Promise<{
    count: number;
    dim: number;
    label_histogram: Record<string, number>;
    index_version: number;
  }> {
    const response = await this.fetchImpl(this.url("/api/v1/index/stats"));
    if (!response.ok) await this.reject(response);
    return await response.json();
  }

  /** POST /api/v1/filter-preview; the response PNG arrives as a blob and the
   * numeric summary in the X-Filter-Info header. */
  async filterPreview(
    image: Blob,
    filename: string,
    band: number | null,
    bandCount: number,
  ): Promise<FilterPreviewResult> {
    const form = new FormData();
    form.append("image", image, filename);
    form.append("band_count", String(bandCount));
    if (band !== null) form.append("band", String(band));
    const response = await this.fetchImpl(this.url("/api/v1/filter-preview"), {
      method: "POST",
      body: form,
    });
    if (!response.ok) await this.reject(response);
    const info = JSON.parse(response.headers.get("X-Filter-Info") ?? "{}");
    return { pngBlob: await response.blob(), info };
  }
}
