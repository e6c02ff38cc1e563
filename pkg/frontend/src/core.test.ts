import { describe, expect, it } from "vitest";

import {
  AnnotationDraft,
  DEFAULT_SESSION,
  QueryHit,
  buildGallery,
  describeServerError,
  formatDistance,
  parseAnnotationFile,
  serializeAnnotation,
  validateAnnotationDraft,
} from "./core.js";

const MOCK_HITS: QueryHit[] = [
  { id: "roi-000004", distance: 0.0123456, lesion_type: "blob", patient_id: "p2", thumbnail_url: "/thumbnails/roi-000004.png" },
  { id: "roi-000001", distance: 0.2, lesion_type: "ridge", patient_id: "p1", thumbnail_url: "/thumbnails/roi-000001.png" },
  { id: "roi-000009", distance: 0.15, lesion_type: "blob", patient_id: "p3", thumbnail_url: "/thumbnails/roi-000009.png" },
];

describe("gallery view-model", () => {
  it("preserves server order verbatim, even when distances look unsorted", () => {
    const tiles = buildGallery(MOCK_HITS, "http://svc");
    expect(tiles.map((t) => t.id)).toEqual(["roi-000004", "roi-000001", "roi-000009"]);
    expect(tiles.map((t) => t.rank)).toEqual([1, 2, 3]);
    expect(tiles.map((t) => t.distance)).toEqual([0.0123456, 0.2, 0.15]);
  });

  it("keeps length: never truncates or filters", () => {
    expect(buildGallery(MOCK_HITS, "")).toHaveLength(MOCK_HITS.length);
    expect(buildGallery([], "")).toHaveLength(0);
  });

  it("renders distances with exactly three decimals", () => {
    const tiles = buildGallery(MOCK_HITS, "");
    expect(tiles[0].distanceLabel).toBe("0.012");
    expect(tiles[1].distanceLabel).toBe("0.200");
    expect(formatDistance(1)).toBe("1.000");
  });

  it("resolves thumbnail urls against the server base", () => {
    const tiles = buildGallery(MOCK_HITS, "http://svc/");
    expect(tiles[0].thumbnailUrl).toBe("http://svc/thumbnails/roi-000004.png");
  });

  it("defaults match the service contract (k=9, all patients)", () => {
    expect(DEFAULT_SESSION.k).toBe(9);
    expect(DEFAULT_SESSION.setting).toBe("all_patients");
  });
});

const VALID_DRAFT: AnnotationDraft = {
  image_id: "roi-000004",
  shapes: [
    { kind: "box", coordinates: [4, 4, 30, 28] },
    { kind: "polygon", coordinates: [1, 1, 10, 1, 10, 12] },
    { kind: "point", coordinates: [32, 32] },
  ],
  label: "core",
  author: "reviewer",
  created_at: "2024-06-01T00:00:00Z",
};

describe("annotation drafts", () => {
  it("accepts a schema-valid draft", () => {
    expect(validateAnnotationDraft(VALID_DRAFT, 64)).toEqual([]);
  });

  it("flags out-of-bounds vertices before sending", () => {
    const bad = {
      ...VALID_DRAFT,
      shapes: [{ kind: "polygon" as const, coordinates: [0, 0, 10, 0, 10, 999] }],
    };
    const problems = validateAnnotationDraft(bad, 64);
    expect(problems).toHaveLength(1);
    expect(problems[0]).toContain("999");
  });

  it("flags unknown kinds, malformed boxes, and short polygons", () => {
    const draft = {
      ...VALID_DRAFT,
      shapes: [
        { kind: "circle" as never, coordinates: [1, 1] },
        { kind: "box" as const, coordinates: [1, 2, 3] },
        { kind: "polygon" as const, coordinates: [1, 1, 2, 2] },
      ],
    };
    const problems = validateAnnotationDraft(draft, 64);
    expect(problems.some((p) => p.includes("circle"))).toBe(true);
    expect(problems.some((p) => p.includes("flat"))).toBe(true);
    expect(problems.some((p) => p.includes("three vertices"))).toBe(true);
  });

  it("requires image id, author, and at least one shape", () => {
    expect(validateAnnotationDraft({ ...VALID_DRAFT, image_id: "" }, 64)).not.toEqual([]);
    expect(validateAnnotationDraft({ ...VALID_DRAFT, author: "" }, 64)).not.toEqual([]);
    expect(validateAnnotationDraft({ ...VALID_DRAFT, shapes: [] }, 64)).not.toEqual([]);
  });

  it("serializes to the exact service schema", () => {
    const body = JSON.parse(serializeAnnotation(VALID_DRAFT));
    expect(Object.keys(body).sort()).toEqual(
      ["author", "created_at", "image_id", "label", "shapes"],
    );
    expect(body.shapes[0]).toEqual({ kind: "box", coordinates: [4, 4, 30, 28] });
  });

  it("omits an empty label instead of sending null", () => {
    const body = JSON.parse(serializeAnnotation({ ...VALID_DRAFT, label: null }));
    expect("label" in body).toBe(false);
  });

  it("locally saved JSON re-uploads: parse -> validate -> serialize round trip", () => {
    const saved = serializeAnnotation(VALID_DRAFT);
    const reloaded = parseAnnotationFile(saved);
    expect(validateAnnotationDraft(reloaded, 64)).toEqual([]);
    expect(serializeAnnotation(reloaded)).toBe(saved);
  });

  it("rejects annotation files that are not a single object", () => {
    expect(() => parseAnnotationFile("[1, 2]")).toThrow();
    expect(() => parseAnnotationFile('{"image_id": "x"}')).toThrow(/shapes/);
  });
});

describe("error surfacing", () => {
  it("shows the status code and detail verbatim", () => {
    expect(describeServerError(422, "no candidates under setting 'cross_patient'")).toBe(
      "HTTP 422: no candidates under setting 'cross_patient'",
    );
    expect(describeServerError(400, { line: 3, error: "bad bbox" })).toBe(
      'HTTP 400: {"line":3,"error":"bad bbox"}',
    );
  });
});
