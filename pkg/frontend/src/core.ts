/**
 * Pure view-model and validation logic, kept free of DOM dependencies so it
 * is unit-testable in node. The cardinal rule: server ranking is never
 * re-sorted, filtered, or truncated on the client.
 */

export interface QueryHit {
  id: string;
  distance: number;
  lesion_type: string;
  patient_id: string;
  thumbnail_url: string;
}

export interface GalleryTile {
  id: string;
  rank: number;
  distance: number;
  distanceLabel: string;
  lesionType: string;
  patientId: string;
  thumbnailUrl: string;
}

export interface QuerySession {
  k: number;
  setting: "all_patients" | "same_patient" | "cross_patient";
  patientId: string | null;
}

export const DEFAULT_SESSION: QuerySession = {
  k: 9,
  setting: "all_patients",
  patientId: null,
};

/** Distances render with exactly three decimals everywhere in the UI. */
export function formatDistance(distance: number): string {
  return distance.toFixed(3);
}

/**
 * Map the server response to gallery tiles verbatim: same order, same
 * length, distances untouched beyond display formatting.
 */
export function buildGallery(hits: QueryHit[], serverBase: string): GalleryTile[] {
  return hits.map((hit, position) => ({
    id: hit.id,
    rank: position + 1,
    distance: hit.distance,
    distanceLabel: formatDistance(hit.distance),
    lesionType: hit.lesion_type,
    patientId: hit.patient_id,
    thumbnailUrl: serverBase.replace(/\/$/, "") + hit.thumbnail_url,
  }));
}

export type ShapeKind = "box" | "polygon" | "point";

export interface AnnotationShape {
  kind: ShapeKind;
  coordinates: number[];
}

export interface AnnotationDraft {
  image_id: string;
  shapes: AnnotationShape[];
  label?: string | null;
  author: string;
  created_at?: string;
}

const SHAPE_KINDS: ShapeKind[] = ["box", "polygon", "point"];

/**
 * Mirror of the service schema checks; drafts that pass here serialize to
 * bodies the back-end accepts. Returns a list of problems (empty = valid).
 */
export function validateAnnotationDraft(
  draft: AnnotationDraft,
  imageSize: number,
): string[] {
  const problems: string[] = [];
  if (!draft.image_id) problems.push("image_id must be set");
  if (!draft.author) problems.push("author must be set");
  if (!draft.shapes || draft.shapes.length === 0) {
    problems.push("at least one shape is required");
    return problems;
  }
  draft.shapes.forEach((shape, i) => {
    const where = `shape ${i + 1}`;
    if (!SHAPE_KINDS.includes(shape.kind)) {
      problems.push(`${where}: unknown kind '${shape.kind}'`);
      return;
    }
    const coords = shape.coordinates;
    if (!coords || coords.length === 0 || coords.length % 2 !== 0) {
      problems.push(`${where}: coordinates must be a flat [x, y, ...] list`);
      return;
    }
    if (shape.kind === "box" && coords.length !== 4) {
      problems.push(`${where}: a box needs [left, top, right, bottom]`);
    }
    if (shape.kind === "point" && coords.length !== 2) {
      problems.push(`${where}: a point needs [x, y]`);
    }
    if (shape.kind === "polygon" && coords.length < 6) {
      problems.push(`${where}: a polygon needs at least three vertices`);
    }
    for (const value of coords) {
      if (!Number.isFinite(value) || value < 0 || value > imageSize) {
        problems.push(`${where}: coordinate ${value} outside [0, ${imageSize}]`);
        break;
      }
    }
  });
  return problems;
}

/** Canonical JSON body for both the POST payload and the local download. */
export function serializeAnnotation(draft: AnnotationDraft): string {
  const body: Record<string, unknown> = {
    image_id: draft.image_id,
    shapes: draft.shapes.map((s) => ({ kind: s.kind, coordinates: s.coordinates })),
    author: draft.author,
  };
  if (draft.label != null && draft.label !== "") body.label = draft.label;
  if (draft.created_at) body.created_at = draft.created_at;
  return JSON.stringify(body, null, 1);
}

/** Parse a locally saved annotation file back into a draft (re-upload path). */
export function parseAnnotationFile(text: string): AnnotationDraft {
  const raw = JSON.parse(text);
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new Error("annotation file must hold a single JSON object");
  }
  const draft = raw as AnnotationDraft;
  if (!Array.isArray(draft.shapes)) {
    throw new Error("annotation file is missing its shapes list");
  }
  return draft;
}

/** Human-readable message for a failed request, status code surfaced verbatim. */
export function describeServerError(status: number, detail: unknown): string {
  const text =
    typeof detail === "string" ? detail : detail == null ? "" : JSON.stringify(detail);
  return `HTTP ${status}${text ? `: ${text}` : ""}`;
}
