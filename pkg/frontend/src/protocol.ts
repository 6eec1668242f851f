/**
 * Message schema of the render service.
 *
 * Coordinates are right-handed, +x right, +y down, +z forward ("RDF");
 * quaternions are (w, x, y, z); poses are camera-from-world.
 *
 * View requests go out as JSON text; frames come back as binary messages of a
 * 4-byte big-endian request id followed by a PNG. Malformed requests get a
 * JSON text reply {id, error} and the channel stays open.
 */

export interface PoseJson {
  quaternion: [number, number, number, number];
  translation: [number, number, number];
}

export interface ViewRequest {
  id: number;
  pose: PoseJson;
  time: number;
  mode: "rgb" | "depth";
  scale: 1 | 0.5 | 0.25;
}

export interface Metadata {
  width: number;
  height: number;
  intrinsics: { fx: number; fy: number; cx: number; cy: number };
  convention: string;
  scene_bounds: { min: [number, number, number]; max: [number, number, number] };
  depth_range: [number, number];
  suggested_pose: PoseJson;
  max_time: number;
}

export interface FrameReply {
  id: number;
  png: Uint8Array;
}

export interface ErrorReply {
  id: number | null;
  error: string;
}

const PNG_SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

/** Split a binary server message into (request id, PNG bytes). */
export function parseFrameReply(data: ArrayBuffer): FrameReply {
  if (data.byteLength < 4 + PNG_SIGNATURE.length) {
    throw new Error(`frame reply too short: ${data.byteLength} bytes`);
  }
  const view = new DataView(data);
  const id = view.getUint32(0, false); // big-endian
  const png = new Uint8Array(data, 4);
  for (let i = 0; i < PNG_SIGNATURE.length; i++) {
    if (png[i] !== PNG_SIGNATURE[i]) {
      throw new Error("frame payload is not a PNG");
    }
  }
  return { id, png };
}

/** Parse a JSON text reply; returns null for anything that is not an error record. */
export function parseErrorReply(text: string): ErrorReply | null {
  try {
    const msg = JSON.parse(text);
    if (msg && typeof msg === "object" && "error" in msg) {
      return { id: msg.id ?? null, error: String(msg.error) };
    }
  } catch {
    /* not JSON: ignore */
  }
  return null;
}

export function encodeViewRequest(req: ViewRequest): string {
  return JSON.stringify(req);
}
