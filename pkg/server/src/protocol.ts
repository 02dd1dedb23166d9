/**
 * Guidance wire protocol, version "1".
 *
 * Request:  POST /guidance with JSON
 *   { version: "1", prompt: string, iteration: number,
 *     camera: {...}, width: number, height: number,
 *     opacity_b64: base64 of row-major little-endian float64 }
 * Response:
 *   { status: "ok", loss: number, grad_b64: base64 float64 }
 *
 * Float payloads are little-endian float64 so the computation is
 * bit-compatible with the engine's in-process objective.
 */

export const PROTOCOL_VERSION = "1";

export interface GuidanceRequest {
  version: string;
  prompt: string;
  iteration: number;
  width: number;
  height: number;
  opacity: Float64Array;
}

export function decodeFloats(b64: string, count: number): Float64Array | null {
  let buf: Buffer;
  try {
    buf = Buffer.from(b64, "base64");
  } catch {
    return null;
  }
  if (buf.length !== count * 8) {
    return null;
  }
  const out = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = buf.readDoubleLE(i * 8);
  }
  return out;
}

export function encodeFloats(values: Float64Array): string {
  const buf = Buffer.allocUnsafe(values.length * 8);
  for (let i = 0; i < values.length; i++) {
    buf.writeDoubleLE(values[i], i * 8);
  }
  return buf.toString("base64");
}

export type ParseOutcome =
  | { kind: "ok"; request: GuidanceRequest }
  | { kind: "bad_request"; reason: string }
  | { kind: "bad_version"; reason: string };

/** Validate a parsed JSON body against the protocol. */
export function parseRequest(body: unknown): ParseOutcome {
  if (typeof body !== "object" || body === null || Array.isArray(body)) {
    return { kind: "bad_request", reason: "body must be a JSON object" };
  }
  const record = body as Record<string, unknown>;
  if (record.version !== PROTOCOL_VERSION) {
    return {
      kind: "bad_version",
      reason: `unsupported protocol version ${JSON.stringify(record.version)}`,
    };
  }
  const width = record.width;
  const height = record.height;
  if (
    typeof width !== "number" || typeof height !== "number" ||
    !Number.isInteger(width) || !Number.isInteger(height) ||
    width < 1 || height < 1
  ) {
    return { kind: "bad_request", reason: "width/height must be positive integers" };
  }
  if (typeof record.opacity_b64 !== "string") {
    return { kind: "bad_request", reason: "missing opacity_b64" };
  }
  const opacity = decodeFloats(record.opacity_b64, width * height);
  if (opacity === null) {
    return {
      kind: "bad_request",
      reason: `opacity_b64 does not decode to ${width * height} float64 values`,
    };
  }
  for (let i = 0; i < opacity.length; i++) {
    if (!Number.isFinite(opacity[i])) {
      return { kind: "bad_request", reason: "opacity contains non-finite values" };
    }
  }
  return {
    kind: "ok",
    request: {
      version: PROTOCOL_VERSION,
      prompt: typeof record.prompt === "string" ? record.prompt : "",
      iteration: typeof record.iteration === "number" ? record.iteration : 0,
      width,
      height,
      opacity,
    },
  };
}
