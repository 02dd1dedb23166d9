/**
 * Pure request handling, separated from the HTTP wiring for testability.
 * Stateless by construction: identical requests yield identical responses.
 */

import { encodeFloats, parseRequest } from "./protocol";
import { evaluate, Target } from "./objective";

export interface HandlerResult {
  status: number;
  body: Record<string, unknown>;
}

export function handleGuidance(
  body: unknown,
  target: Target | null,
): HandlerResult {
  const outcome = parseRequest(body);
  if (outcome.kind === "bad_version") {
    return { status: 426, body: { error: outcome.reason } };
  }
  if (outcome.kind === "bad_request") {
    return { status: 400, body: { error: outcome.reason } };
  }
  const request = outcome.request;
  if (
    target !== null &&
    (request.width !== target.width || request.height !== target.height)
  ) {
    return {
      status: 400,
      body: {
        error:
          `request is ${request.width}x${request.height} but the target ` +
          `is ${target.width}x${target.height}`,
      },
    };
  }
  const { loss, grad } = evaluate(request.opacity, target);
  return {
    status: 200,
    body: { status: "ok", loss, grad_b64: encodeFloats(grad) },
  };
}
