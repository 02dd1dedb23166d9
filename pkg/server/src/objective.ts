/**
 * Analytic target-silhouette objective: mean squared difference between the
 * received opacity and a fixed target, with its exact gradient.  Stands in
 * where a diffusion-based scorer would attach.
 */

import { readFileSync } from "node:fs";
import { decodeFloats } from "./protocol";

export interface Target {
  width: number;
  height: number;
  values: Float64Array;
}

/** Opacity dump file: {width, height, dtype: "float64", data_b64}. */
export function loadTarget(path: string): Target {
  const payload = JSON.parse(readFileSync(path, "utf-8"));
  if (payload.dtype !== "float64") {
    throw new Error(`${path}: unsupported opacity dtype ${payload.dtype}`);
  }
  const width = payload.width as number;
  const height = payload.height as number;
  const values = decodeFloats(payload.data_b64 as string, width * height);
  if (values === null) {
    throw new Error(`${path}: truncated opacity payload`);
  }
  return { width, height, values };
}

export interface Evaluation {
  loss: number;
  grad: Float64Array;
}

/**
 * loss = (1/HW) sum (O' - O)^2, grad = 2 (O' - O) / (HW).
 * With no target the objective is identically zero (echo mode).
 */
export function evaluate(
  opacity: Float64Array,
  target: Target | null,
): Evaluation {
  const n = opacity.length;
  const grad = new Float64Array(n);
  if (target === null) {
    return { loss: 0, grad };
  }
  let loss = 0;
  for (let i = 0; i < n; i++) {
    const diff = opacity[i] - target.values[i];
    loss += diff * diff;
    grad[i] = (2 * diff) / n;
  }
  return { loss: loss / n, grad };
}
