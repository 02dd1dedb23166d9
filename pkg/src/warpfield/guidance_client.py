"""HTTP client for an external guidance server.

Wire protocol (version "1"): POST <endpoint>, JSON body

    {"version": "1", "prompt": str, "iteration": int,
     "camera": {"position": [3], "look_at": [3], "up": [3],
                "fov": float, "width": int, "height": int,
                "near": float, "far": float},
     "width": int, "height": int, "opacity_b64": base64 float32,
     "diagnostic_b64": base64 PNG (optional)}

response:

    {"status": "ok" | "retry" | "fatal", "loss": float,
     "grad_b64": base64 float32}

Float payloads cross the wire as row-major little-endian float64 so a
reference server is numerically indistinguishable from the in-process
objective (float32 rounding of gradients compounds through Adam and
breaks trajectory equivalence); the base64 round trip is bit-exact.
Gradients stay in opacity space: the geometric pullback through the
rasterizer happens engine-side so the server never needs to know the
mesh.
"""

import base64
import json
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import requests

from .errors import FatalGuidanceError, GuidanceTransportError, MalformedResponseError
from .objectives import Guidance, GuidanceResult

PROTOCOL_VERSION = "1"


def encode_floats(array):
    """Row-major little-endian float64 -> base64 (bit-exact round trip)."""
    return base64.b64encode(
        np.ascontiguousarray(array, dtype="<f8").tobytes()
    ).decode("ascii")


def decode_floats(data_b64, shape):
    raw = base64.b64decode(data_b64)
    values = np.frombuffer(raw, dtype="<f8")
    expected = int(np.prod(shape))
    if values.size != expected:
        raise MalformedResponseError(
            f"float payload has {values.size} values, expected {expected}"
        )
    return values.reshape(shape).astype(np.float64)


def camera_to_wire(camera):
    return {
        "position": list(camera.position),
        "look_at": list(camera.look_at),
        "up": list(camera.up),
        "fov": camera.fov,
        "width": camera.width,
        "height": camera.height,
        "near": camera.near,
        "far": camera.far,
    }


@dataclass
class GuidanceRequest:
    prompt: str
    iteration: int
    camera: dict
    opacity: np.ndarray
    diagnostic_png: Optional[bytes] = None
    version: str = PROTOCOL_VERSION

    def to_json(self):
        h, w = self.opacity.shape
        payload = {
            "version": self.version,
            "prompt": self.prompt,
            "iteration": int(self.iteration),
            "camera": self.camera,
            "width": int(w),
            "height": int(h),
            "opacity_b64": encode_floats(self.opacity),
        }
        if self.diagnostic_png is not None:
            payload["diagnostic_b64"] = base64.b64encode(
                self.diagnostic_png
            ).decode("ascii")
        return payload

    @classmethod
    def from_json(cls, payload):
        width = int(payload["width"])
        height = int(payload["height"])
        opacity = decode_floats(payload["opacity_b64"], (height, width))
        png = payload.get("diagnostic_b64")
        return cls(
            prompt=payload.get("prompt", ""),
            iteration=int(payload.get("iteration", 0)),
            camera=payload.get("camera", {}),
            opacity=opacity,
            diagnostic_png=base64.b64decode(png) if png else None,
            version=payload.get("version", ""),
        )


@dataclass
class GuidanceResponse:
    status: str
    loss: float
    grad: Optional[np.ndarray]

    @classmethod
    def from_json(cls, payload, expected_shape):
        status = payload.get("status")
        if status not in ("ok", "retry", "fatal"):
            raise MalformedResponseError(f"unknown status {status!r}")
        if status != "ok":
            return cls(status=status, loss=0.0, grad=None)
        if "loss" not in payload or "grad_b64" not in payload:
            raise MalformedResponseError("ok response missing loss or grad_b64")
        loss = float(payload["loss"])
        grad = decode_floats(payload["grad_b64"], expected_shape)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise MalformedResponseError("response contains non-finite values")
        return cls(status="ok", loss=loss, grad=grad)

    def to_json(self):
        payload = {"status": self.status, "loss": float(self.loss)}
        if self.grad is not None:
            payload["grad_b64"] = encode_floats(self.grad)
        return payload


def call_guidance(endpoint, request, timeout=10.0, retries=3, backoff=0.25,
                  _sleep=time.sleep):
    """POST a guidance request, retrying with exponential backoff.

    Retries on transport errors and on an explicit ``retry`` status; a
    ``fatal`` status aborts immediately.  After the retry budget is spent
    the last transport failure is raised as :class:`GuidanceTransportError`.
    """
    expected_shape = request.opacity.shape
    body = request.to_json()
    last_error = None
    for attempt in range(retries + 1):
        if attempt:
            _sleep(backoff * (2.0 ** (attempt - 1)))
        try:
            http_response = requests.post(endpoint, json=body, timeout=timeout)
        except requests.RequestException as exc:
            last_error = f"transport error: {exc}"
            continue
        if http_response.status_code != 200:
            raise GuidanceTransportError(
                f"guidance server returned HTTP {http_response.status_code}: "
                f"{http_response.text[:200]}"
            )
        try:
            payload = http_response.json()
        except json.JSONDecodeError as exc:
            raise MalformedResponseError(f"response is not JSON: {exc}") from exc
        response = GuidanceResponse.from_json(payload, expected_shape)
        if response.status == "fatal":
            raise FatalGuidanceError("guidance server reported a fatal condition")
        if response.status == "retry":
            last_error = "server asked to retry"
            continue
        return response
    raise GuidanceTransportError(
        f"guidance call failed after {retries + 1} attempts: {last_error}"
    )


class HttpGuidance(Guidance):
    """Guidance objective backed by a remote server speaking the protocol."""

    def __init__(self, endpoint, prompt="", cameras=None, timeout=10.0,
                 retries=3):
        self.endpoint = endpoint
        self.prompt = prompt
        self.cameras = cameras
        self.timeout = timeout
        self.retries = retries

    def __call__(self, ctx):
        request = GuidanceRequest(
            prompt=self.prompt or ctx.prompt,
            iteration=ctx.iteration,
            camera=camera_to_wire(ctx.camera),
            opacity=ctx.opacity.values,
        )
        response = call_guidance(
            self.endpoint, request, timeout=self.timeout, retries=self.retries
        )
        return GuidanceResult(loss=response.loss, opacity_grad=response.grad)
