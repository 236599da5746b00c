"""objtrans/1 detector adapter around torchvision detection models.

Speaks the newline-delimited JSON protocol documented in the toolkit's
PROTOCOL.md over stdin/stdout: the model is loaded first, then the
handshake line is emitted, then every request line gets exactly one
response or error line. The process never dies on a bad request.

The adapter is deliberately self-contained: it shares no code with the
engine side, only the wire format.

Usage::

    objtrans-torch-adapter --model ssdlite320_mobilenet_v3_large \
        --weights none --device cpu

``--weights`` accepts ``none`` (random initialization, offline-friendly,
useful for protocol work), ``default`` (the torchvision pretrained weights,
downloaded on first use) or a path to a state-dict file.
"""

from __future__ import annotations

import argparse
import base64
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class AdapterConfig:
    """Model identity, device and the adapter-side confidence floor; the
    effective threshold per request is max(floor, request conf_threshold)."""

    model: str = "ssdlite320_mobilenet_v3_large"
    weights: str = "none"
    device: str = "cpu"
    score_floor: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.score_floor <= 1.0):
            raise ValueError(f"score_floor out of range: {self.score_floor}")


def dumps(obj) -> str:
    # canonical wire form: sorted keys, compact separators, ASCII
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


class TorchDetector:
    """One loaded torchvision detection model."""

    def __init__(self, config: AdapterConfig):
        import torch
        from torchvision.models import detection

        self.config = config
        self.torch = torch
        ctor = getattr(detection, config.model, None)
        if ctor is None:
            raise ValueError(f"unknown torchvision detection model {config.model!r}")
        torch.manual_seed(0)  # fixed init for --weights none
        if config.weights == "none":
            model = ctor(weights=None, weights_backbone=None)
        elif config.weights == "default":
            model = ctor(weights="DEFAULT")
        else:
            model = ctor(weights=None, weights_backbone=None)
            state = torch.load(config.weights, map_location=config.device)
            model.load_state_dict(state)
        self.model = model.to(config.device).eval()

    def detect(self, image_bytes: bytes, conf_threshold: float) -> list[dict]:
        import numpy as np
        from PIL import Image

        with Image.open(io.BytesIO(image_bytes)) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        height, width = rgb.shape[:2]
        tensor = self.torch.from_numpy(rgb).permute(2, 0, 1).to(self.config.device)
        with self.torch.no_grad():
            out = self.model([tensor])[0]

        threshold = max(conf_threshold, self.config.score_floor)
        detections = []
        boxes = out["boxes"].cpu().numpy()
        scores = out["scores"].cpu().numpy()
        labels = out["labels"].cpu().numpy()
        for (x0, y0, x1, y1), score, label in zip(boxes, scores, labels):
            score = float(score)
            if not (score == score) or score < threshold:  # NaN or below gate
                continue
            score = min(1.0, max(0.0, score))
            if score < conf_threshold:
                continue
            # model-native pixel xyxy -> normalized center-size, clipped
            x0 = min(max(float(x0), 0.0), width)
            x1 = min(max(float(x1), 0.0), width)
            y0 = min(max(float(y0), 0.0), height)
            y1 = min(max(float(y1), 0.0), height)
            if x1 <= x0 or y1 <= y0:
                continue
            detections.append(
                {
                    "bbox": {
                        "cx": (x0 + x1) / 2.0 / width,
                        "cy": (y0 + y1) / 2.0 / height,
                        "w": (x1 - x0) / width,
                        "h": (y1 - y0) / height,
                    },
                    "class_id": int(label),
                    "score": score,
                }
            )
        detections.sort(key=lambda d: -d["score"])
        return detections


def serve(detector: TorchDetector, stdin=None, stdout=None) -> None:
    """Request loop: one line in, one line out, errors never kill it."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    def emit(obj) -> None:
        stdout.write(dumps(obj) + "\n")
        stdout.flush()

    emit({"protocol": "objtrans/1"})
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            request_id = int(req["request_id"])
            conf = float(req["conf_threshold"])
            has_path = "image_path" in req
            has_b64 = "image_b64" in req
            if has_path == has_b64:
                raise KeyError("exactly one of image_path/image_b64 required")
            if not (0.0 <= conf <= 1.0):
                raise ValueError(f"conf_threshold out of range: {conf}")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            emit({"request_id": None, "error": f"bad request: {exc}"})
            continue
        try:
            if has_path:
                image_bytes = Path(req["image_path"]).read_bytes()
            else:
                image_bytes = base64.b64decode(req["image_b64"])
            detections = detector.detect(image_bytes, conf)
        except Exception as exc:  # noqa: BLE001 - resilience contract
            emit({"request_id": request_id, "error": f"cannot serve request: {exc}"})
            continue
        emit({"request_id": request_id, "detections": detections})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", default="ssdlite320_mobilenet_v3_large")
    parser.add_argument("--weights", default="none", help="none | default | state-dict path")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--score-floor", type=float, default=0.0)
    args = parser.parse_args(argv)
    config = AdapterConfig(
        model=args.model,
        weights=args.weights,
        device=args.device,
        score_floor=args.score_floor,
    )
    # the handshake must only appear once the model is ready to serve
    detector = TorchDetector(config)
    serve(detector)
    return 0


if __name__ == "__main__":
    sys.exit(main())
