#!/usr/bin/env python3
"""Regenerate the committed golden protocol transcripts.

Spawns the mock adapter as a real subprocess, drives it with fixed request
lines (tiny solid-color images inlined as base64) and records both
directions. The committed transcripts are the byte-exact reference for
protocol framing; rerun this only when the protocol changes deliberately.

Usage: python scripts/record_transcripts.py [--out transcripts]
"""

from __future__ import annotations

import argparse
import base64
import subprocess
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from objtrans.bridge import encode_request, frame_to_png_bytes, DetectRequest
from objtrans.colorspace import hsv_to_rgb_array
from objtrans.core import BBox, ImageFrame
from objtrans.mocks import MockDetectorSpec, PlantedBox


def solid_frame(hue: float, image_id: str, size: int = 8) -> ImageFrame:
    rgb = hsv_to_rgb_array(np.array([[hue, 0.9, 0.9]]))[0]
    return ImageFrame(np.full((size, size, 3), rgb, dtype=np.uint8), image_id=image_id)


def b64(frame: ImageFrame) -> str:
    return base64.b64encode(frame_to_png_bytes(frame)).decode("ascii")


def record(spec_path: Path, client_lines: list[str], transcript_path: Path) -> None:
    proc = subprocess.Popen(
        [sys.executable, "-m", "objtrans.mock_adapter", "--spec", str(spec_path)],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        text=True,
        encoding="utf-8",
    )
    lines = ["S " + proc.stdout.readline().rstrip("\n")]
    for line in client_lines:
        proc.stdin.write(line + "\n")
        proc.stdin.flush()
        lines.append("C " + line)
        lines.append("S " + proc.stdout.readline().rstrip("\n"))
    proc.stdin.close()
    proc.wait(timeout=10)
    transcript_path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    print(f"wrote {transcript_path} ({len(lines)} lines)")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="transcripts")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    box = BBox(0.5, 0.5, 0.75, 0.75)

    oracle = MockDetectorSpec(
        kind="oracle_stable",
        seed=7,
        plants={
            "red_scene": (
                PlantedBox(bbox=box, class_id=1, score=0.9),
                PlantedBox(bbox=BBox(0.25, 0.25, 0.2, 0.2), class_id=0, score=0.4),
            )
        },
    )
    oracle_spec = out / "oracle_stable.spec.json"
    oracle_spec.write_text(oracle.to_json() + "\n", encoding="utf-8")
    red = solid_frame(0.0, "red_scene")
    record(
        oracle_spec,
        [
            encode_request(
                DetectRequest(1, 0.25, image_b64=b64(red), image_id="red_scene")
            ),
            encode_request(
                DetectRequest(2, 0.5, image_b64=b64(red), image_id="red_scene")
            ),
            encode_request(
                DetectRequest(3, 0.25, image_b64=b64(red), image_id="unknown_scene")
            ),
            encode_request(
                DetectRequest(4, 0.25, image_path="/nonexistent/frame.png")
            ),
            '{"this is": "not a request"}',
        ],
        out / "oracle_stable.transcript",
    )

    hue = MockDetectorSpec(
        kind="hue_sensitive",
        seed=7,
        preferred_hue=0.0,
        plants={
            "red_scene": (PlantedBox(bbox=box, class_id=1, score=0.9),),
            "green_scene": (PlantedBox(bbox=box, class_id=1, score=0.9),),
        },
    )
    hue_spec = out / "hue_sensitive.spec.json"
    hue_spec.write_text(hue.to_json() + "\n", encoding="utf-8")
    green = solid_frame(90.0, "green_scene")
    record(
        hue_spec,
        [
            encode_request(
                DetectRequest(1, 0.1, image_b64=b64(red), image_id="red_scene")
            ),
            encode_request(
                DetectRequest(2, 0.1, image_b64=b64(green), image_id="green_scene")
            ),
        ],
        out / "hue_sensitive.transcript",
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
