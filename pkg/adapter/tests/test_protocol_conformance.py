"""Protocol conformance of the torchvision adapter.

The engine-side toolkit is the authority on the wire format: its committed
golden transcripts are replayed against this adapter and every emitted line
must parse under its protocol reader with byte-compatible framing
(canonical one-line JSON, matching request ids, error-for-error). Detection
values differ by model, so they are validated structurally, not compared.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest

from objtrans.bridge import (
    AdapterError,
    ProtocolError,
    parse_response_line,
)
from objtrans.util import canonical_dumps

REPO_ROOT = Path(__file__).resolve().parent.parent.parent
TRANSCRIPTS = REPO_ROOT / "transcripts"

ADAPTER_CMD = [
    sys.executable,
    "-m",
    "objtrans_torch_adapter.adapter",
    "--model",
    "ssdlite320_mobilenet_v3_large",
    "--weights",
    "none",
]


@pytest.fixture(scope="module")
def adapter_proc():
    proc = subprocess.Popen(
        ADAPTER_CMD,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
        encoding="utf-8",
    )
    handshake = proc.stdout.readline().rstrip("\n")
    yield proc, handshake
    proc.stdin.close()
    proc.wait(timeout=30)


def roundtrip(proc, line: str) -> str:
    proc.stdin.write(line + "\n")
    proc.stdin.flush()
    return proc.stdout.readline().rstrip("\n")


class TestHandshake:
    def test_exact_handshake_line(self, adapter_proc):
        _, handshake = adapter_proc
        assert handshake == '{"protocol":"objtrans/1"}'


class TestGoldenTranscriptReplay:
    @pytest.mark.parametrize("name", ["oracle_stable", "hue_sensitive"])
    def test_framing_compatible(self, adapter_proc, name):
        proc, handshake = adapter_proc
        lines = (TRANSCRIPTS / f"{name}.transcript").read_text().splitlines()
        assert lines[0].startswith("S ")  # transcript handshake
        assert json.loads(lines[0][2:]) == json.loads(handshake)
        for i, line in enumerate(lines[1:]):
            direction, payload = line[0], line[2:]
            if direction != "C":
                continue
            golden_reply = lines[1:][i + 1][2:]
            got = roundtrip(proc, payload)
            # byte-compatible framing: one canonical JSON object per line
            obj = json.loads(got)
            assert canonical_dumps(obj) == got
            golden_obj = json.loads(golden_reply)
            assert obj.get("request_id") == golden_obj.get("request_id")
            if "error" in golden_obj:
                # error-for-error (unreadable path, unparsable request)
                assert "error" in obj
            else:
                # the primary reader's validation must accept the line
                req = json.loads(payload)
                resp = parse_response_line(
                    got,
                    expect_request_id=req["request_id"],
                    conf_threshold=req["conf_threshold"],
                )
                for det in resp.detections:
                    x0, y0, x1, y1 = det.bbox.corners()
                    assert -1e-9 <= x0 and x1 <= 1 + 1e-9
                    assert -1e-9 <= y0 and y1 <= 1 + 1e-9


class TestAdapterBehavior:
    def test_detections_normalized_and_sorted(self, adapter_proc, tmp_path):
        proc, _ = adapter_proc
        import numpy as np
        from PIL import Image

        rng = np.random.default_rng(5)
        img_path = tmp_path / "noise.png"
        Image.fromarray(
            rng.integers(0, 256, size=(96, 128, 3), dtype=np.uint8), mode="RGB"
        ).save(img_path)
        got = roundtrip(
            proc,
            json.dumps(
                {"request_id": 900, "conf_threshold": 0.0, "image_path": str(img_path)}
            ),
        )
        resp = parse_response_line(got, expect_request_id=900, conf_threshold=0.0)
        assert len(resp.detections) > 0  # random-weight SSD emits candidates
        scores = [d.score for d in resp.detections]
        assert scores == sorted(scores, reverse=True)
        for det in resp.detections:
            assert 0.0 <= det.score <= 1.0
            assert 0.0 <= det.bbox.cx <= 1.0 and 0.0 <= det.bbox.cy <= 1.0
            assert 0.0 < det.bbox.w <= 1.0 and 0.0 < det.bbox.h <= 1.0

    def test_conf_threshold_forwarded(self, adapter_proc, tmp_path):
        proc, _ = adapter_proc
        import numpy as np
        from PIL import Image

        img_path = tmp_path / "gray.png"
        Image.fromarray(
            np.full((64, 64, 3), 128, dtype=np.uint8), mode="RGB"
        ).save(img_path)
        got = roundtrip(
            proc,
            json.dumps(
                {"request_id": 901, "conf_threshold": 0.9, "image_path": str(img_path)}
            ),
        )
        # reader enforces the score >= conf invariant while parsing
        resp = parse_response_line(got, expect_request_id=901, conf_threshold=0.9)
        for det in resp.detections:
            assert det.score >= 0.9

    def test_unreadable_image_keeps_process_alive(self, adapter_proc, tmp_path):
        proc, _ = adapter_proc
        got = roundtrip(
            proc,
            json.dumps(
                {"request_id": 902, "conf_threshold": 0.5, "image_path": "/no/such.png"}
            ),
        )
        with pytest.raises(AdapterError, match="cannot"):
            parse_response_line(got, expect_request_id=902)
        assert proc.poll() is None
        # and it still answers afterwards
        import numpy as np
        from PIL import Image

        img_path = tmp_path / "after.png"
        Image.fromarray(np.zeros((32, 32, 3), dtype=np.uint8), mode="RGB").save(img_path)
        got = roundtrip(
            proc,
            json.dumps(
                {"request_id": 903, "conf_threshold": 0.99, "image_path": str(img_path)}
            ),
        )
        parse_response_line(got, expect_request_id=903, conf_threshold=0.99)

    def test_garbage_request_gets_null_id_error(self, adapter_proc):
        proc, _ = adapter_proc
        got = roundtrip(proc, "this is not a request")
        obj = json.loads(got)
        assert obj["request_id"] is None
        assert "error" in obj
        assert canonical_dumps(obj) == got

    def test_b64_transport(self, adapter_proc):
        proc, _ = adapter_proc
        import base64
        import io

        import numpy as np
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(
            np.full((48, 48, 3), 200, dtype=np.uint8), mode="RGB"
        ).save(buf, format="PNG")
        got = roundtrip(
            proc,
            json.dumps(
                {
                    "request_id": 904,
                    "conf_threshold": 0.0,
                    "image_b64": base64.b64encode(buf.getvalue()).decode("ascii"),
                    "image_id": "ignored_by_real_models",
                }
            ),
        )
        parse_response_line(got, expect_request_id=904, conf_threshold=0.0)


class TestEngineIntegration:
    def test_primary_subprocess_client_accepts_adapter(self, tmp_path):
        """The engine's own client (handshake, validation, delivery rules)
        must accept this adapter end to end."""
        from objtrans.bridge import SubprocessAdapter
        from objtrans.core import ImageFrame
        import numpy as np

        frame = ImageFrame(
            np.random.default_rng(0).integers(0, 256, size=(64, 64, 3), dtype=np.uint8),
            image_id="integration",
        )
        start = time.perf_counter()
        with SubprocessAdapter(ADAPTER_CMD, timeout=120.0) as adapter:
            dets = adapter.detect_frame(frame, 0.0)
        assert isinstance(dets, list)
        scores = [d.score for d in dets]
        assert scores == sorted(scores, reverse=True)
        assert time.perf_counter() - start < 120.0
