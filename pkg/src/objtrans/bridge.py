"""Detector abstraction and the objtrans/1 wire protocol.

External detectors run as child processes speaking newline-delimited JSON
over stdin/stdout: the adapter emits one handshake line, then answers each
request line with exactly one response (or error) line. See PROTOCOL.md for
the byte-level contract; the committed transcripts under transcripts/ are
the golden reference.

The engine-side client (:class:`SubprocessAdapter`) enforces the protocol:
handshake version, request/response correlation by request_id, the
score >= conf_threshold invariant, score-descending order and box clipping
on delivery. Timeouts and child exits surface as :class:`AdapterError` with
the captured stderr tail.
"""

from __future__ import annotations

import base64
import io
import queue
import shlex
import subprocess
import threading
import uuid
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BBox, Detection, ImageFrame
from .util import canonical_dumps

import json

PROTOCOL_VERSION = "objtrans/1"
DEFAULT_TIMEOUT = 30.0

__all__ = [
    "AdapterError",
    "DetectRequest",
    "DetectResponse",
    "DetectorAdapter",
    "ProtocolError",
    "SubprocessAdapter",
    "AdapterPool",
    "PROTOCOL_VERSION",
    "detect",
    "encode_error",
    "encode_handshake",
    "encode_request",
    "encode_response",
    "frame_to_png_bytes",
    "parse_request_line",
    "parse_response_line",
    "png_bytes_to_frame",
]


class AdapterError(Exception):
    """Detector process failed: timeout, crash, or error response."""


class ProtocolError(AdapterError):
    """A line on the wire violated the protocol; the message carries it."""


@dataclass(frozen=True)
class DetectRequest:
    """One detection request. Exactly one of image_path / image_b64 must be
    set. ``image_id`` is optional pass-through metadata identifying the
    logical frame (useful to detectors that key side information by frame);
    pixel-driven detectors ignore it."""

    request_id: int
    conf_threshold: float
    image_path: str | None = None
    image_b64: str | None = None
    image_id: str | None = None

    def __post_init__(self):
        if self.request_id < 0:
            raise ValueError("request_id must be non-negative")
        if not (0.0 <= self.conf_threshold <= 1.0):
            raise ValueError(f"conf_threshold out of range: {self.conf_threshold}")
        if (self.image_path is None) == (self.image_b64 is None):
            raise ValueError("exactly one of image_path / image_b64 must be set")


@dataclass(frozen=True)
class DetectResponse:
    request_id: int
    detections: tuple[Detection, ...]


def encode_handshake() -> str:
    return canonical_dumps({"protocol": PROTOCOL_VERSION})


def encode_request(req: DetectRequest) -> str:
    obj = {"request_id": req.request_id, "conf_threshold": req.conf_threshold}
    if req.image_path is not None:
        obj["image_path"] = req.image_path
    else:
        obj["image_b64"] = req.image_b64
    if req.image_id is not None:
        obj["image_id"] = req.image_id
    return canonical_dumps(obj)


def _detection_to_obj(det: Detection) -> dict:
    return {
        "bbox": {"cx": det.bbox.cx, "cy": det.bbox.cy, "w": det.bbox.w, "h": det.bbox.h},
        "class_id": det.class_id,
        "score": det.score,
    }


def encode_response(request_id: int, detections) -> str:
    return canonical_dumps(
        {
            "request_id": request_id,
            "detections": [_detection_to_obj(d) for d in detections],
        }
    )


def encode_error(request_id, message: str) -> str:
    return canonical_dumps({"request_id": request_id, "error": str(message)})


def _parse_json_line(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {line!r} ({exc})") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(f"expected a JSON object: {line!r}")
    return obj


def parse_request_line(line: str) -> DetectRequest:
    obj = _parse_json_line(line)
    try:
        return DetectRequest(
            request_id=int(obj["request_id"]),
            conf_threshold=float(obj["conf_threshold"]),
            image_path=obj.get("image_path"),
            image_b64=obj.get("image_b64"),
            image_id=obj.get("image_id"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad request: {line!r} ({exc})") from exc


def _parse_detection_obj(obj) -> Detection:
    try:
        bbox = obj["bbox"]
        det = Detection(
            bbox=BBox(
                float(bbox["cx"]), float(bbox["cy"]), float(bbox["w"]), float(bbox["h"])
            ),
            class_id=int(obj["class_id"]),
            score=float(obj["score"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad detection object: {obj!r} ({exc})") from exc
    return det


def parse_response_line(
    line: str,
    expect_request_id: int | None = None,
    conf_threshold: float | None = None,
) -> DetectResponse:
    """Parse and validate one response line.

    Error objects raise AdapterError; request-id mismatches and invariant
    violations (score below the requested threshold) raise ProtocolError.
    """
    obj = _parse_json_line(line)
    if "error" in obj:
        raise AdapterError(f"detector error (request {obj.get('request_id')}): {obj['error']}")
    if "request_id" not in obj or "detections" not in obj:
        raise ProtocolError(f"response missing request_id/detections: {line!r}")
    request_id = int(obj["request_id"])
    if expect_request_id is not None and request_id != expect_request_id:
        raise ProtocolError(
            f"response for request {request_id}, expected {expect_request_id}: {line!r}"
        )
    if not isinstance(obj["detections"], list):
        raise ProtocolError(f"detections must be a list: {line!r}")
    dets = [_parse_detection_obj(d) for d in obj["detections"]]
    if conf_threshold is not None:
        for d in dets:
            if d.score < conf_threshold:
                raise ProtocolError(
                    f"score {d.score} below requested threshold {conf_threshold}: {line!r}"
                )
    return DetectResponse(request_id=request_id, detections=tuple(dets))


def frame_to_png_bytes(frame: ImageFrame) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(frame.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_frame(data: bytes, image_id: str = "") -> ImageFrame:
    from PIL import Image

    with Image.open(io.BytesIO(data)) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return ImageFrame(arr, image_id=image_id)


def _deliver(detections, conf_threshold: float) -> list[Detection]:
    """Clip boxes to the frame, drop ones that clip away, sort by descending
    score (input order breaks ties)."""
    kept = []
    for d in detections:
        clipped = d.bbox.clipped()
        if clipped is None:
            continue
        kept.append(
            Detection(bbox=clipped, class_id=d.class_id, score=d.score, source_run=d.source_run)
        )
    order = sorted(range(len(kept)), key=lambda i: (-kept[i].score, i))
    return [kept[i] for i in order]


class DetectorAdapter:
    """Interface both the subprocess client and the in-process mocks
    implement."""

    def detect_frame(
        self, frame: ImageFrame, conf_threshold: float, image_id: str | None = None
    ) -> list[Detection]:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _LineReader:
    """Background reader so protocol reads can time out portably."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, args=(stream,), daemon=True)
        self._thread.start()

    def _run(self, stream):
        for line in stream:
            self._queue.put(line)
        self._queue.put(None)

    def readline(self, timeout: float) -> str | None:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError


class SubprocessAdapter(DetectorAdapter):
    """Client for an external detector process speaking objtrans/1.

    One in-flight request at a time per process; run a pool of adapters for
    parallel sweeps. ``image_mode`` selects path-based (zero-copy for local
    detectors) or inline base64 transport.
    """

    def __init__(
        self,
        cmd: str | list[str],
        timeout: float = DEFAULT_TIMEOUT,
        image_mode: str = "path",
        tmp_dir: Path | str | None = None,
    ):
        if image_mode not in ("path", "b64"):
            raise ValueError(f"image_mode must be 'path' or 'b64', got {image_mode!r}")
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.timeout = timeout
        self.image_mode = image_mode
        self._next_request_id = 0
        self._lock = threading.Lock()
        if tmp_dir is None:
            import tempfile

            self._tmp = tempfile.TemporaryDirectory(prefix="objtrans-adapter-")
            self.tmp_dir = Path(self._tmp.name)
        else:
            self._tmp = None
            self.tmp_dir = Path(tmp_dir)
            self.tmp_dir.mkdir(parents=True, exist_ok=True)

        try:
            self._proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise AdapterError(f"cannot start detector {self.cmd!r}: {exc}") from exc
        self._stderr_tail: deque[str] = deque(maxlen=50)
        self._stderr_thread = threading.Thread(
            target=self._drain_stderr, daemon=True
        )
        self._stderr_thread.start()
        self._reader = _LineReader(self._proc.stdout)
        self._handshake()

    def _drain_stderr(self):
        for line in self._proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))

    def _stderr_summary(self) -> str:
        return "\n".join(self._stderr_tail) or "<no stderr>"

    def _read_line(self) -> str:
        try:
            line = self._reader.readline(self.timeout)
        except TimeoutError:
            self._proc.kill()
            raise AdapterError(
                f"detector timed out after {self.timeout}s; stderr tail:\n"
                + self._stderr_summary()
            )
        if line is None:
            raise AdapterError(
                f"detector exited (code {self._proc.poll()}); stderr tail:\n"
                + self._stderr_summary()
            )
        return line.rstrip("\n")

    def _handshake(self):
        line = self._read_line()
        obj = _parse_json_line(line)
        if obj.get("protocol") != PROTOCOL_VERSION:
            self.close()
            raise ProtocolError(
                f"handshake expected protocol {PROTOCOL_VERSION!r}, got {line!r}"
            )

    def _roundtrip(self, req: DetectRequest) -> DetectResponse:
        try:
            self._proc.stdin.write(encode_request(req) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterError(
                f"detector pipe closed: {exc}; stderr tail:\n" + self._stderr_summary()
            ) from exc
        line = self._read_line()
        return parse_response_line(
            line, expect_request_id=req.request_id, conf_threshold=req.conf_threshold
        )

    def detect(self, req: DetectRequest) -> DetectResponse:
        with self._lock:
            resp = self._roundtrip(req)
        return DetectResponse(
            request_id=resp.request_id,
            detections=tuple(_deliver(resp.detections, req.conf_threshold)),
        )

    def detect_frame(
        self, frame: ImageFrame, conf_threshold: float, image_id: str | None = None
    ) -> list[Detection]:
        image_id = image_id if image_id is not None else frame.image_id
        with self._lock:
            self._next_request_id += 1
            request_id = self._next_request_id
            if self.image_mode == "path":
                path = self.tmp_dir / f"req-{uuid.uuid4().hex}.png"
                path.write_bytes(frame_to_png_bytes(frame))
                req = DetectRequest(
                    request_id=request_id,
                    conf_threshold=conf_threshold,
                    image_path=str(path),
                    image_id=image_id or None,
                )
            else:
                req = DetectRequest(
                    request_id=request_id,
                    conf_threshold=conf_threshold,
                    image_b64=base64.b64encode(frame_to_png_bytes(frame)).decode("ascii"),
                    image_id=image_id or None,
                )
            try:
                resp = self._roundtrip(req)
            finally:
                if self.image_mode == "path":
                    try:
                        path.unlink()
                    except OSError:
                        pass
        return _deliver(resp.detections, conf_threshold)

    def close(self):
        if getattr(self, "_proc", None) is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None


def detect(adapter: DetectorAdapter, req: DetectRequest):
    """Protocol-level entry point: send one request through an adapter."""
    if hasattr(adapter, "detect"):
        return adapter.detect(req)
    raise TypeError(f"{adapter!r} does not handle raw requests")


class AdapterPool:
    """Fixed pool of adapters leased one at a time; results stay
    deterministic because callers merge by run index, never arrival order."""

    def __init__(self, factory, size: int):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self._adapters = [factory() for _ in range(size)]
        self._queue: queue.Queue = queue.Queue()
        for a in self._adapters:
            self._queue.put(a)

    def lease(self):
        pool = self

        class _Lease:
            def __enter__(self):
                self.adapter = pool._queue.get()
                return self.adapter

            def __exit__(self, *exc):
                pool._queue.put(self.adapter)

        return _Lease()

    def close(self):
        for a in self._adapters:
            a.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
