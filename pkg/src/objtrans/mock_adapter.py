"""Run a mock detector as an external adapter process.

Speaks objtrans/1 over stdin/stdout: handshake first, then one response (or
error) line per request line. Usage::

    python -m objtrans.mock_adapter --spec path/to/spec.json
"""

from __future__ import annotations

import argparse
import base64
import sys
from pathlib import Path

from .bridge import (
    ProtocolError,
    encode_error,
    encode_handshake,
    encode_response,
    parse_request_line,
    png_bytes_to_frame,
)
from .mocks import MockDetectorSpec, mock_detect


def serve(spec: MockDetectorSpec, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    def emit(line: str) -> None:
        stdout.write(line + "\n")
        stdout.flush()

    emit(encode_handshake())
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        try:
            req = parse_request_line(line)
        except ProtocolError as exc:
            emit(encode_error(None, str(exc)))
            continue
        try:
            if req.image_path is not None:
                data = Path(req.image_path).read_bytes()
                fallback_id = Path(req.image_path).stem
            else:
                data = base64.b64decode(req.image_b64)
                fallback_id = ""
            frame = png_bytes_to_frame(data)
        except (OSError, ValueError) as exc:
            emit(encode_error(req.request_id, f"cannot read image: {exc}"))
            continue
        image_id = req.image_id if req.image_id is not None else fallback_id
        dets = mock_detect(spec, frame, req.conf_threshold, image_id=image_id)
        emit(encode_response(req.request_id, dets))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--spec", required=True, help="mock detector spec JSON file")
    args = parser.parse_args(argv)
    serve(MockDetectorSpec.load(args.spec))
    return 0


if __name__ == "__main__":
    sys.exit(main())
