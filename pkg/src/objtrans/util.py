"""Small shared helpers: canonical JSON and float formatting.

Every file this toolkit writes must be byte-reproducible, so all JSON goes
through one canonical serializer (sorted keys, compact separators, ASCII)
and CSV floats through one fixed format.
"""

from __future__ import annotations

import json

__all__ = ["canonical_dumps", "fmt_float"]


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def fmt_float(x: float) -> str:
    """Shortest round-trip decimal form, stable across runs."""
    return repr(float(x))
