"""Run configuration: flat key=value files with section prefixes, merged
with command-line overrides, validated before any work starts.

File format: one ``section.key=value`` (or bare ``key=value``) per line,
``#`` comments, blank lines ignored. See configs/example.conf for every
recognized key.
"""

from __future__ import annotations

from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "KNOWN_KEYS"]


class ConfigError(Exception):
    """Invalid configuration or failed pre-run validation."""


KNOWN_KEYS = {
    "seed",
    "jobs",
    "split",
    "out",
    "dataset",
    "conf",
    "u_threshold",
    "weights",
    "adapter.cmd",
    "adapter.mock_spec",
    "adapter.timeout",
    "adapter.image_mode",
    "augment.transforms_per_image",
    "augment.classes_hsv",
    "augment.skip_classes",
    "sampler.profile",
    "sampler.hue_range",
    "sampler.sat_min",
    "sampler.sat_max",
    "sampler.val_min",
    "sampler.val_max",
    "uq.k",
    "uq.match_iou",
    "uq.min_matched_for_bbox",
    "uq.bbox_penalty",
    "uq.missing_score",
    "uq.normalize_components",
    "uq.rerun_scope",
    "uq.crop_pad",
    "eval.records",
    "eval.iou",
    "eval.bins",
    "eval.pr_points",
    "eval.svg",
    "calibrate.records",
    "calibrate.floor",
    "calibrate.weight_step",
    "calibrate.u_quantiles",
    "calibrate.objective",
    "decompose.table",
    "decompose.trials",
    "bench.frames",
    "bench.detections",
    "bench.size",
}


# Keys holding filesystem paths; when they come from a config file they
# resolve relative to that file, so example configs work from any cwd.
PATH_KEYS = {
    "dataset",
    "out",
    "adapter.mock_spec",
    "eval.records",
    "calibrate.records",
    "decompose.table",
}


def parse_config_file(path: Path | str) -> dict[str, str]:
    values: dict[str, str] = {}
    base = Path(path).resolve().parent
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in PATH_KEYS and value and not Path(value).is_absolute():
            value = str(base / value)
        values[key] = value
    return values


class RunConfig:
    """Merged (file, overrides) view with typed accessors. Every accessor
    raises ConfigError on bad values so commands fail before doing work."""

    def __init__(self, values: dict[str, str]):
        for key in values:
            if key not in KNOWN_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
        self.values = dict(values)

    @classmethod
    def from_sources(
        cls, config_path: str | None, overrides: dict[str, str | None]
    ) -> "RunConfig":
        values = parse_config_file(config_path) if config_path else {}
        for key, value in overrides.items():
            if value is not None:
                values[key] = str(value)
        return cls(values)

    def get_str(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def require_str(self, key: str) -> str:
        value = self.values.get(key)
        if value is None or value == "":
            raise ConfigError(f"missing required config key {key!r}")
        return value

    def get_int(self, key: str, default: int | None = None) -> int | None:
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected integer, got {raw!r}") from exc

    def get_float(self, key: str, default: float | None = None) -> float | None:
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected number, got {raw!r}") from exc

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {raw!r}")

    def get_path(self, key: str, default=None) -> Path | None:
        raw = self.values.get(key)
        if raw is None:
            return default
        return Path(raw)

    def require_path(self, key: str) -> Path:
        return Path(self.require_str(key))

    def get_int_set(self, key: str) -> frozenset[int] | None:
        raw = self.values.get(key)
        if raw is None or raw.strip() == "":
            return None
        try:
            return frozenset(int(p) for p in raw.split(",") if p.strip() != "")
        except ValueError as exc:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from exc

    def get_weights(self) -> tuple[float, float] | None:
        raw = self.values.get("weights")
        if raw is None:
            return None
        parts = raw.split(",")
        if len(parts) != 2:
            raise ConfigError(f"weights: expected 'w_bbox,w_class', got {raw!r}")
        try:
            return float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise ConfigError(f"weights: {exc}") from exc

    def effective_lines(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))
