"""Run configuration as line-based ``key=value`` text."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .semantic import QualityLadder

MODES = ("topk", "threshold")


@dataclass(frozen=True)
class RunConfig:
    q_low: int = 30
    q_high: int = 70
    levels: int = 5
    mode: str = "topk"
    top_k: int = 5
    threshold: float = 0.0
    seed: int = 0
    dataset: str = ""
    output: str = "out"
    checkpoint: str = ""
    maps: str = ""  # directory of <id>.pgm saliency maps, used instead of the network
    baseline_q: int = 50
    tolerance: float = 0.01
    psnr_s_cutoff: float = 0.5
    workers: int = 1
    sweep_sizes: tuple[int, ...] = field(default=(512, 384, 256, 192))

    def __post_init__(self):
        QualityLadder(self.q_low, self.q_high, self.levels)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if not 1 <= self.baseline_q <= 100:
            raise ValueError(f"baseline_q must be in 1..100, got {self.baseline_q}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if any(s < 1 for s in self.sweep_sizes):
            raise ValueError(f"sweep sizes must be positive, got {self.sweep_sizes}")

    @property
    def ladder(self) -> QualityLadder:
        return QualityLadder(self.q_low, self.q_high, self.levels)

    def dumps(self) -> str:
        """Canonical text: every key in declaration order, one per line."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        return cls().override(_parse_pairs(text))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    def override(self, values: dict[str, str | object]) -> "RunConfig":
        """New config with ``values`` applied; strings are converted to the field's type."""
        types = {f.name: f.default for f in fields(self)}
        changes = {}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            changes[key] = _convert(key, raw, types[key]) if isinstance(raw, str) else raw
        return replace(self, **changes)


def _parse_pairs(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(key: str, raw: str, default):
    try:
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw
