"""Run configuration and the ``key = value`` config file format."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

# config-file key -> TrainConfig attribute
ALIASES = {
    "lambda": "lam",
    "embedder.kind": "embedder_kind",
    "embedder.path": "embedder_path",
    "embedder.b": "embedder_b",
    "embedder.table_size": "embedder_table_size",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    lam: float = 0.001
    d: int = 64
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 10
    variant: str = "drex"
    state_mode: str = "state"
    seed: int = 0
    shuffle: bool = False
    rating_scale: int = 5
    embedder_kind: str = "hashed_trainable"
    embedder_path: str = ""
    embedder_b: int = 768
    embedder_table_size: int = 2 ** 15
    # evaluation
    relevance_threshold: float = 4.0
    normalization: str = "capped"
    scope: str = "test_items"
    eval_input: str = "review"
    # less common switches
    rating_dropout: float = 0.5
    reg_scope: str = "batch"
    explain_window: str = "final_epoch"
    profile_k: int = 10
    kernel: str = "auto"
    threads: int = 1

    def __post_init__(self):
        checks = [
            (self.lr > 0, "lr must be > 0"),
            (self.lam >= 0, "lambda must be >= 0"),
            (self.d >= 1, "d must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.max_epochs >= 0, "max_epochs must be >= 0"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.variant in ("drex", "drex_mlp"), "variant must be drex or drex_mlp"),
            (self.state_mode in ("state", "leaf"), "state_mode must be state or leaf"),
            (self.embedder_kind in ("file_table", "hashed_trainable"),
             "embedder.kind must be file_table or hashed_trainable"),
            (self.normalization in ("capped", "paper_literal"), "normalization must be capped or paper_literal"),
            (self.scope in ("test_items", "full_catalog"), "scope must be test_items or full_catalog"),
            (self.eval_input in ("review", "state"), "eval_input must be review or state"),
            (0.0 <= self.rating_dropout <= 1.0, "rating_dropout must be in [0, 1]"),
            (self.reg_scope in ("batch", "full"), "reg_scope must be batch or full"),
            (self.explain_window in ("final_epoch", "final_batch"),
             "explain_window must be final_epoch or final_batch"),
            (self.rating_scale >= 1, "rating_scale must be >= 1"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def with_overrides(self, pairs) -> "TrainConfig":
        return replace(self, **coerce(pairs))

    def to_pairs(self) -> list[tuple[str, str]]:
        inv = {v: k for k, v in ALIASES.items()}
        return [(inv.get(f.name, f.name), _fmt(getattr(self, f.name))) for f in fields(self)]

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_pairs())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _convert(name: str, raw: str):
    kind = _TYPES[name]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name}") from None


def coerce(pairs) -> dict:
    out = {}
    for key, raw in pairs:
        key = key.strip()
        name = ALIASES.get(key, key)
        if name not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[name] = _convert(name, str(raw))
    return out


def parse_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def load_config(path=None, overrides=()) -> TrainConfig:
    pairs = parse_pairs(Path(path).read_text("utf-8")) if path else []
    return TrainConfig(**coerce(list(pairs) + list(overrides)))
