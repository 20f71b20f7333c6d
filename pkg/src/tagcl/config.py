"""Flat key=value run configuration shared by every command."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping

from .datagen import GenConfig
from .encoder import EncoderConfig
from .evaluation import ProbeConfig
from .graph import TextAttributedGraph
from .objectives import TERMS, LossConfig
from .trainer import TrainConfig

CONFIG_NAME = "config.txt"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # data generation
    nodes: int = 200
    communities: int = 2
    p_in: float = 0.1
    p_out: float = 0.01
    tokens_per_node: int = 12
    vocab_per_community: int = 40
    shared_fraction: float = 0.0
    shared_vocab: int = 40
    # encoder
    dim: int = 16
    layers: int = 2
    max_seq_len: int = 16
    # loss
    alpha: float = 0.5
    lambda_tc: float = 1.0
    lambda_nc: float = 1.0
    lambda_sc: float = 1.0
    lambda_tnc: float = 1.0
    lambda_nsc: float = 1.0
    select_ratio: float = 0.5
    select_keep: str = "lowest"
    tau_epsilon: float = 1.0
    mix_beta_range: tuple[float, float] = (0.6, 0.9)
    # training
    learning_rate: float = 1e-2
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 2
    subgraph_k: int = 4
    alpha_ppr: float = 0.15
    span_length_range: tuple[int, int] = (1, 3)
    neighbor_cap: int = 5
    train_fraction: float = 1.0
    # evaluation
    negatives_per_query: int = 50
    ndcg_cutoff: int | None = None
    probe_hidden: int = 32
    probe_epochs: int = 200
    probe_learning_rate: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        # build every sub-config once so invalid values fail before any work starts
        try:
            self.loss_config()
            self.train_config()
            self.probe_config()
            self.gen_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.dim < 2 or self.layers < 1 or self.max_seq_len < 2:
            raise ConfigError("need dim >= 2, layers >= 1, max_seq_len >= 2")
        if self.negatives_per_query < 1:
            raise ConfigError("negatives_per_query must be positive")
        if self.ndcg_cutoff is not None and self.ndcg_cutoff < 1:
            raise ConfigError("ndcg_cutoff must be positive")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")

    def gen_config(self) -> GenConfig:
        return GenConfig(
            nodes=self.nodes,
            communities=self.communities,
            p_in=self.p_in,
            p_out=self.p_out,
            tokens_per_node=self.tokens_per_node,
            vocab_per_community=self.vocab_per_community,
            shared_fraction=self.shared_fraction,
            shared_vocab=self.shared_vocab,
            seed=self.seed,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            alpha=self.alpha,
            lambdas=tuple(getattr(self, f"lambda_{t}") for t in TERMS),
            select_ratio=self.select_ratio,
            select_keep=self.select_keep,
            tau_epsilon=self.tau_epsilon,
            mix_beta_range=self.mix_beta_range,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            loss=self.loss_config(),
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            subgraph_k=self.subgraph_k,
            alpha_ppr=self.alpha_ppr,
            seed=self.seed,
            span_length_range=self.span_length_range,
            neighbor_cap=self.neighbor_cap,
            val_negatives=self.negatives_per_query,
        )

    def encoder_config(self, g: TextAttributedGraph) -> EncoderConfig:
        return EncoderConfig.for_graph(g, dim=self.dim, layers=self.layers, max_seq_len=self.max_seq_len, seed=self.seed)

    def probe_config(self, mode: str = "transductive") -> ProbeConfig:
        return ProbeConfig(
            hidden=self.probe_hidden,
            epochs=self.probe_epochs,
            learning_rate=self.probe_learning_rate,
            mode=mode,
            seed=self.seed,
        )

    def to_text(self) -> str:
        return "".join(f"{f.name}={format_value(getattr(self, f.name))}\n" for f in fields(self))

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def with_overrides(self, overrides: Mapping[str, object]) -> "RunConfig":
        parsed = {}
        for key, raw in overrides.items():
            parsed[key] = parse_value(key, raw) if isinstance(raw, str) else raw
        unknown = set(parsed) - KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return replace(self, **parsed)


KEYS = frozenset(f.name for f in fields(RunConfig))
_DEFAULTS = {f.name: f.default for f in fields(RunConfig)}


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_value(key: str, raw: str):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _DEFAULTS[key]
    raw = raw.strip()
    try:
        if key == "ndcg_cutoff":
            return None if raw.lower() in ("", "none") else int(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",")]
            kind = type(default[0])
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated values")
            return tuple(kind(p) for p in parts)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def read_pairs(path: str | Path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    pairs: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in pairs:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def load_config(path: str | Path | None = None, overrides: Mapping[str, object] | None = None) -> RunConfig:
    pairs: dict[str, object] = dict(read_pairs(path)) if path is not None else {}
    pairs.update(overrides or {})
    return RunConfig().with_overrides(pairs)
