"""Run configuration: defaults, `key = value` files, and overrides."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

from structshot.attention import KINDS, POOLINGS, AttentionKind
from structshot.encoder import GinConfig
from structshot.errors import ConfigError, StructshotError
from structshot.fusion import VARIANTS, BranchConfig, ModelVariant
from structshot.graphs import DEFAULT_DEGREE_CAP

logger = logging.getLogger("structshot")


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    variant: str = "g"
    global_attn: str = "self"
    local_attn: str = "self"
    n: int = 3
    k: int = 5
    q: int = 15
    hidden_dim: int = 64
    num_layers: int = 5
    layers_used: tuple[int, ...] | None = None
    learning_rate: float = 0.001
    iterations: int = 700
    validate_every: int = 20
    eval_tasks: int = 500
    tasks_per_iteration: int = 1
    seed: int = 0
    pooling: str = "mean"
    heads: int = 2
    attn_layers: int = 1
    attn_depth: int = 1
    epsilon_floor: bool = False
    degree_cap: int = DEFAULT_DEGREE_CAP
    val_tasks: int = 100
    log_every: int = 20
    num_substructures: int = 2
    learn_eps: bool = False
    l2_normalize: bool = True
    workers: int = 1
    holdout_per_class: int | None = None
    progress: bool = True

    def __post_init__(self):
        positive = (
            "n", "k", "q", "hidden_dim", "num_layers", "validate_every", "eval_tasks",
            "tasks_per_iteration", "heads", "attn_layers", "attn_depth", "degree_cap",
            "val_tasks", "log_every", "num_substructures", "workers",
        )  # fmt: skip
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.holdout_per_class is not None and self.holdout_per_class < 1:
            raise ConfigError(f"holdout_per_class must be >= 1, got {self.holdout_per_class}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("global_attn", "local_attn"):
            if getattr(self, name) not in KINDS:
                raise ConfigError(f"unknown {name} {getattr(self, name)!r}; expected one of {KINDS}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}; expected one of {POOLINGS}")
        if self.layers_used is not None:
            object.__setattr__(self, "layers_used", tuple(self.layers_used))
        # Surface encoder/attention/variant problems at configuration time.
        try:
            self.gin_config()
            self.model_variant()
        except StructshotError as e:
            raise ConfigError(str(e)) from None
        sequence_kinds = {"self", "transformer"}
        used = {self.global_attn, self.local_attn} if self.variant != "base" else set()
        if used & sequence_kinds and self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by {self.heads} heads")

    @property
    def holdout(self) -> int:
        return self.holdout_per_class if self.holdout_per_class is not None else self.k + self.q

    def attention_kind(self, name: str) -> AttentionKind:
        return AttentionKind(
            name=name,
            heads=self.heads,
            layers=self.attn_layers,
            depth=self.attn_depth,
            pooling=self.pooling,
        )

    def gin_config(self) -> GinConfig:
        return GinConfig(
            num_layers=self.num_layers,
            hidden_dim=self.hidden_dim,
            learn_eps=self.learn_eps,
            layers_used=self.layers_used,
        )

    def model_variant(self) -> ModelVariant:
        global_kind = self.attention_kind(self.global_attn)
        local_kind = self.attention_kind(self.local_attn)
        if self.variant == "base":
            return ModelVariant.base()
        if self.variant == "g":
            return ModelVariant.global_only(global_kind)
        if self.variant == "l":
            return ModelVariant.local_only(local_kind)
        if self.variant == "full":
            return ModelVariant.full(global_kind, local_kind)
        return ModelVariant.ensemble(
            BranchConfig("global", global_attn=global_kind),
            BranchConfig("local", local_attn=local_kind),
        )

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        if data["layers_used"] is not None:
            data["layers_used"] = list(data["layers_used"])
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> RunConfig:
        unknown = sorted(set(data) - FIELD_NAMES)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        values = dict(data)
        if values.get("layers_used") is not None:
            values["layers_used"] = tuple(values["layers_used"])
        return cls(**values)

    def with_overrides(self, overrides: Mapping) -> RunConfig:
        """Copy with every non-None override applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        unknown = sorted(set(changes) - FIELD_NAMES)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return dataclasses.replace(self, **changes)


FIELD_NAMES = frozenset(f.name for f in dataclasses.fields(RunConfig))


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_int(text: str) -> int | None:
    return None if text.lower() in ("", "none") else int(text)


def _parse_layers(text: str) -> tuple[int, ...] | None:
    if text.lower() in ("", "none"):
        return None
    return tuple(int(part) for part in text.replace(" ", "").split(",") if part)


_PARSERS = {
    "dataset": str,
    "variant": str,
    "global_attn": str,
    "local_attn": str,
    "pooling": str,
    "learning_rate": float,
    "layers_used": _parse_layers,
    "holdout_per_class": _parse_optional_int,
    "epsilon_floor": _parse_bool,
    "learn_eps": _parse_bool,
    "l2_normalize": _parse_bool,
    "progress": _parse_bool,
}


def parse_value(key: str, text: str):
    if key not in FIELD_NAMES:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return _PARSERS.get(key, int)(text)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def load_config_file(path: str | Path) -> dict:
    """Read UTF-8 `key = value` lines. Blank lines and `#` comments are skipped."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, text = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{line_no}: expected `key = value`")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        try:
            values[key] = parse_value(key, text.strip())
        except ConfigError as e:
            raise ConfigError(f"{path}:{line_no}: {e}") from None
    logger.debug(f"Read {len(values)} config keys from {path}")
    return values


def build_config(config_path: str | Path | None = None, overrides: Mapping | None = None) -> RunConfig:
    """Defaults, then the config file, then non-None overrides."""
    values = load_config_file(config_path) if config_path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(values)
