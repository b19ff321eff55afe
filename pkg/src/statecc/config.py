"""Experiment configuration (YAML, schema 1)."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .channel import ChannelError, DiscreteStateChannel, FadingModel, discrete_channel_from_dict, load_discrete_channel
from .core import POLICIES, SCHEMES

SCHEMA_VERSION = 1

_KEYS = {
    "schema", "channel", "schemes", "policies", "t", "D", "T_s", "B", "trials",
    "seed", "eps", "margin", "samples", "out", "demands", "transcript",
}
_CHANNEL_KEYS = {"kind", "K", "P", "file", "states", "schema"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    channel: object
    schemes: list[str] = field(default_factory=lambda: ["state-adaptive", "blockwise", "ergodic"])
    policies: list[str] = field(default_factory=lambda: ["opportunistic"])
    t_values: list[int] = field(default_factory=list)
    D: int = 0
    T_s: int = 100
    B: int = 10_000
    trials: int = 1
    seed: int = 0
    eps: float | None = None
    margin: float = 0.03
    samples: int = 1_000_000
    out: str = "results"
    demands: list[tuple[int, ...]] = field(default_factory=list)
    transcript: bool = True

    @property
    def K(self) -> int:
        return self.channel.K


def builtin_config_path(name: str) -> Path:
    return Path(str(resources.files("statecc") / "data" / f"{name}.yaml"))


def resolve_config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    builtin = builtin_config_path(name)
    if builtin.exists():
        return builtin
    raise ConfigError(f"config {name!r} not found (neither a file nor a bundled config)")


def _channel(desc, base: Path):
    if not isinstance(desc, dict):
        raise ConfigError("channel must be a mapping")
    unknown = set(desc) - _CHANNEL_KEYS
    if unknown:
        raise ConfigError(f"unknown channel keys: {sorted(unknown)}")
    kind = desc.get("kind")
    try:
        if kind == "fading":
            return FadingModel(K=int(desc["K"]), P=float(desc["P"]))
        if kind == "discrete":
            if "file" in desc:
                path = Path(desc["file"])
                if not path.is_absolute():
                    path = base / path
                if not path.exists():
                    raise ConfigError(f"channel file {path} does not exist")
                return load_discrete_channel(path)
            return discrete_channel_from_dict({"schema": 1, "kind": "discrete", "states": desc.get("states")})
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"incomplete channel description: {exc}") from exc
    except ChannelError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"channel kind must be 'fading' or 'discrete', got {kind!r}")


def load_config(name: str) -> ExperimentConfig:
    path = resolve_config_path(name)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(doc, path.parent)


def config_from_dict(doc: dict, base: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - _KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {SCHEMA_VERSION}")
    cfg = ExperimentConfig(channel=_channel(doc.get("channel"), base))
    K = cfg.K
    for key in ("schemes", "policies"):
        if key in doc:
            setattr(cfg, key, list(doc[key]))
    bad = [s for s in cfg.schemes if s not in SCHEMES] + [p for p in cfg.policies if p not in POLICIES]
    if bad:
        raise ConfigError(f"unknown schemes/policies: {bad}")
    tv = doc.get("t", "all")
    cfg.t_values = list(range(K)) if tv == "all" else [int(v) for v in (tv if isinstance(tv, list) else [tv])]
    if any(not 0 <= v <= K - 1 for v in cfg.t_values):
        raise ConfigError(f"t values must lie in 0..{K - 1}")
    for key in ("D", "T_s", "B", "trials", "seed", "samples"):
        if key in doc:
            setattr(cfg, key, int(doc[key]))
    cfg.D = cfg.D or K
    if cfg.trials < 1 or cfg.T_s < 1 or cfg.B < 1 or cfg.samples < 1 or cfg.D < 1:
        raise ConfigError("trials, T_s, B, samples and D must be positive")
    if doc.get("eps") is not None:
        cfg.eps = float(doc["eps"])
        if cfg.eps < 0:
            raise ConfigError("eps must be nonnegative")
    if "margin" in doc:
        cfg.margin = float(doc["margin"])
        if not 0 <= cfg.margin < 1:
            raise ConfigError("margin must lie in [0, 1)")
    cfg.out = str(doc.get("out", cfg.out))
    cfg.transcript = bool(doc.get("transcript", True))
    if "demands" in doc:
        cfg.demands = [tuple(int(x) for x in d) for d in doc["demands"]]
    else:
        cfg.demands = default_demands(K, cfg.D)
    for d in cfg.demands:
        if len(d) != K or any(not 1 <= x <= cfg.D for x in d):
            raise ConfigError(f"demand vector {d} does not fit K={K}, D={cfg.D}")
    return cfg


def default_demands(K: int, D: int) -> list[tuple[int, ...]]:
    """All-distinct demands (when D >= K) plus all receivers asking for file 1."""
    out = []
    if D >= K:
        out.append(tuple(range(1, K + 1)))
    out.append(tuple([1] * K))
    return out


def channel_label(ch) -> str:
    if isinstance(ch, FadingModel):
        return f"fading(K={ch.K}, P={ch.P})"
    if isinstance(ch, DiscreteStateChannel):
        return f"discrete(K={ch.K}, states={list(ch.states)})"
    return type(ch).__name__
