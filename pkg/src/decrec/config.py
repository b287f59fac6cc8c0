"""Run configuration: a flat key = value file with command-line overrides.

Values are parsed as JSON where possible (numbers, lists, booleans) and
fall back to plain strings. Every pipeline stage snapshots its resolved
configuration next to its outputs; run ids are content hashes of that
snapshot.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


class ConfigError(Exception):
    pass


def parse_config_file(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, _, value = stripped.partition("=")
            out[key.strip()] = parse_value(value.strip())
    return out


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


@dataclass
class RunConfig:
    # data: either raw file paths or an inline synthetic spec
    interactions: str | None = None
    item_groups: str | None = None
    delimiter: str | None = None
    header: bool = False
    synthetic: bool = False
    n_users: int = 500
    n_items: int = 200
    n_groups: int = 2
    interactions_per_user: int = 60
    train_pref: list = field(default_factory=lambda: [0.7, 0.3])
    test_pref: list | None = None
    drift_fraction: float = 0.5  # share of users whose test preference drifts
    drift_start: float = 0.5
    quality_sigma: float = 0.0
    quality_mode: str = "sampled"
    # protocol
    k_core: int = 20
    threshold: float = 4.0
    ratios: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    # model / training
    model: str = "fm"
    variant: str = "baseline"
    dim: int = 64
    lr: float = 0.01
    batch_size: int = 1024
    l2: float = 0.0
    dropout: float = 0.3
    epochs: int = 100
    patience: int = 10
    neg_ratio: int = 1
    # inference / evaluation
    alpha: float = 0.3
    k_list: list = field(default_factory=lambda: [10, 20])
    seed: int = 0
    out: str = "runs"

    VARIANTS = ("baseline", "decrs-ep", "decrs-fm", "unawareness")

    def validate(self):
        if self.model not in ("fm", "nfm"):
            raise ConfigError(f"model must be fm or nfm, got {self.model!r}")
        if self.variant not in self.VARIANTS:
            raise ConfigError(f"variant must be one of {self.VARIANTS}, got {self.variant!r}")
        if not self.synthetic and not self.interactions:
            raise ConfigError("either synthetic = true or an interactions path is required")
        if not self.synthetic and not self.item_groups:
            raise ConfigError("an item_groups metadata path is required for raw datasets")
        for name in ("lr", "dropout", "alpha"):
            if getattr(self, name) <= 0 and name != "dropout":
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.k_core < 1 or self.epochs < 1 or self.batch_size < 1 or self.neg_ratio < 1:
            raise ConfigError("k_core, epochs, batch_size, neg_ratio must be >= 1")
        return self


def load_run_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path:
        values.update(parse_config_file(path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        values[key.strip()] = parse_value(value.strip())
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values).validate()


def resolved_text(config: RunConfig) -> str:
    return json.dumps(dataclasses.asdict(config), indent=2, sort_keys=True) + "\n"


def run_id(config: RunConfig) -> str:
    return hashlib.sha256(resolved_text(config).encode("utf-8")).hexdigest()[:12]


def write_snapshot(path, config: RunConfig):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(resolved_text(config))
