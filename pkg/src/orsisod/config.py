"""Flat ``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored. Every key has a default; unknown
keys are rejected with the file and line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig, TrainSettings


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _channels(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "model.input_size": (int, 64),
    "model.batch": (int, 4),
    "model.channels": (_channels, (8, 16, 16, 24, 24)),
    "model.decoder_channels": (int, 16),
    "model.input_mean": (float, 0.4),
    "model.input_std": (float, 0.2),
    "rpl.reduction_ratio": (int, 4),
    "rpl.cross_gating": (_bool, False),
    "pg.hidden": (int, 16),
    "bins.lo": (float, 0.25),
    "bins.hi": (float, 0.50),
    "dad.train_gate": (str, "gt"),
    "fce.common_channels": (int, 16),
    "loss.beta2": (float, 0.3),
    "loss.eps": (float, 1e-7),
    "optim.lr": (float, 1e-5),
    "optim.momentum": (float, 0.9),
    "optim.decay": (float, 0.99),
    "optim.eps": (float, 1e-8),
    "train.augment": (_bool, True),
    "train.checkpoint_every": (int, 100),
    "train.resume": (str, ""),
    "steps": (int, 300),
    "data_dir": (str, "data"),
    "out_dir": (str, "runs/toy"),
    "seed": (int, 0),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})
    source: str = "<defaults>"

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, text: str, where: str = "") -> None:
        if key not in SCHEMA:
            raise ConfigError(f"{where or self.source}: unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            self.values[key] = parser(text.strip())
        except ValueError as exc:
            raise ConfigError(f"{where or self.source}: bad value for {key!r}: {exc}") from None

    def model_config(self) -> ModelConfig:
        v = self.values
        try:
            return ModelConfig(
                input_size=v["model.input_size"],
                batch=v["model.batch"],
                channels=v["model.channels"],
                common_channels=v["fce.common_channels"],
                decoder_channels=v["model.decoder_channels"],
                reduction_ratio=v["rpl.reduction_ratio"],
                cross_gating=v["rpl.cross_gating"],
                pg_hidden=v["pg.hidden"],
                bins_lo=v["bins.lo"],
                bins_hi=v["bins.hi"],
                train_gate=v["dad.train_gate"],
                input_mean=v["model.input_mean"],
                input_std=v["model.input_std"],
                seed=v["seed"],
            )
        except ConfigError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None

    def train_settings(self) -> TrainSettings:
        v = self.values
        for key in ("optim.lr", "optim.eps", "loss.beta2", "loss.eps"):
            if v[key] < 0 or (key != "optim.lr" and v[key] == 0):
                raise ConfigError(f"{self.source}: {key} must be positive, got {v[key]}")
        if not 0 <= v["optim.momentum"] < 1 or not 0 <= v["optim.decay"] < 1:
            raise ConfigError(f"{self.source}: optim.momentum and optim.decay must lie in [0, 1)")
        return TrainSettings(
            lr=v["optim.lr"], momentum=v["optim.momentum"], decay=v["optim.decay"],
            eps=v["optim.eps"], beta2=v["loss.beta2"], bce_eps=v["loss.eps"],
        )

    def validate(self) -> None:
        self.model_config()
        self.train_settings()
        if self.values["steps"] < 1:
            raise ConfigError(f"{self.source}: steps must be positive")
        if self.values["model.batch"] < 1:
            raise ConfigError(f"{self.source}: model.batch must be positive")
        if self.values["train.checkpoint_every"] < 1:
            raise ConfigError(f"{self.source}: train.checkpoint_every must be positive")

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in SCHEMA)


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cfg = RunConfig(source=source)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        cfg.set(key.strip(), value, where)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))
