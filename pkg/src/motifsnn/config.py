"""Experiment configuration files and seed derivation.

Configs are INI files with four sections::

    [experiment]  name, hidden (one group per width), families, seed
    [genes]       <width> = comma-separated gene counts for cm models
    [train]       any TrainConfig field
    [eval]        alpha, n_chips, freeze_encodings
    [data]        sizes, seeds, balanced

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .models import FAMILIES
from .train import TrainConfig

DEFAULT_GENES = {32: (4, 8, 16), 128: (4, 16, 64)}


class ConfigError(ValueError):
    pass


def derive_seed(master: int, *parts) -> int:
    """Stable 63-bit seed from the master seed and a label path."""
    key = json.dumps([int(master), *[str(p) for p in parts]])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big") >> 1


@dataclass(frozen=True)
class ModelSpec:
    family: str
    hidden: int
    genes: int | None = None

    @property
    def name(self) -> str:
        return f"cm-g{self.genes}" if self.family == "cm" else self.family

    @property
    def group(self) -> str:
        return f"hidden-{self.hidden}"

    @property
    def widths(self) -> tuple[int, int, int]:
        return (4, self.hidden, 3)


@dataclass
class EvalConfig:
    alpha: float = 0.1
    n_chips: int = 30
    freeze_encodings: bool = False


@dataclass
class DataConfig:
    train_size: int = 5000
    val_size: int = 1000
    test_size: int = 1000
    train_seed: int = 42
    val_seed: int = 41
    test_seed: int = 40
    balanced: bool = True

    def sizes(self) -> dict[str, int]:
        return {"training": self.train_size, "validation": self.val_size, "test": self.test_size}

    def seeds(self) -> dict[str, int]:
        return {"training": self.train_seed, "validation": self.val_seed, "test": self.test_seed}


@dataclass
class ExperimentConfig:
    name: str = "yinyang"
    hidden: tuple[int, ...] = (32, 128)
    families: tuple[str, ...] = ("mlp", "mlp-hw-aware", "cm")
    genes: dict[int, tuple[int, ...]] = field(default_factory=lambda: dict(DEFAULT_GENES))
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.families = tuple(self.families)
        for f in self.families:
            if f not in FAMILIES:
                raise ConfigError(f"unknown model family {f!r}; expected one of {FAMILIES}")
        if "cm" in self.families:
            for h in self.hidden:
                if not self.genes.get(h):
                    raise ConfigError(f"no gene counts given for hidden width {h}")

    def model_specs(self) -> list[ModelSpec]:
        specs = []
        for h in self.hidden:
            for f in self.families:
                if f == "cm":
                    specs.extend(ModelSpec("cm", h, g) for g in self.genes[h])
                else:
                    specs.append(ModelSpec(f, h))
        return specs

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {
            "name": self.name,
            "hidden": _fmt(self.hidden),
            "families": _fmt(self.families),
            "seed": str(self.seed),
        }
        cp["genes"] = {str(h): _fmt(self.genes[h]) for h in sorted(self.genes)}
        cp["train"] = {k: _fmt(v) for k, v in self.train.to_dict().items()}
        cp["eval"] = {f.name: _fmt(getattr(self.eval, f.name)) for f in fields(self.eval)}
        cp["data"] = {f.name: _fmt(getattr(self.data, f.name)) for f in fields(self.data)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        known = {"experiment", "genes", "train", "eval", "data"}
        extra = set(cp.sections()) - known
        if extra:
            raise ConfigError(f"{source}: unknown sections {sorted(extra)}")
        kw = {}
        if cp.has_section("experiment"):
            sec = dict(cp["experiment"])
            _reject_unknown(source, "experiment", sec, {"name", "hidden", "families", "seed"})
            if "name" in sec:
                kw["name"] = sec["name"]
            if "hidden" in sec:
                kw["hidden"] = tuple(_parse_list(sec["hidden"], int, source, "hidden"))
            if "families" in sec:
                kw["families"] = tuple(_parse_list(sec["families"], str, source, "families"))
            if "seed" in sec:
                kw["seed"] = _parse(sec["seed"], int, source, "seed")
        if cp.has_section("genes"):
            genes = {}
            for k, v in cp["genes"].items():
                width = _parse(k, int, source, "genes")
                genes[width] = tuple(_parse_list(v, int, source, f"genes.{k}"))
            kw["genes"] = {**DEFAULT_GENES, **genes}
        kw["train"] = _load_section(cp, "train", TrainConfig, source)
        kw["eval"] = _load_section(cp, "eval", EvalConfig, source)
        kw["data"] = _load_section(cp, "data", DataConfig, source)
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_ini(path.read_text(), str(path))

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def smoke(self) -> "ExperimentConfig":
        """Tiny variant of this config that runs in seconds."""
        cfg = ExperimentConfig.from_ini(self.to_ini())
        cfg.name = f"{self.name}-smoke"
        cfg.train.epochs = 1
        cfg.eval.n_chips = 2
        cfg.data.train_size, cfg.data.val_size, cfg.data.test_size = 30, 9, 9
        return cfg


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _parse(text: str, typ, source: str, key: str):
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        return typ(text)
    except ValueError as exc:
        raise ConfigError(f"{source}: bad value for {key}: {exc}") from None


def _parse_list(text: str, typ, source: str, key: str) -> list:
    return [_parse(part, typ, source, key) for part in text.split(",") if part.strip()]


def _reject_unknown(source, section, values, allowed):
    extra = set(values) - set(allowed)
    if extra:
        raise ConfigError(f"{source}: unknown keys in [{section}]: {sorted(extra)}")


def _load_section(cp, section, cls, source):
    if not cp.has_section(section):
        return cls()
    types = {f.name: f.type for f in fields(cls)}
    values = dict(cp[section])
    _reject_unknown(source, section, values, types)
    kw = {}
    for key, text in values.items():
        typ = types[key]
        if "tuple" in str(typ):
            kw[key] = tuple(_parse_list(text, float, source, key))
        else:
            base = {"int": int, "float": float, "bool": bool, "str": str}[str(typ)]
            kw[key] = _parse(text, base, source, key)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: [{section}] {exc}") from None
