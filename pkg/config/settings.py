"""Run configuration: JSON loading, schema validation and defaults."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

from platformdirs import user_data_dir

from utils.errors import ConfigError

APP_NAME = "lorafuse"

Validator = Callable[[Any], Optional[str]]


def default_output_dir() -> str:
    """OS-appropriate data directory used when a config names no output_dir."""
    return str(Path(user_data_dir(APP_NAME)) / "runs")


@dataclass(frozen=True)
class ModelSettings:
    topology: str = "chain"
    hidden: int = 32


@dataclass(frozen=True)
class DomainSettings:
    d_in: int = 16
    d_out: int = 16
    teacher_rank: int = 2
    teacher_scale: float = 1.0
    overlap: float = 0.8
    noise: float = 0.0
    train_samples: int = 64
    test_samples: int = 64
    cross_samples: int = 64


@dataclass(frozen=True)
class PruneSettings:
    ratio: float = 0.6
    calibration_size: int = 32


@dataclass(frozen=True)
class LoraSettings:
    rank: int = 4
    alpha: float = 8.0


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 0.05
    steps: int = 300


@dataclass(frozen=True)
class FusionSettings:
    method: str = "fedavg"
    factor_avg: bool = False


@dataclass(frozen=True)
class CrSettings:
    enabled: bool = True
    max_dirs: Optional[int] = None
    tol: float = 1e-6


@dataclass(frozen=True)
class EvalSettings:
    hardness_floor: float = 0.01


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; every optional key carries its default."""

    seed: int = 0
    num_clients: int = 2
    workers: int = 1
    model: ModelSettings = field(default_factory=ModelSettings)
    domains: DomainSettings = field(default_factory=DomainSettings)
    prune: PruneSettings = field(default_factory=PruneSettings)
    lora: LoraSettings = field(default_factory=LoraSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    cr: CrSettings = field(default_factory=CrSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    output_dir: str = field(default_factory=default_output_dir)

    @property
    def max_dirs(self) -> int:
        return self.cr.max_dirs if self.cr.max_dirs is not None else self.lora.rank

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)

    def with_overrides(self, **sections: Mapping[str, Any]) -> "RunConfig":
        """Copy with some fields of nested sections replaced, e.g. prune={"ratio": 0.4}."""
        changes = {name: replace(getattr(self, name), **values) for name, values in sections.items()}
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# ---------------------------------------------------------------- validators

def _integer(minimum: int | None = None) -> Validator:
    def check(v: Any) -> Optional[str]:
        if isinstance(v, bool) or not isinstance(v, int):
            return f"expected an integer, got {v!r}"
        if minimum is not None and v < minimum:
            return f"must be >= {minimum}, got {v}"
        return None
    return check


def _number(lo: float | None = None, hi: float | None = None, *, positive: bool = False) -> Validator:
    def check(v: Any) -> Optional[str]:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return f"expected a number, got {v!r}"
        if positive and not v > 0:
            return f"must be > 0, got {v}"
        if lo is not None and hi is not None and not lo <= v <= hi:
            return f"must lie in [{lo}, {hi}], got {v}"
        if lo is not None and hi is None and v < lo:
            return f"must be >= {lo}, got {v}"
        return None
    return check


def _choice(*choices: str) -> Validator:
    def check(v: Any) -> Optional[str]:
        if v not in choices:
            return f"must be one of {', '.join(repr(c) for c in choices)}, got {v!r}"
        return None
    return check


def _boolean(v: Any) -> Optional[str]:
    return None if isinstance(v, bool) else f"expected true or false, got {v!r}"


def _string(v: Any) -> Optional[str]:
    return None if isinstance(v, str) and v else f"expected a non-empty string, got {v!r}"


def _optional(inner: Validator) -> Validator:
    def check(v: Any) -> Optional[str]:
        return None if v is None else inner(v)
    return check


SECTIONS: dict[str, type] = {
    "model": ModelSettings,
    "domains": DomainSettings,
    "prune": PruneSettings,
    "lora": LoraSettings,
    "train": TrainSettings,
    "fusion": FusionSettings,
    "cr": CrSettings,
    "eval": EvalSettings,
}

SCHEMA: dict[str, Any] = {
    "seed": _integer(0),
    "num_clients": _integer(1),
    "workers": _integer(1),
    "output_dir": _string,
    "model": {"topology": _choice("single", "chain"), "hidden": _integer(1)},
    "domains": {
        "d_in": _integer(1),
        "d_out": _integer(1),
        "teacher_rank": _integer(1),
        "teacher_scale": _number(positive=True),
        "overlap": _number(0.0, 1.0),
        "noise": _number(0.0),
        "train_samples": _integer(1),
        "test_samples": _integer(1),
        "cross_samples": _integer(1),
    },
    "prune": {"ratio": _number(0.0, 1.0), "calibration_size": _integer(0)},
    "lora": {"rank": _integer(1), "alpha": _number(positive=True)},
    "train": {"lr": _number(positive=True), "steps": _integer(0)},
    "fusion": {"method": _choice("fedavg", "ffa", "fedsa"), "factor_avg": _boolean},
    "cr": {"enabled": _boolean, "max_dirs": _optional(_integer(1)), "tol": _number(positive=True)},
    "eval": {"hardness_floor": _number(0.0)},
}


def _reject_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    seen: dict[str, Any] = {}
    for key, value in pairs:
        if key in seen:
            raise ConfigError([f"duplicate key {key!r}"])
        seen[key] = value
    return seen


def parse_config(data: Mapping[str, Any], *, source: str | Path | None = None) -> RunConfig:
    """Validate a mapping against the schema and fill defaults."""
    problems: list[str] = []
    if not isinstance(data, Mapping):
        raise ConfigError(["top level must be a JSON object"], source=source)

    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {}
    for key, value in data.items():
        rule = SCHEMA.get(key)
        if rule is None:
            problems.append(f"unknown key {key!r}")
        elif isinstance(rule, dict):
            if not isinstance(value, Mapping):
                problems.append(f"{key}: expected an object, got {value!r}")
                continue
            sections[key] = {}
            for sub, sub_value in value.items():
                sub_rule = rule.get(sub)
                if sub_rule is None:
                    problems.append(f"unknown key '{key}.{sub}'")
                    continue
                err = sub_rule(sub_value)
                if err:
                    problems.append(f"{key}.{sub}: {err}")
                else:
                    sections[key][sub] = float(sub_value) if _is_float_field(key, sub) else sub_value
        else:
            err = rule(value)
            if err:
                problems.append(f"{key}: {err}")
            else:
                top[key] = value

    if problems:
        raise ConfigError(problems, source=source)

    built = {name: cls(**sections.get(name, {})) for name, cls in SECTIONS.items()}
    config = RunConfig(**top, **built)
    _cross_checks(config, problems)
    if problems:
        raise ConfigError(problems, source=source)
    return config


def load_config(path: str | Path, *, seed: int | None = None) -> RunConfig:
    """Read and validate a JSON run configuration; ``seed`` overrides the file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([f"cannot read config: {e.strerror or e}"], source=path) from e
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except ConfigError as e:
        raise ConfigError(e.problems, source=path) from None
    except json.JSONDecodeError as e:
        raise ConfigError([f"not valid JSON: {e}"], source=path) from e
    config = parse_config(data, source=path)
    return config.with_seed(seed) if seed is not None else config


def _is_float_field(section: str, key: str) -> bool:
    annotation = SECTIONS[section].__dataclass_fields__[key].type
    return annotation in ("float", float)


def _cross_checks(config: RunConfig, problems: list[str]) -> None:
    d = config.domains
    if (config.num_clients + 1) * d.teacher_rank > d.d_out:
        problems.append(
            f"domains.teacher_rank: (num_clients + 1) * teacher_rank = "
            f"{(config.num_clients + 1) * d.teacher_rank} exceeds d_out = {d.d_out}"
        )
    if d.teacher_rank > d.d_in:
        problems.append(f"domains.teacher_rank: {d.teacher_rank} exceeds d_in = {d.d_in}")
