"""INI-style run configuration with command-line overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dataset import DEFAULT_GENRES, SyntheticWorldSpec
from .optimizer import ConfigError, TrainConfig

EXAMPLE_CONFIG = """\
[backend]
# mock | http
kind = mock
base_url = https://api.openai.com/v1
model = gpt-4o
api_key_env = AGP_API_KEY
rpm = 0
max_retries = 4

[world]
seed = 1
n_users = 70
n_items = 400
history_length = 8
list_length = 10
noise_rate = 0.2

[data]
# leave users/rankings empty to train on the synthetic [world]
users =
rankings =
n_train = 20
n_eval = 50
split_seed = 1
allow_overlap = false

[train]
batch_size = 5
history_len = 5
max_epochs = 10
patience = 3
summarization_enabled = true
pbf_enabled = true
seed = 1
parallelism = 1
seed_prompt = default
"""


@dataclass
class BackendConfig:
    kind: str = "mock"
    base_url: str = ""
    model: str = "gpt-4o"
    api_key_env: str = "AGP_API_KEY"
    rpm: float = 0.0
    max_retries: int = 4


@dataclass
class DataConfig:
    users: str = ""
    rankings: str = ""
    n_train: int = 100
    n_eval: int = 300
    split_seed: int = 0
    allow_overlap: bool = False

    @property
    def synthetic(self) -> bool:
        return not (self.users or self.rankings)


@dataclass
class AppConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    world: SyntheticWorldSpec = field(default_factory=SyntheticWorldSpec)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed_prompt: str = "default"
    run_dir: str = ""
    base_dir: Path = Path(".")

    def validate(self) -> None:
        if self.backend.kind not in ("mock", "http"):
            raise ConfigError(f"backend.kind must be 'mock' or 'http', got {self.backend.kind!r}")
        if self.backend.kind == "http" and not self.backend.model:
            raise ConfigError("http backend needs a model name")
        if bool(self.data.users) != bool(self.data.rankings):
            raise ConfigError("data.users and data.rankings must be given together")
        if self.data.n_train < 1 or self.data.n_eval < 0:
            raise ConfigError("data.n_train must be >= 1 and data.n_eval >= 0")
        self.train.validate()

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def _coerce(value: str, typ):
    typ = str(typ)
    if "bool" in typ:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if "tuple" in typ:
        return tuple(x.strip() for x in value.split(",") if x.strip())
    try:
        if "float" in typ:
            return float(value)
        if "int" in typ:
            return int(value)
    except ValueError:
        raise ConfigError(f"bad number {value!r}") from None
    return value.strip()


def _fill(cls, section: configparser.SectionProxy | dict, skip=()):
    known = {f.name: f.type for f in fields(cls)}
    kw = {}
    for key, raw in section.items():
        if key in skip:
            continue
        if key not in known:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        kw[key] = _coerce(raw, known[key])
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> AppConfig:
    if path is None:
        return AppConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(parser.sections()) - {"backend", "world", "data", "train", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = AppConfig(base_dir=path.parent)
    if parser.has_section("backend"):
        cfg.backend = _fill(BackendConfig, parser["backend"])
    if parser.has_section("world"):
        world = dict(parser["world"])
        world.setdefault("genre_vocabulary", ",".join(DEFAULT_GENRES))
        cfg.world = _fill(SyntheticWorldSpec, world)
    if parser.has_section("data"):
        cfg.data = _fill(DataConfig, parser["data"])
    if parser.has_section("train"):
        sec = parser["train"]
        cfg.train = _fill(TrainConfig, sec, skip=("seed_prompt",))
        cfg.seed_prompt = sec.get("seed_prompt", "default").strip() or "default"
    if parser.has_section("run"):
        cfg.run_dir = parser["run"].get("dir", "").strip()
    return cfg


def load_world_spec(path: str | Path) -> SyntheticWorldSpec:
    """Read a ``[world]`` section from an INI file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"spec file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read(path, encoding="utf-8")
    if not parser.has_section("world"):
        raise ConfigError(f"{path} has no [world] section")
    world = dict(parser["world"])
    world.setdefault("genre_vocabulary", ",".join(DEFAULT_GENRES))
    return _fill(SyntheticWorldSpec, world)
