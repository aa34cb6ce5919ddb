"""Runtime settings from the environment and experiment configuration documents."""

from __future__ import annotations

import hashlib
import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

from dotenv import load_dotenv

from .errors import ParseError, RangeError, UnknownKey
from .experiments import DETERMINISTIC_STUDIES, LAMBDA_GRID, MIN_TRIALS, STUDIES
from .graphs import FAMILIES, MAX_LEVELS, MIN_LEVELS
from .resistance import ALL_PAIRS_BUDGET

load_dotenv()

SCHEMA_VERSION = 1
COMMANDS = ("gen", "resist", "oracle", "walk", "exp", "validate")
ORACLES = ("return_time", "hitting_time", "excursion", "expected_hitting", "commute", "cover", "laplace")
PRIMARY_OUTPUTS = {"gen": "graph.json", "resist": "resistance.csv", "oracle": "oracle.json", "walk": "local_times.csv"}


@dataclass(frozen=True)
class RuntimeSettings:
    """Values read from environment variables (or a .env file)."""

    output_dir: str
    workers: int
    log_level: str
    all_pairs_budget: int


def _positive_int_env(name: str, default: int) -> int:
    raw = os.getenv(name, str(default))
    try:
        value = int(raw)
    except ValueError as exc:
        logging.error("%s must be an integer. Current value: %s", name, raw)
        raise RangeError(f"{name} must be an integer, got {raw!r}") from exc
    if value < 1:
        logging.error("%s must be positive. Current value: %s", name, raw)
        raise RangeError(f"{name} must be positive, got {value}")
    return value


def load_runtime_config() -> RuntimeSettings:
    """Load runtime settings with defaults for anything unset."""

    log_level = os.getenv("RESISTWALK_LOG_LEVEL", "WARNING").upper()
    level_names = logging.getLevelNamesMapping() if hasattr(logging, "getLevelNamesMapping") else dict(logging._nameToLevel)  # Python < 3.11
    if log_level not in level_names:
        logging.error("RESISTWALK_LOG_LEVEL is not a logging level. Current value: %s", log_level)
        raise RangeError(f"unknown log level {log_level!r}")

    return RuntimeSettings(
        output_dir=os.getenv("RESISTWALK_OUTPUT_DIR", "./data"),
        workers=_positive_int_env("RESISTWALK_WORKERS", 1),
        log_level=log_level,
        all_pairs_budget=_positive_int_env("RESISTWALK_ALL_PAIRS_BUDGET", ALL_PAIRS_BUDGET),
    )


@dataclass(frozen=True)
class GraphSection:
    family: str = "gasket"
    level: int = 2
    weight: float = 1.0
    input: str | None = None


@dataclass(frozen=True)
class ExperimentSection:
    study: str = "thm-a"
    family: str = "gasket"
    levels: tuple[int, ...] = (1, 2, 3)
    T: float = 1.0
    L: float = 1.0
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    n_trials: int = 2_000
    t_values: tuple[float, ...] = (0.5, 1.0)
    cap: int | None = None
    c_psi: float | None = None
    exponent: float | None = None
    x: int = 0
    y: int = 1
    i: int = 1
    n_functions: int = 1_000
    n_snapshots: int = 100


@dataclass(frozen=True)
class OracleSection:
    kind: str = "return_time"
    x: int = 0
    y: int = 1
    horizon: int = 1_000
    thetas: tuple[float, ...] = (0.001, 0.01)


@dataclass(frozen=True)
class ResistSection:
    pairs: str = "all"


@dataclass(frozen=True)
class WalkSection:
    start: int = 0
    steps: int = 1_000
    cover: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    seed: int | None = None
    output_dir: str | None = None
    output_file: str | None = None
    workers: int | None = None
    schema_version: int = SCHEMA_VERSION
    validate_monte_carlo: bool = False
    graph: GraphSection = field(default_factory=GraphSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    walk: WalkSection = field(default_factory=WalkSection)
    resist: ResistSection = field(default_factory=ResistSection)

    @property
    def stochastic(self) -> bool:
        if self.command == "walk":
            return True
        if self.command == "exp":
            return self.experiment.study not in DETERMINISTIC_STUDIES
        if self.command == "validate":
            return self.validate_monte_carlo
        return False

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, excluding the worker count."""
        payload = self.to_dict()
        payload.pop("workers")
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


_SECTIONS = {
    "graph": GraphSection,
    "experiment": ExperimentSection,
    "oracle": OracleSection,
    "walk": WalkSection,
    "resist": ResistSection,
}
_TOP_LEVEL = {"schema_version", "command", "seed", "output_dir", "output_file", "workers", "validate_monte_carlo", *_SECTIONS}


def _reject_unknown(table: Mapping[str, Any], allowed, where: str) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise UnknownKey(f"unknown key(s) {unknown} in {where}")


def _section(cls, table: Any, where: str):
    if not isinstance(table, Mapping):
        raise ParseError(f"[{where}] must be a table")
    _reject_unknown(table, cls.__dataclass_fields__, f"[{where}]")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in table.items()}
    return cls(**values)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise RangeError(message)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def parse_pairs(text: str) -> list[tuple[int, int]] | None:
    """``"all"`` gives None; otherwise comma-separated ``x:y`` vertex pairs."""
    if text == "all":
        return None
    pairs = []
    for item in text.split(","):
        left, sep, right = (part.strip() for part in item.partition(":"))
        if not sep or not left.isdigit() or not right.isdigit():
            raise RangeError(f"pairs must be 'all' or x:y items separated by commas, got {text!r}")
        pairs.append((int(left), int(right)))
    return pairs


def _check_family_level(family: str, level: Any, where: str) -> None:
    _require(family in FAMILIES, f"{where}: family must be one of {FAMILIES}, got {family!r}")
    _require(_is_int(level), f"{where}: level must be an integer, got {level!r}")
    _require(
        MIN_LEVELS[family] <= level <= MAX_LEVELS[family],
        f"{where}: {family} level must lie in [{MIN_LEVELS[family]}, {MAX_LEVELS[family]}], got {level}",
    )


def _validate(config: ExperimentConfig) -> None:
    _require(config.schema_version == SCHEMA_VERSION, f"schema_version must be {SCHEMA_VERSION}")
    _require(config.command in COMMANDS, f"command must be one of {COMMANDS}, got {config.command!r}")
    if config.seed is not None:
        _require(_is_int(config.seed) and config.seed >= 0, f"seed must be a nonnegative integer, got {config.seed!r}")
    if config.stochastic:
        _require(config.seed is not None, f"command {config.command!r} is stochastic and needs a seed")
    if config.workers is not None:
        _require(_is_int(config.workers) and config.workers >= 1, f"workers must be positive, got {config.workers!r}")
    if config.output_file is not None:
        _require(config.command in PRIMARY_OUTPUTS, f"output_file applies only to {sorted(PRIMARY_OUTPUTS)}")
        _require(
            isinstance(config.output_file, str) and bool(config.output_file) and not os.path.isabs(config.output_file),
            f"output_file must be a path relative to the output directory, got {config.output_file!r}",
        )

    graph = config.graph
    if graph.input is None:
        _check_family_level(graph.family, graph.level, "[graph]")
    _require(_is_number(graph.weight) and graph.weight > 0, f"[graph] weight must be positive, got {graph.weight!r}")

    exp = config.experiment
    _require(exp.study in STUDIES, f"[experiment] study must be one of {STUDIES}, got {exp.study!r}")
    for level in exp.levels:
        _check_family_level(exp.family, level, "[experiment]")
    _require(len(exp.levels) > 0, "[experiment] levels must not be empty")
    _require(_is_number(exp.T) and exp.T > 0, f"[experiment] T must be positive, got {exp.T!r}")
    _require(_is_number(exp.L) and exp.L >= 1, f"[experiment] L must be at least 1, got {exp.L!r}")
    _require(
        _is_int(exp.n_trials) and exp.n_trials >= MIN_TRIALS,
        f"[experiment] n_trials must be an integer >= {MIN_TRIALS}, got {exp.n_trials!r}",
    )
    grid = list(exp.lambda_grid)
    _require(
        bool(grid) and all(_is_number(v) and v >= 0 for v in grid) and grid == sorted(set(grid)),
        f"[experiment] lambda_grid must be nonnegative and increasing, got {grid}",
    )
    _require(all(_is_number(t) and t > 0 for t in exp.t_values), "[experiment] t_values must be positive")
    if exp.cap is not None:
        _require(_is_int(exp.cap) and exp.cap >= 1, f"[experiment] cap must be a positive integer, got {exp.cap!r}")
    if exp.c_psi is not None:
        _require(_is_number(exp.c_psi) and exp.c_psi > 0, f"[experiment] c_psi must be positive, got {exp.c_psi!r}")
    _require(_is_int(exp.i) and exp.i >= 1, f"[experiment] i must be at least 1, got {exp.i!r}")
    _require(_is_int(exp.n_functions) and exp.n_functions >= 0, "[experiment] n_functions must be nonnegative")
    _require(_is_int(exp.n_snapshots) and exp.n_snapshots >= 0, "[experiment] n_snapshots must be nonnegative")

    oracle = config.oracle
    _require(oracle.kind in ORACLES, f"[oracle] kind must be one of {ORACLES}, got {oracle.kind!r}")
    _require(_is_int(oracle.horizon) and oracle.horizon >= 1, f"[oracle] horizon must be positive, got {oracle.horizon!r}")
    _require(all(_is_number(t) and t >= 0 for t in oracle.thetas), "[oracle] thetas must be nonnegative")

    walk = config.walk
    _require(_is_int(walk.start) and walk.start >= 0, f"[walk] start must be a vertex id, got {walk.start!r}")
    _require(_is_int(walk.steps) and walk.steps >= 0, f"[walk] steps must be nonnegative, got {walk.steps!r}")

    _require(isinstance(config.resist.pairs, str), f"[resist] pairs must be a string, got {config.resist.pairs!r}")
    parse_pairs(config.resist.pairs)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a TOML experiment document, filling defaults."""

    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"config is not valid TOML: {exc}") from exc
    return config_from_document(document)


def config_from_document(document: Mapping[str, Any]) -> ExperimentConfig:
    """Validate an already-decoded config document."""

    _reject_unknown(document, _TOP_LEVEL, "config")
    if "command" not in document:
        raise ParseError("config must name a command")
    sections = {name: _section(cls, document[name], name) for name, cls in _SECTIONS.items() if name in document}
    top = {k: v for k, v in document.items() if k not in _SECTIONS}
    try:
        config = ExperimentConfig(**top, **sections)
    except TypeError as exc:
        raise ParseError(f"config could not be read: {exc}") from exc
    _validate(config)
    return config
