"""Experiment configuration: an INI file with one section per concern."""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .errors import ConfigError

OUTPUT_ENV = "TWOSTATE_OUTPUT_DIR"

# (section, key, attribute, kind); kinds: float, int, floats, ints, bool, str, order
SCHEMA = [
    ("domain", "dim", "dim", "int"),
    ("domain", "lo", "lo", "floats"),
    ("domain", "hi", "hi", "floats"),
    ("domain", "T", "T", "float"),
    ("grid", "resolution", "resolution", "ints"),
    ("time", "dt", "dt", "float"),
    ("baseline", "M", "M", "float"),
    ("baseline", "A0", "A0", "float"),
    ("baseline", "p0", "p0", "float"),
    ("baseline", "qplus0", "qplus0", "float"),
    ("baseline", "qminus0", "qminus0", "float"),
    ("baseline", "variation", "variation", "float"),
    ("baseline", "seed", "baseline_seed", "int"),
    ("weights", "x0", "x0", "floats"),
    ("weights", "r", "r", "float"),
    ("weights", "lambda", "lam", "float"),
    ("weights", "T", "weight_T", "float"),
    ("weights", "time_cells", "time_cells", "int"),
    ("weights", "s_grid", "s_grid", "floats"),
    ("weights", "family_size", "family_size", "int"),
    ("weights", "family_seed", "family_seed", "int"),
    ("probes", "alpha", "alpha", "float"),
    ("probes", "order", "order", "order"),
    ("study", "amplitudes", "amplitudes", "floats"),
    ("study", "seeds", "seeds", "ints"),
    ("reconstruct", "amplitude", "rec_amplitude", "float"),
    ("reconstruct", "seed", "rec_seed", "int"),
    ("reconstruct", "tolerance", "rec_tolerance", "float"),
    ("forward", "initial", "initial", "str"),
    ("forward", "manufactured", "manufactured", "bool"),
    ("forward", "export_every", "export_every", "int"),
    ("output", "directory", "output", "str"),
]

INITIAL_STATES = ("eigenmode", "probe1", "probe2")


@dataclass(frozen=True)
class ExperimentConfig:
    dim: int = 1
    lo: tuple = (0.0,)
    hi: tuple = (1.0,)
    T: float = 0.5
    resolution: tuple = (101,)
    dt: float = 0.0025
    M: float = 4.0
    A0: float = 0.5
    p0: float = 0.5
    qplus0: float = 1.0
    qminus0: float = -0.5
    variation: float = 0.3
    baseline_seed: int = 1
    x0: tuple = (-1.0,)
    r: float = 1.5
    lam: float = 1.0
    weight_T: float = 1.0
    time_cells: int = 201
    s_grid: tuple = (2.0, 4.0, 8.0, 16.0, 32.0)
    family_size: int = 20
    family_seed: int = 0
    alpha: float = 1.0
    order: Optional[int] = None
    amplitudes: tuple = (0.1, 0.2, 0.4)
    seeds: tuple = (0, 1, 2)
    rec_amplitude: float = 0.2
    rec_seed: int = 7
    rec_tolerance: float = 1e-3
    initial: str = "eigenmode"
    manufactured: bool = False
    export_every: int = 1
    output: str = "out"

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output)

    def to_ini(self) -> str:
        lines, current = [], None
        for section, key, attr, kind in SCHEMA:
            if section != current:
                if current is not None:
                    lines.append("")
                lines.append(f"[{section}]")
                current = section
            lines.append(f"{key} = {_render(getattr(self, attr), kind)}")
        return "\n".join(lines) + "\n"


def _render(value, kind: str) -> str:
    if kind == "float":
        return repr(float(value))
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "ints":
        return ", ".join(str(int(v)) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "order":
        return "auto" if value is None else str(int(value))
    return str(value)


def _parse(raw: str, kind: str):
    raw = raw.strip()
    if kind == "float":
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value
    if kind == "int":
        return int(raw)
    if kind == "floats":
        values = tuple(float(v) for v in raw.replace(",", " ").split())
        if not values or not all(math.isfinite(v) for v in values):
            raise ValueError("expected a list of finite numbers")
        return values
    if kind == "ints":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if kind == "bool":
        if raw.lower() in ("true", "yes", "1", "on"):
            return True
        if raw.lower() in ("false", "no", "0", "off"):
            return False
        raise ValueError("expected true or false")
    if kind == "order":
        return None if raw.lower() == "auto" else int(raw)
    return raw


def _line_index(text: str) -> dict:
    """Map (section, key) and section headers to 1-based line numbers."""
    index, section = {}, None
    for num, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            index[(section, None)] = num
        elif section is not None and ("=" in stripped or ":" in stripped):
            sep = min(i for i in (stripped.find("="), stripped.find(":")) if i >= 0)
            index[(section, stripped[:sep].strip().lower())] = num
    return index


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate; every error names the offending line."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = _line_index(text)

    def where(section, key=None) -> str:
        num = lines.get((section, key.lower() if key else None))
        return f"{source}:{num}" if num else source

    known = {}
    for section, key, attr, kind in SCHEMA:
        known.setdefault(section, {})[key.lower()] = (key, attr, kind)
    values = {}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{where(section)}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in known[section]:
                raise ConfigError(f"{where(section, key)}: unknown key '{key}' in [{section}]")
            name, attr, kind = known[section][key]
            try:
                values[attr] = _parse(raw, kind)
            except ValueError as exc:
                raise ConfigError(f"{where(section, key)}: [{section}] {name} = {raw!r}: {exc}") from None

    cfg = ExperimentConfig(**values)
    attr_loc = {attr: (section, key) for section, key, attr, _ in SCHEMA}

    def fail(attr: str, message: str):
        section, key = attr_loc[attr]
        raise ConfigError(f"{where(section, key)}: [{section}] {key}: {message}")

    if cfg.dim not in (1, 2):
        fail("dim", "must be 1 or 2")
    for attr in ("lo", "hi", "x0"):
        if len(getattr(cfg, attr)) != cfg.dim:
            fail(attr, f"needs {cfg.dim} value(s)")
    if any(a >= b for a, b in zip(cfg.lo, cfg.hi)):
        fail("hi", "each upper bound must exceed the lower bound")
    if not cfg.T > 0:
        fail("T", "must be positive")
    if len(cfg.resolution) not in (1, cfg.dim) or min(cfg.resolution) < 3:
        fail("resolution", f"give 1 or {cfg.dim} node counts, each at least 3")
    if not cfg.dt > 0:
        fail("dt", "must be positive")
    steps = round(cfg.T / cfg.dt)
    if steps < 2 or abs(steps * cfg.dt - cfg.T) > 1e-9 * cfg.T:
        fail("dt", f"must divide T={cfg.T!r} into at least 2 steps")
    if not cfg.M > 0:
        fail("M", "must be positive")
    if cfg.variation < 0:
        fail("variation", "must be nonnegative")
    if all(lo <= x <= hi for x, lo, hi in zip(cfg.x0, cfg.lo, cfg.hi)):
        fail("x0", "must lie outside the closed domain")
    if not cfg.r > 1:
        fail("r", "must exceed 1")
    if not cfg.lam > 0:
        fail("lam", "must be positive")
    if not cfg.weight_T > 0:
        fail("weight_T", "must be positive")
    if cfg.time_cells < 3 or cfg.time_cells % 2 == 0:
        fail("time_cells", "must be an odd number of at least 3")
    if not cfg.s_grid or any(s <= 0 for s in cfg.s_grid):
        fail("s_grid", "values must be positive")
    if cfg.family_size < 1:
        fail("family_size", "the scan needs at least one test field")
    if not cfg.alpha > 0:
        fail("alpha", "must be positive")
    if cfg.order is not None and cfg.order < 0:
        fail("order", "must be nonnegative or auto")
    if any(a < 0 for a in cfg.amplitudes) or list(cfg.amplitudes) != sorted(cfg.amplitudes):
        fail("amplitudes", "must be nonnegative and sorted")
    if any(a >= cfg.M for a in cfg.amplitudes):
        fail("amplitudes", "must stay below M")
    if not cfg.seeds:
        fail("seeds", "need at least one seed")
    if not 0 <= cfg.rec_amplitude < cfg.M:
        fail("rec_amplitude", "must lie in [0, M)")
    if not cfg.rec_tolerance > 0:
        fail("rec_tolerance", "must be positive")
    if cfg.initial not in INITIAL_STATES:
        fail("initial", f"must be one of {', '.join(INITIAL_STATES)}")
    if cfg.export_every < 1:
        fail("export_every", "must be at least 1")
    if not cfg.output:
        fail("output", "must not be empty")
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))


def replace(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(cfg, **changes)
