"""
Run configuration: key=value sections parsed into validated pydantic models.

    [geometry]
    num_points = 256
    A = constant scale=1
    blocks = T1: cosine_exp amplitude=0.3; S2: constant scale=1

Missing tolerances, caps and the output directory are filled from LabSettings.
"""

import logging
import math
import os
import re
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from config.settings import LabSettings, get_settings
from services.errors import MissingFile, ParseError, RangeError, UnknownKey

logger = logging.getLogger(__name__)

MODES = ("lichnerowicz", "coupled", "k-sweep", "two-solutions", "tau-admissibility", "halfcont-demo", "geom-check")
PROFILE_FAMILIES = ("flat", "constant", "cosine_exp", "sine_exp", "cosine", "harmonic", "csv")
PROFILE_PARAMS = ("amplitude", "frequency", "phase", "scale", "path")
BLOCK_KIND = re.compile(r"^([TS])(\d+)$")


# -------------------------------------------------------------------------
# Profile specs
# -------------------------------------------------------------------------

def parse_profile_spec(text: str) -> Tuple[str, Dict[str, object]]:
    """
    Parse "family key=value ..." into (family, params).

    Raises:
        ValueError: unknown family or parameter, malformed token
    """
    tokens = text.split()
    if not tokens:
        raise ValueError("empty profile")
    family, params = tokens[0], {}
    if family not in PROFILE_FAMILIES:
        raise ValueError(f"unknown profile family '{family}'")
    for token in tokens[1:]:
        key, sep, value = token.partition("=")
        if not sep or key not in PROFILE_PARAMS:
            raise ValueError(f"bad profile parameter '{token}'")
        if key == "path":
            params[key] = value
        elif key == "frequency":
            params[key] = int(value)
        else:
            params[key] = float(value)
    if family == "csv" and "path" not in params:
        raise ValueError("csv profile needs path=")
    return family, params


def parse_blocks(text: str) -> List[Tuple[str, int, str]]:
    """Parse "T1: spec; S2: spec" into (kind, dim, profile spec) triples."""
    blocks = []
    for entry in filter(None, (e.strip() for e in text.split(";"))):
        kind, sep, spec = entry.partition(":")
        match = BLOCK_KIND.match(kind.strip())
        if not sep or not match:
            raise ValueError(f"bad block '{entry}' (expected T<m>: profile or S<m>: profile)")
        dim = int(match.group(2))
        if dim < 1 or (match.group(1) == "S" and dim < 2):
            raise ValueError(f"bad block dimension in '{entry}'")
        parse_profile_spec(spec)
        blocks.append((match.group(1), dim, spec.strip()))
    return blocks


def _float_list(value):
    if isinstance(value, str):
        return [float(v) for v in value.split(",") if v.strip()]
    return value


# -------------------------------------------------------------------------
# Sections
# -------------------------------------------------------------------------

class GeometrySection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: Optional[int] = Field(default=None, ge=3, le=16)
    num_points: int = Field(default=256, ge=16, le=16384)
    order: int = 2
    period: float = Field(default=2.0 * math.pi, gt=0)
    A: str = "constant"
    blocks: str = ""

    @field_validator("order")
    @classmethod
    def check_order(cls, value: int) -> int:
        if value not in (2, 4):
            raise ValueError("order must be 2 or 4")
        return value

    @field_validator("A")
    @classmethod
    def check_A(cls, value: str) -> str:
        parse_profile_spec(value)
        return value

    @field_validator("blocks")
    @classmethod
    def check_blocks(cls, value: str) -> str:
        parse_blocks(value)
        return value

    @property
    def block_list(self) -> List[Tuple[str, int, str]]:
        if self.blocks:
            return parse_blocks(self.blocks)
        return [("T", 1, "constant")] * ((self.n or 3) - 1)

    @property
    def dimension(self) -> int:
        return 1 + sum(dim for _, dim, _ in self.block_list)


class TauSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["constant", "exp_cos", "plateau", "csv"] = "constant"
    value: float = Field(default=1.0, gt=0)
    amplitude: float = 0.5
    frequency: int = Field(default=1, ge=1)
    levels: List[float] = Field(default_factory=list)
    starts: List[float] = Field(default_factory=list)
    width: float = Field(default=1.0, gt=0)
    path: Optional[str] = None

    @field_validator("levels", "starts", mode="before")
    @classmethod
    def split_list(cls, value):
        return _float_list(value)


class SigmaSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    s0: float = 0.0
    profiles: str = ""
    shear: List[float] = Field(default_factory=list)
    project: bool = False

    @field_validator("shear", mode="before")
    @classmethod
    def split_list(cls, value):
        return _float_list(value)

    @field_validator("profiles")
    @classmethod
    def check_profiles(cls, value: str) -> str:
        for spec in filter(None, (p.strip() for p in value.split(";"))):
            parse_profile_spec(spec)
        return value

    @property
    def profile_list(self) -> List[str]:
        return [p.strip() for p in self.profiles.split(";") if p.strip()]


class ExperimentSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal[MODES]
    a: float = Field(default=1.0, ge=1)
    t: float = Field(default=1.0, gt=0, le=1)
    k: float = Field(default=0.0, ge=0)
    k_max: float = Field(default=1000.0, gt=0)
    k_steps: int = Field(default=40, ge=2, le=100000)
    cutoff: float = Field(default=1e-6, gt=0, lt=1)
    c_level: float = Field(default=0.2, gt=0, lt=1)
    gallery: Literal["quadratic", "linear", "step", "schaefer"] = "quadratic"
    gallery_a: float = Field(default=2.0, gt=0)
    tol_lich: Optional[float] = Field(default=None, gt=0, lt=1)
    tol_coupled: Optional[float] = Field(default=None, gt=0, lt=1)
    tol_halfcont: Optional[float] = Field(default=None, gt=0, lt=1)
    kernel_tol: Optional[float] = Field(default=None, gt=0, lt=1)
    max_iter: Optional[int] = Field(default=None, ge=1)
    monotone_max_iter: Optional[int] = Field(default=None, ge=1)
    picard_max_iter: Optional[int] = Field(default=None, ge=1)
    damping: Optional[float] = Field(default=None, gt=0, le=1)
    seed: Optional[int] = Field(default=None, ge=0)
    threads: Optional[int] = Field(default=None, ge=0)

    def k_grid(self) -> List[float]:
        """Geometric grid from k (or 1e-2 when k = 0) up to k_max."""
        start = self.k if self.k > 0 else 1e-2
        ratio = (self.k_max / start) ** (1.0 / (self.k_steps - 1))
        return [self.k] + [start * ratio ** i for i in range(1 if self.k > 0 else 0, self.k_steps)]


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: Optional[str] = None
    csv: bool = True


class RunConfig(BaseModel):
    """A fully validated run configuration."""

    model_config = ConfigDict(extra="forbid")

    geometry: GeometrySection = Field(default_factory=GeometrySection)
    tau: TauSection = Field(default_factory=TauSection)
    sigma: SigmaSection = Field(default_factory=SigmaSection)
    experiment: ExperimentSection
    output: OutputSection = Field(default_factory=OutputSection)
    base_dir: str = "."

    def resolve_path(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def echo(self) -> List[str]:
        """Resolved key = value lines, section by section."""
        lines = []
        for section in SECTIONS:
            lines.append(f"[{section}]")
            for key, value in getattr(self, section).model_dump().items():
                if isinstance(value, list):
                    value = ", ".join(repr(v) for v in value)
                lines.append(f"{key} = {value}")
        return lines


SECTIONS = ("geometry", "tau", "sigma", "experiment", "output")


# -------------------------------------------------------------------------
# Parsing
# -------------------------------------------------------------------------

def _read_sections(text: str) -> Dict[str, Dict[str, str]]:
    raw: Dict[str, Dict[str, str]] = {}
    seen: Dict[Tuple[str, str], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header '{line}'", [number])
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise UnknownKey(section, "*")
            raw.setdefault(section, {})
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ParseError(f"expected 'key = value', got '{line}'", [number])
        if section is None:
            raise ParseError(f"key '{key}' outside any section", [number])
        if (section, key) in seen:
            raise ParseError(f"duplicate key [{section}] {key}", [seen[(section, key)], number])
        seen[(section, key)] = number
        raw[section][key] = value
    return raw


def _fill_defaults(config: RunConfig, settings: LabSettings) -> RunConfig:
    experiment = config.experiment
    updates = {
        name: getattr(settings, name)
        for name in ("tol_lich", "tol_coupled", "tol_halfcont", "kernel_tol", "max_iter",
                     "monotone_max_iter", "picard_max_iter", "damping", "threads")
        if getattr(experiment, name) is None
    }
    if experiment.seed is None:
        updates["seed"] = settings.random_seed
    output = config.output
    if output.directory is None:
        output = output.model_copy(update={"directory": settings.output_dir})
    return config.model_copy(update={"experiment": experiment.model_copy(update=updates), "output": output})


def _check_files(config: RunConfig) -> None:
    specs = [config.geometry.A] + [spec for _, _, spec in config.geometry.block_list] + config.sigma.profile_list
    paths = [parse_profile_spec(spec)[1].get("path") for spec in specs]
    if config.tau.kind == "csv":
        if not config.tau.path:
            raise RangeError("tau", "path", "csv tau needs a path")
        paths.append(config.tau.path)
    for path in filter(None, paths):
        if not os.path.exists(config.resolve_path(path)):
            raise MissingFile(config.resolve_path(path))


def parse_config(
    text: str,
    mode: Optional[str] = None,
    base_dir: str = ".",
    settings: Optional[LabSettings] = None,
) -> RunConfig:
    """
    Parse and validate a run configuration.

    Args:
        text: Config file contents
        mode: Subcommand; overrides [experiment] mode when given
        base_dir: Directory relative paths are resolved against
        settings: Defaults source (get_settings() when omitted)

    Raises:
        ParseError: malformed line or duplicate key
        UnknownKey: unknown section or key
        RangeError: value outside its documented range, or missing mode
        MissingFile: a referenced CSV does not exist
    """
    raw = _read_sections(text)
    if mode is not None:
        raw.setdefault("experiment", {})["mode"] = mode
    raw.setdefault("experiment", {})

    try:
        config = RunConfig.model_validate({**raw, "base_dir": base_dir})
    except ValidationError as e:
        error = e.errors()[0]
        loc = [str(part) for part in error["loc"]]
        section = loc[0] if loc else "config"
        key = loc[1] if len(loc) > 1 else ""
        if error["type"] == "extra_forbidden":
            raise UnknownKey(section, key)
        raise RangeError(section, key, error["msg"])

    if config.geometry.n is not None and config.geometry.blocks and config.geometry.n != config.geometry.dimension:
        raise RangeError("geometry", "n", f"blocks give n = {config.geometry.dimension}")
    _check_files(config)
    config = _fill_defaults(config, settings or get_settings())
    for line in config.echo():
        logger.info(f"config: {line}")
    return config


def load_config(path: str, mode: Optional[str] = None, settings: Optional[LabSettings] = None) -> RunConfig:
    """
    Raises:
        MissingFile: path does not exist
    """
    if not os.path.exists(path):
        raise MissingFile(path)
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_config(text, mode=mode, base_dir=os.path.dirname(os.path.abspath(path)), settings=settings)
