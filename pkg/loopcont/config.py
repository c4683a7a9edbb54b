"""
Run configuration: INI-style sections read with configparser, values decoded
as JSON literals, then validated field by field and across fields.
"""

import configparser
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .errors import ConfigError
from .nonlin import F_KINDS, G_KINDS

logger = logging.getLogger(__name__)

EMIT_CHOICES = ("branches_csv", "diagram_json", "report_json", "plotdata", "plot_png")


@dataclass(frozen=True)
class Field:
    """Declared config value with its default and admissible range"""

    kind: type
    default: Any = None
    min_value: Optional[float] = None
    max_value: Optional[float] = None
    choices: Optional[Tuple[Any, ...]] = None
    required: bool = False
    nullable: bool = False


FIELDS: Dict[str, Dict[str, Field]] = {
    "domain": {
        "dim": Field(int, 1, min_value=1, max_value=2),
        "n": Field(int, 200, min_value=3, max_value=4000),
        "extent": Field(list, [[0.0, 1.0]]),
        "bc": Field(str, "dirichlet", choices=("dirichlet", "neumann")),
    },
    "weights": {
        "a_expr": Field(str, required=True),
        "b_expr": Field(str, required=True),
        "pos_ball": Field(object, None, nullable=True),
        "neg_ball": Field(object, None, nullable=True),
        "hb_gamma": Field(float, None, min_value=0.0, nullable=True),
        "hb_tube_width": Field(float, 0.05, min_value=0.0),
        "hb_beta_min": Field(float, None, min_value=0.0, nullable=True),
        "hb_beta_max": Field(float, None, min_value=0.0, nullable=True),
        "critical_shift": Field(bool, False),
    },
    "nonlinearity": {
        "f_family": Field(str, "pure_power", choices=F_KINDS),
        "q": Field(float, 0.5, min_value=0.0, max_value=1.0),
        "f_r": Field(float, 1.0, min_value=0.0),
        "g_family": Field(str, "pure_power", choices=G_KINDS),
        "p": Field(float, 2.0, min_value=1.0),
        "g_r": Field(float, 1.0, min_value=0.0),
        "g_k": Field(float, 4.0, min_value=1.0),
        "N": Field(int, None, min_value=1, nullable=True),
    },
    "continuation": {
        "eps_schedule": Field(list, [1e-1, 1e-2, 1e-3, 1e-4]),
        "ds0": Field(float, 1e-3, min_value=0.0),
        "ds_max": Field(float, 0.05, min_value=0.0),
        "max_steps": Field(int, 20000, min_value=1),
        "tol_res": Field(float, None, min_value=0.0, nullable=True),
        "hausdorff_tol": Field(float, 1e-3, min_value=0.0),
        "norm_cap": Field(float, None, min_value=0.0, nullable=True),
        "workers": Field(int, 1, min_value=1, max_value=64),
        "side": Field(str, "plus", choices=("plus", "minus")),
        "both_sides": Field(bool, False),
    },
    "analysis": {
        "Lambda": Field(float, None, min_value=0.0, nullable=True),
        "q_grid": Field(list, None, nullable=True),
        "C1": Field(float, None, min_value=0.0, nullable=True),
        "pos_tol": Field(float, 1e-8, min_value=0.0, max_value=1.0),
        "delta_factor": Field(float, 0.1, min_value=0.0, max_value=1.0),
    },
    "output": {
        "dir": Field(str, "out"),
        "emit": Field(list, ["branches_csv", "diagram_json", "report_json", "plotdata"]),
    },
    "run": {
        "seed": Field(int, 12345, min_value=0),
    },
}


@dataclass
class DomainConfig:
    dim: int = 1
    n: int = 200
    extent: list = field(default_factory=lambda: [[0.0, 1.0]])
    bc: str = "dirichlet"


@dataclass
class WeightsConfig:
    a_expr: str = ""
    b_expr: str = ""
    pos_ball: Any = None
    neg_ball: Any = None
    hb_gamma: Optional[float] = None
    hb_tube_width: float = 0.05
    hb_beta_min: Optional[float] = None
    hb_beta_max: Optional[float] = None
    critical_shift: bool = False


@dataclass
class NonlinearityConfig:
    f_family: str = "pure_power"
    q: float = 0.5
    f_r: float = 1.0
    g_family: str = "pure_power"
    p: float = 2.0
    g_r: float = 1.0
    g_k: float = 4.0
    N: Optional[int] = None


@dataclass
class ContinuationConfig:
    eps_schedule: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    ds0: float = 1e-3
    ds_max: float = 0.05
    max_steps: int = 20000
    tol_res: Optional[float] = None
    hausdorff_tol: float = 1e-3
    norm_cap: Optional[float] = None
    workers: int = 1
    side: str = "plus"
    both_sides: bool = False


@dataclass
class AnalysisConfig:
    Lambda: Optional[float] = None
    q_grid: Optional[list] = None
    C1: Optional[float] = None
    pos_tol: float = 1e-8
    delta_factor: float = 0.1


@dataclass
class OutputConfig:
    dir: str = "out"
    emit: list = field(default_factory=lambda: ["branches_csv", "diagram_json", "report_json", "plotdata"])


@dataclass
class RunSection:
    seed: int = 12345


@dataclass
class RunConfig:
    domain: DomainConfig
    weights: WeightsConfig
    nonlinearity: NonlinearityConfig
    continuation: ContinuationConfig = field(default_factory=ContinuationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    run: RunSection = field(default_factory=RunSection)
    source: Optional[str] = None

    @property
    def N(self) -> int:
        return self.nonlinearity.N if self.nonlinearity.N is not None else self.domain.dim

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out.pop("source")
        return out


SECTION_TYPES = {
    "domain": DomainConfig, "weights": WeightsConfig, "nonlinearity": NonlinearityConfig,
    "continuation": ContinuationConfig, "analysis": AnalysisConfig, "output": OutputConfig,
    "run": RunSection,
}


def decode_value(raw: str) -> Any:
    """JSON literal when possible, otherwise the stripped string"""
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        lowered = text.lower()
        if lowered in ("true", "false"):
            return lowered == "true"
        if lowered in ("none", "null"):
            return None
        return text


class RunConfigForm:
    """
    Validates raw section dictionaries. Per-field ``clean_<name>`` hooks run
    after the declared range checks; ``clean`` checks relations between fields.
    """

    def __init__(self, data: Dict[str, Dict[str, Any]], lines: Optional[Dict[Tuple[str, str], int]] = None):
        self.data = data
        self.lines = lines or {}
        self.cleaned_data: Dict[str, Dict[str, Any]] = {}

    def error(self, message: str, section: str, key: Optional[str] = None):
        line = self.lines.get((section, key)) if key else self.lines.get((section, None))
        where = f" (line {line})" if line else ""
        return ConfigError(f"{message}{where}", key=key, section=section, line=line)

    def is_valid(self) -> bool:
        self.full_clean()
        return True

    def full_clean(self) -> RunConfig:
        for section in self.data:
            if section not in FIELDS:
                raise self.error(f"unknown section [{section}]", section)
        for section, fields in FIELDS.items():
            values = self.data.get(section, {})
            for key in values:
                if key not in fields:
                    raise self.error(f"unknown key {key} in [{section}]", section, key)
            cleaned = {}
            for key, spec in fields.items():
                if key not in values:
                    if spec.required:
                        raise self.error(f"missing required key {key} in [{section}]", section, key)
                    cleaned[key] = spec.default
                    continue
                cleaned[key] = self._clean_field(section, key, spec, values[key])
            self.cleaned_data[section] = cleaned
        self.clean()
        return RunConfig(**{s: SECTION_TYPES[s](**v) for s, v in self.cleaned_data.items()})

    def _clean_field(self, section: str, key: str, spec: Field, value: Any) -> Any:
        if value is None:
            if spec.nullable:
                return None
            raise self.error(f"{key} in [{section}] may not be null", section, key)
        if spec.kind is str and isinstance(value, (int, float)) and not isinstance(value, bool):
            # expressions such as "1" decode as numbers
            value = repr(value)
        elif spec.kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = float(value)
        elif spec.kind is int and isinstance(value, float) and value.is_integer():
            value = int(value)
        elif spec.kind is bool and not isinstance(value, bool):
            raise self.error(f"{key} in [{section}] must be true or false, got {value!r}", section, key)
        if spec.kind is not object and not isinstance(value, spec.kind):
            raise self.error(f"{key} in [{section}] must be {spec.kind.__name__}, got {value!r}",
                             section, key)
        if spec.min_value is not None and value < spec.min_value:
            raise self.error(f"{key} in [{section}] must be >= {spec.min_value}, got {value}", section, key)
        if spec.max_value is not None and value > spec.max_value:
            raise self.error(f"{key} in [{section}] must be <= {spec.max_value}, got {value}", section, key)
        if spec.choices is not None and value not in spec.choices:
            raise self.error(f"{key} in [{section}] must be one of {', '.join(map(str, spec.choices))}, "
                             f"got {value!r}", section, key)
        hook = getattr(self, f"clean_{key}", None)
        return hook(section, value) if hook else value

    def clean_q(self, section, value):
        if not 0.0 < value < 1.0:
            raise self.error(f"q must lie strictly between 0 and 1, got {value}", section, "q")
        return value

    def clean_p(self, section, value):
        if value <= 1.0:
            raise self.error(f"p must exceed 1, got {value}", section, "p")
        return value

    def clean_eps_schedule(self, section, value):
        if not value or not all(isinstance(v, (int, float)) and v > 0 for v in value):
            raise self.error("eps_schedule must be a list of positive numbers", section, "eps_schedule")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise self.error(f"eps_schedule must be strictly decreasing, got {value}", section, "eps_schedule")
        return [float(v) for v in value]

    def clean_emit(self, section, value):
        unknown = [v for v in value if v not in EMIT_CHOICES]
        if unknown:
            raise self.error(f"unknown emit target(s) {', '.join(map(str, unknown))}; "
                             f"expected a subset of {', '.join(EMIT_CHOICES)}", section, "emit")
        return list(value)

    def clean_q_grid(self, section, value):
        if not all(isinstance(v, (int, float)) and 0 < v < 1 for v in value):
            raise self.error("q_grid entries must lie in (0, 1)", section, "q_grid")
        return sorted(float(v) for v in value)

    def clean_a_expr(self, section, value):
        if not value.strip():
            raise self.error("a_expr is empty", section, "a_expr")
        return value

    def clean_b_expr(self, section, value):
        if not value.strip():
            raise self.error("b_expr is empty", section, "b_expr")
        return value

    def clean(self):
        """Cross-field validation"""
        cont = self.cleaned_data["continuation"]
        if cont["ds0"] <= 0 or cont["ds_max"] < cont["ds0"]:
            raise self.error(f"need 0 < ds0 <= ds_max, got ds0={cont['ds0']} ds_max={cont['ds_max']}",
                             "continuation", "ds_max")
        if len(cont["eps_schedule"]) < 1:
            raise self.error("eps_schedule is empty", "continuation", "eps_schedule")

        domain = self.cleaned_data["domain"]
        extent = domain["extent"]
        if domain["dim"] == 1 and len(extent) == 2 and all(isinstance(v, (int, float)) for v in extent):
            domain["extent"] = [[float(extent[0]), float(extent[1])]]
        elif len(extent) != domain["dim"] or not all(isinstance(e, list) and len(e) == 2 for e in extent):
            raise self.error(f"extent must give [lo, hi] for each of {domain['dim']} axes", "domain", "extent")

        nonlin = self.cleaned_data["nonlinearity"]
        if nonlin["g_family"] == "kps_over_1ps" and nonlin["g_k"] <= 1:
            raise self.error("g_k must exceed 1 for kps_over_1ps", "nonlinearity", "g_k")
        return self.cleaned_data


def _line_numbers(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    lines: Dict[Tuple[str, Optional[str]], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([^\]]+)\]", stripped)
        if header:
            section = header.group(1).strip()
            lines.setdefault((section, None), number)
        elif section and "=" in stripped and not stripped.startswith(("#", ";")):
            key = stripped.split("=", 1)[0].strip()
            lines.setdefault((section, key), number)
    return lines


def parse_config_text(text: str, source: Optional[str] = None) -> RunConfig:
    parser = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"duplicate key {e.option} in [{e.section}] (line {e.lineno})",
                          key=e.option, section=e.section, line=e.lineno) from e
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}] (line {e.lineno})",
                          section=e.section, line=e.lineno) from e
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError(f"expected a [section] header (line {e.lineno})", line=e.lineno) from e
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigError(f"cannot parse config (line {line})", line=line) from e

    data = {section: {k: decode_value(v) for k, v in parser.items(section)}
            for section in parser.sections()}
    config = RunConfigForm(data, lines=_line_numbers(text)).full_clean()
    config.source = source
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a run configuration file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    config = parse_config_text(text, source=str(path))
    logger.info(f"Loaded config {path}")
    return config


def override(config: RunConfig, out: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Apply command-line overrides"""
    if out is not None:
        config.output.dir = out
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"seed must be >= 0, got {seed}", key="seed", section="run")
        config.run.seed = seed
    return config


def config_from_dict(data: Dict[str, Dict[str, Any]]) -> RunConfig:
    """Validate an in-memory configuration (bundled scenarios, tests)"""
    return RunConfigForm({s: dict(v) for s, v in data.items()}).full_clean()


def emitted(config: RunConfig) -> List[str]:
    return list(config.output.emit)
