"""
INI experiment files.

configparser reads the sections; a first pass over the raw text records the
line of every section header and key so validation errors can point at the
offending line.
"""

import configparser
import re
from pathlib import Path
from typing import Dict, Optional, Tuple

from pydantic import ValidationError

from stepsim.core.errors import ArtifactError, ConfigError
from stepsim.schemas.experiment import ExperimentConfig

_SECTION = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")

LineIndex = Dict[Tuple[str, Optional[str]], int]


def _line_index(text: str) -> LineIndex:
    index: LineIndex = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        match = _SECTION.match(line)
        if match:
            section = match.group(1).strip()
            index[(section, None)] = number
            continue
        match = _KEY.match(line)
        if match and section is not None and not line[0].isspace():
            index.setdefault((section, match.group(1).strip().lower()), number)
    return index


def _locate(index: LineIndex, loc: tuple) -> Tuple[Optional[int], str]:
    section = str(loc[0]) if loc else None
    key = str(loc[1]) if len(loc) > 1 and isinstance(loc[1], str) else None
    if key == "lambda_":
        key = "lambda"
    line = index.get((section, key)) or index.get((section, None))
    where = f"[{section}]" if section else ""
    if key:
        where += f" {key}"
    return line, where


def parse_config(text: str, path: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], path=path, line=line) from exc

    index = _line_index(text)
    raw = {name: dict(parser.items(name)) for name in parser.sections()}
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        error = exc.errors()[0]
        line, where = _locate(index, error["loc"])
        message = error["msg"]
        if error["type"] == "missing" and len(error["loc"]) == 1:
            message = "section is missing"
        raise ConfigError(f"{where}: {message}".strip(), path=path, line=line) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError("config file not found", path=str(path)) from exc
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        if value and isinstance(value[0], list):
            return "; ".join(_format(row) for row in value)
        return ", ".join(_format(item) for item in value)
    return str(value)


def dump_config(config: ExperimentConfig) -> str:
    """Serialize so that parse_config(dump_config(c)) == c."""
    lines = []
    for name in ExperimentConfig.model_fields:
        section = getattr(config, name)
        if section is None:
            continue
        values = section.model_dump(by_alias=True, exclude_none=True)
        if not values and name == "run":
            continue
        lines.append(f"[{name}]")
        for key, value in values.items():
            lines.append(f"{key} = {_format(value)}")
        lines.append("")
    return "\n".join(lines)
