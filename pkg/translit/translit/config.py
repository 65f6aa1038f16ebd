"""
Flat ``key=value`` configuration files.

A file sets fields of one or more configuration dataclasses. Keys may be
qualified by a section (``model.d_model=64``); a bare key is accepted when
exactly one section has a field of that name. Values are parsed with the
field's declared type. Command-line flags override the file, which overrides
the dataclass defaults.
"""
import dataclasses
import logging
import typing
from enum import Enum

from .errors import ConfigError

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_config_file(path):
    """
    Key/value pairs of a config file, in file order.

    Blank lines and everything after ``#`` are ignored. A key given twice is
    an error.
    """
    values = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ConfigError("Cannot read config file {}: {}".format(path, e))
    for line_no, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError("{} line {}: expected key=value, got {!r}.".format(path, line_no, line))
        if key in values:
            raise ConfigError("{} line {}: key '{}' is set twice.".format(path, line_no, key))
        values[key] = value.strip()
    return values


def parse_value(annotation, text):
    """
    Convert the text of a config value to ``annotation``.

    >>> parse_value(int, "64")
    64
    >>> parse_value(typing.Tuple[int, ...], "2, 5")
    (2, 5)
    >>> parse_value(typing.Optional[int], "none") is None
    True
    """
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        if text.strip().lower() in ("", "none", "null"):
            return None
        return parse_value(inner[0], text)
    if origin is tuple:
        items = [item.strip() for item in text.split(",") if item.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(parse_value(args[0], item) for item in items)
        if len(items) != len(args):
            raise ValueError("expected {} comma-separated values".format(len(args)))
        return tuple(parse_value(a, item) for a, item in zip(args, items))
    if annotation is bool:
        lowered = text.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError("not a boolean")
    if isinstance(annotation, type) and issubclass(annotation, Enum):
        return annotation(text.strip())
    if annotation in (int, float, str):
        return annotation(text.strip())
    raise ValueError("unsupported type {}".format(annotation))


def _fields(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _assign(sections, file_values):
    per_section = {name: {} for name in sections}
    for key, text in file_values.items():
        section, _, field_name = key.rpartition(".")
        if section:
            if section not in sections or field_name not in _fields(sections[section]):
                raise ConfigError("Unknown config key '{}'.".format(key))
            candidates = [section]
        else:
            candidates = [name for name, cls in sections.items() if field_name in _fields(cls)]
            if not candidates:
                raise ConfigError("Unknown config key '{}'.".format(key))
            if len(candidates) > 1:
                raise ConfigError("Config key '{}' is ambiguous; qualify it as one of {}.".format(
                    key, ", ".join("{}.{}".format(c, key) for c in candidates)))
        annotation = _fields(sections[candidates[0]])[field_name]
        try:
            per_section[candidates[0]][field_name] = parse_value(annotation, text)
        except ValueError as e:
            raise ConfigError("Config key '{}' has invalid value {!r}: {}.".format(key, text, e))
    return per_section


def resolve(sections, file_values=None, overrides=None):
    """
    Build and validate configuration objects.

    INPUTS
    =======
    sections: dictionary of section name to configuration dataclass.
    file_values (optional): key/value text from read_config_file.
    overrides (optional): {section: {field: value}} from command-line flags;
                          None values are ignored.

    RETURNS
    ========
    dictionary of section name to validated configuration instance.
    """
    per_section = _assign(sections, file_values or {})
    configs = {}
    for name, cls in sections.items():
        values = per_section[name]
        for field_name, value in (overrides or {}).get(name, {}).items():
            if value is not None:
                values[field_name] = value
        try:
            config = cls(**values)
        except TypeError as e:
            raise ConfigError("Section '{}' is incomplete: {}.".format(name, e))
        if hasattr(config, "validate"):
            config.validate()
        configs[name] = config
    return configs


def snapshot(config):
    """JSON-ready dictionary of every effective value of a configuration dataclass."""
    out = {}
    for key, value in dataclasses.asdict(config).items():
        if isinstance(value, Enum):
            value = value.value
        elif isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out
