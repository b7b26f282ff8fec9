"""Run configuration: defaults, config-file parsing, flag precedence.

Config files are flat key = value pairs grouped into INI sections (the
section names are ignored; keys must be globally unique). Precedence is
command-line flags > config file > defaults.
"""

from __future__ import annotations

import configparser


class UsageError(ValueError):
    """Bad invocation or configuration; maps to exit code 2."""


DEFAULTS = {
    "layers": 3,
    "heads": 8,
    "embed_dim": 128,
    "gru_hidden": 512,
    "dropout": 0.2,
    "max_len": 128,
    "seed": 0,
    "scale_full_dim": False,
    "no_residual": False,
    "epochs": 30,
    "lr": 1e-4,
    "batch_size": 64,
    "min_count": 1,
    "strip_stopwords": False,
    "threshold": 0.5,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise UsageError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except ValueError:
        raise UsageError(
            f"config key {key}: expected {type(default).__name__}, got {raw!r}")


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise UsageError(f"config file not found: {path}")
    out = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r} in {path}")
            if key in out:
                raise UsageError(f"config key {key!r} appears twice in {path}")
            out[key] = _coerce(key, raw)
    return out


def resolve(args, keys) -> dict:
    """Merge the requested keys: flag value if given, else config-file
    value, else default."""
    from_file = {}
    if getattr(args, "config", None):
        from_file = read_config_file(args.config)
    merged = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in from_file:
            merged[key] = from_file[key]
        else:
            merged[key] = DEFAULTS[key]
    return merged
