"""Plain ``key = value`` configuration with layered precedence.

Keys mirror :class:`~tmsq.model.SqueezerParams` plus the acquisition
settings ``fs``, ``n`` and ``reference``.  ``squeezing_db`` may replace
``r0``: it sets the squeeze parameter that yields that low-frequency level
with the configured (equal) efficiencies.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources

from .model import SqueezerParams, r0_for_squeezing_db

ENV_VAR = "TMSQ_CONFIG"
PRESET = "paper-like"

_FLOATS = {"r0", "f_b", "eta_p", "eta_c", "t_group", "s_elec", "f_hp", "adc_fullscale",
           "phase_jitter", "fs", "squeezing_db"}
_INTS = {"adc_bits", "profile_order", "n"}
_STRINGS = {"lock_quadrature", "reference"}
KEYS = _FLOATS | _INTS | _STRINGS


class ConfigError(ValueError):
    pass


def parse(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        out[key] = _coerce(key, value, f"{source}:{lineno}")
    return out


def _coerce(key, value, where):
    if key not in KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        if key in _FLOATS:
            return float(value)
        if key in _INTS:
            return int(float(value)) if float(value).is_integer() else int(value)
    except ValueError:
        raise ConfigError(f"{where}: {key} expects a number, got {value!r}") from None
    return value


def parse_assignments(items) -> dict:
    """Parse ``key=value`` strings given on the command line."""
    return parse("\n".join(items), "--set")


def preset_text(name: str = PRESET) -> str:
    return resources.files("tmsq").joinpath("presets", f"{name}.cfg").read_text()


@dataclass(frozen=True)
class Config:
    params: SqueezerParams
    fs: float
    n: int
    reference: str
    values: dict

    def echo(self) -> dict:
        """Effective settings as strings, for output metadata."""
        return {f"config.{k}": repr(v) if isinstance(v, float) else str(v)
                for k, v in sorted(self.values.items())}


def build(values: dict) -> Config:
    values = dict(values)
    kw = {k: v for k, v in values.items()
          if k in SqueezerParams.__dataclass_fields__}
    if "squeezing_db" in values:
        if "r0" in values:
            raise ConfigError("give either r0 or squeezing_db, not both")
        eta_p, eta_c = kw.get("eta_p", 1.0), kw.get("eta_c", 1.0)
        if eta_p != eta_c:
            raise ConfigError("squeezing_db needs eta_p == eta_c; set r0 instead")
        kw["r0"] = r0_for_squeezing_db(values["squeezing_db"], eta_p)
    params = SqueezerParams(**kw)
    values["r0"] = params.r0
    return Config(params, float(values.get("fs", 50e6)), int(values.get("n", 1 << 23)),
                  str(values.get("reference", "independent")), values)


def layered(*layers: dict) -> Config:
    """Merge ``key -> value`` layers left to right and build a Config.

    A later ``r0`` discards an earlier ``squeezing_db`` and vice versa.
    """
    values = {}
    for layer in layers:
        if "r0" in layer:
            values.pop("squeezing_db", None)
        elif "squeezing_db" in layer:
            values.pop("r0", None)
        values.update(layer)
    return build(values)


def preset_values() -> dict:
    return parse(preset_text(), f"preset:{PRESET}")


def load(path: str | None = None, overrides: dict | None = None) -> Config:
    """Preset < config file (``path`` or ``$TMSQ_CONFIG``) < ``overrides``."""
    path = path or os.environ.get(ENV_VAR)
    file_values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            file_values = parse(fh.read(), str(path))
    return layered(preset_values(), file_values, overrides or {})
