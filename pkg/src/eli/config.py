"""Flat dotted-key config files and override strings.

The on-disk format is plain text, one `key = value` per line, `#` comments.
Keys are the dotted paths that `ExperimentConfig.flat()` emits, for example
`ebm.langevin.steps` or `align.learning_rate`. Values are coerced by the type
of the built-in default they replace. Integer-list fields (hidden layer
sizes) are written dash-separated ("64-64"; empty string or "none" for no
hidden layers), and optional floats accept "none".
"""
from __future__ import annotations

from pathlib import Path

from .align import AlignConfig
from .continuum import ExperimentConfig, PhaseConfig, SyntheticConfig
from .ebm import EbmTrainConfig, LangevinConfig


class ConfigError(ValueError):
    """Unparseable file, unknown key, or value of the wrong shape."""


_SECTIONS = {
    "base": PhaseConfig,
    "finetune": PhaseConfig,
    "ebm": EbmTrainConfig,
    "ebm.langevin": LangevinConfig,
    "align": AlignConfig,
    "synthetic": SyntheticConfig,
}

_ROOT_FIELDS = ("dataset", "data_root", "seed", "latent_dim",
                "backbone_hidden", "snapshot_rows")

_INT_LIST_FIELDS = {"backbone_hidden", "ebm.hidden_dims"}
_OPTIONAL_FLOAT_FIELDS = {"ebm.langevin.grad_clip"}


def _parse_int_list(raw: str, key: str) -> tuple[int, ...]:
    body = raw.strip()
    if body.lower() in ("", "none"):
        return ()
    try:
        return tuple(int(part) for part in body.split("-"))
    except ValueError:
        raise ConfigError(
            f"{key}: expected dash-separated integers like '64-64', got {raw!r}"
        ) from None


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _coerce(key: str, raw: str, default) -> object:
    if key in _INT_LIST_FIELDS:
        return _parse_int_list(raw, key)
    if key in _OPTIONAL_FLOAT_FIELDS:
        if raw.strip().lower() == "none":
            return None
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number or 'none', got {raw!r}") from None
    if isinstance(default, bool):
        return _parse_bool(raw, key)
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw.strip()


def _default_map() -> dict:
    """Dotted key -> built-in default value, from the dataclass tree."""
    out = dict(ExperimentConfig().flat())
    return out


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Key -> raw string value. Raises ConfigError on malformed lines."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = body.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        values[key] = raw.strip()
    return values


def parse_overrides(pairs) -> dict:
    """--set style "key=value" strings to a key -> raw value dict."""
    values: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"override has an empty key: {pair!r}")
        values[key] = raw.strip()
    return values


def build_config(raw_values: dict) -> ExperimentConfig:
    """Typed ExperimentConfig from dotted-key raw strings over the defaults."""
    defaults = _default_map()
    unknown = sorted(set(raw_values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")

    typed: dict[str, object] = {}
    for key, raw in raw_values.items():
        default = defaults[key]
        if isinstance(default, list):
            typed[key] = _parse_int_list(raw, key)
        else:
            typed[key] = _coerce(key, raw, default)

    def section_kwargs(prefix: str, cls) -> dict:
        own = {}
        for f_name in cls.__dataclass_fields__:
            dotted = f"{prefix}.{f_name}"
            if dotted in typed:
                own[f_name] = typed[dotted]
        return own

    try:
        langevin = LangevinConfig(**section_kwargs("ebm.langevin", LangevinConfig))
        ebm_kwargs = section_kwargs("ebm", EbmTrainConfig)
        ebm = EbmTrainConfig(**ebm_kwargs, langevin=langevin)
        root = {name: typed[name] for name in _ROOT_FIELDS if name in typed}
        return ExperimentConfig(
            **root,
            base=PhaseConfig(**section_kwargs("base", PhaseConfig)),
            finetune=PhaseConfig(**section_kwargs("finetune", PhaseConfig)),
            ebm=ebm,
            align=AlignConfig(**section_kwargs("align", AlignConfig)),
            synthetic=SyntheticConfig(**section_kwargs("synthetic", SyntheticConfig)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=None) -> ExperimentConfig:
    """Read a config file, apply overrides on top, return the typed config."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    values = parse_config_text(p.read_text(), source=str(p))
    if overrides:
        values.update(overrides)
    return build_config(values)
