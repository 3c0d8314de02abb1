"""Plain-text scenario files and named presets.

Files use INI syntax. The ``[scenario]`` section holds the physical setup;
positions are comma-separated metres, several points are separated by ``;``
and powers are given in dBm::

    [scenario]
    p_bs = 0, -60, 5
    p_ue = 3, 6, -1
    scatterers = -1, 3, 2
    tx_power_dbm = 29
    noise_variance_dbm = -115.2
    n_x = 24
    n_z = 24

An optional ``[experiment]`` section carries sweep settings (see
:mod:`risloc.harness`).
"""
from __future__ import annotations

import configparser
from pathlib import Path

import numpy as np

from .geometry import ScenarioConfig, dbm_to_watt, watt_to_dbm

_FLOATS = ("clock_offset", "carrier", "subcarrier_spacing", "reflection_loss", "spacing")
_INTS = ("n_subcarriers", "n_symbols", "n_x", "n_z", "seed")
_POINTS = ("p_bs", "p_ris", "p_ue")


def parse_points(text: str) -> np.ndarray:
    """``"x, y, z; x, y, z"`` to an (k, 3) array; empty text gives (0, 3)."""
    chunks = [c for c in text.split(";") if c.strip()]
    pts = [[float(v) for v in c.split(",")] for c in chunks]
    if any(len(p) != 3 for p in pts):
        raise ValueError(f"points need three coordinates: {text!r}")
    return np.array(pts, dtype=float).reshape(-1, 3)


def format_points(points) -> str:
    return "; ".join(", ".join(repr(float(v)) for v in p) for p in np.asarray(points).reshape(-1, 3))


def scenario_from_dict(values: dict) -> ScenarioConfig:
    """Build a scenario from string or numeric values; powers in dBm."""
    kw = {}
    for key, raw in values.items():
        key = key.strip().lower()
        if key in _POINTS:
            kw[key] = parse_points(str(raw))[0] if isinstance(raw, str) else np.asarray(raw, dtype=float)
        elif key == "scatterers":
            kw[key] = parse_points(raw) if isinstance(raw, str) else np.asarray(raw, dtype=float).reshape(-1, 3)
        elif key == "tx_power_dbm":
            kw["tx_power"] = dbm_to_watt(float(raw))
        elif key == "noise_variance_dbm":
            kw["noise_variance"] = dbm_to_watt(float(raw))
        elif key in _FLOATS:
            kw[key] = None if str(raw).strip().lower() in ("", "none") else float(raw)
        elif key in _INTS:
            kw[key] = int(raw)
        else:
            raise KeyError(f"unknown scenario key {key!r}")
    return ScenarioConfig(**kw)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    out = {
        "p_bs": format_points(cfg.p_bs),
        "p_ris": format_points(cfg.p_ris),
        "p_ue": format_points(cfg.p_ue),
        "scatterers": format_points(cfg.scatterers),
        "tx_power_dbm": repr(float(watt_to_dbm(cfg.tx_power))),
        "noise_variance_dbm": repr(float(watt_to_dbm(cfg.noise_variance))),
    }
    for key in _FLOATS:
        val = getattr(cfg, key)
        out[key] = "none" if val is None else repr(float(val))
    for key in _INTS:
        out[key] = str(getattr(cfg, key))
    return out


def read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    return parser


def load_config(path) -> ScenarioConfig:
    parser = read_config(path)
    section = parser["scenario"] if parser.has_section("scenario") else {}
    return scenario_from_dict(dict(section))


def save_config(cfg: ScenarioConfig, path, experiment: dict | None = None) -> None:
    parser = configparser.ConfigParser()
    parser["scenario"] = scenario_to_dict(cfg)
    if experiment:
        parser["experiment"] = {k: str(v) for k, v in experiment.items()}
    with open(path, "w") as fh:
        parser.write(fh)


PRESETS = {
    # full-scale setup: 48 x 48 surface, 1000 trials per point
    "paper": {"scenario": {}, "trials": 1000},
    # desk scale: 24 x 24 surface, 100 trials per point
    "desk": {"scenario": {"n_x": 24, "n_z": 24}, "trials": 100},
}


def preset(name: str) -> tuple[ScenarioConfig, int]:
    """Scenario and default trial count of a named preset."""
    try:
        entry = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return ScenarioConfig(**entry["scenario"]), entry["trials"]


def resolve_scenario(source: str | Path | None) -> tuple[ScenarioConfig, int | None]:
    """A preset name or a config file path; ``None`` means the desk preset."""
    if source is None:
        return preset("desk")
    if str(source) in PRESETS:
        return preset(str(source))
    return load_config(source), None
