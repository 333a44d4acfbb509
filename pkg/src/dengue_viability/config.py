"""JSON run configuration with defaults for every field."""
from __future__ import annotations

import copy
import json

from .dynamics import REFERENCE_ESTIMATE, REFERENCE_INITIAL, aggregate
from .estimation import PARAM_NAMES, PARAM_LOWER, PARAM_UPPER
from .grid import ControlGrid, StateGrid, UncertaintySet
from .robust_dp import Horizon


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


_low = aggregate(REFERENCE_ESTIMATE)

DEFAULTS = {
    "model": {"gamma": 0.1, "substeps": 100},
    "grid": {"n_m": 70, "n_h": 70, "h_cap": 1e-5, "m_max": 1.0},
    "control": {"u_lo": 0.0333, "u_hi": 0.05, "n_u": 70},
    "uncertainty": {
        "sets": {
            "low": [_low.a_m, _low.a_m, _low.a_h, _low.a_h],
            "middle": [0.0, 5.0, 0.0, 25.0],
            "high": [0.0, 10.0, 0.0, 50.0],
        },
        "n_am": 70,
        "n_ah": 70,
        "mode": "corners",
        "default_set": "middle",
    },
    "horizon": {"t0": 0, "T": 60},
    "estimation": {
        "lower": PARAM_LOWER.tolist(),
        "upper": PARAM_UPPER.tolist(),
        "theta0": REFERENCE_INITIAL.as_vector().tolist(),
        "m0_ratio": 3.0,
        "population": 2_400_000,
        "infectious_days": 10,
        "xtol": 1e-10,
        "ftol": 1e-12,
        "max_iter": 500,
        "multistart": 8,
        "synthetic": {"theta": REFERENCE_ESTIMATE.as_vector().tolist(), "h0": 2e-4, "days": 60,
                      "noise": 0.0},
    },
    "simulation": {"n_scenarios": 1000, "scenario_mode": "extreme-switching", "keep_trajectories": 10},
    "io": {"output_dir": "out", "svg": True},
    "seed": 0,
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[key], dict) and key != "sets":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


class RunConfig:
    """Validated configuration; ``data`` holds the effective JSON document."""

    def __init__(self, data=None):
        self.data = _merge(DEFAULTS, data or {})
        self._validate()

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"<config>: cannot read {path}: {err}") from None
        if not isinstance(doc, dict):
            raise ConfigError("<config>: top level must be an object")
        return cls(doc)

    def to_dict(self):
        return copy.deepcopy(self.data)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data

    def _build(self, where, fn):
        try:
            return fn()
        except (TypeError, ValueError, KeyError) as err:
            raise ConfigError(f"{where}: {err}") from None

    def _validate(self):
        self.state_grid()
        self.control_grid()
        self.horizon()
        for name in self.set_names:
            self.uncertainty_set(name)
        d = self.data
        if d["uncertainty"]["mode"] not in ("full", "corners"):
            raise ConfigError("uncertainty.mode: expected 'full' or 'corners'")
        if d["uncertainty"]["default_set"] not in self.set_names:
            raise ConfigError("uncertainty.default_set: not among declared sets")
        if int(d["model"]["substeps"]) < 1:
            raise ConfigError("model.substeps: must be >= 1")
        if not float(d["model"]["gamma"]) >= 0:
            raise ConfigError("model.gamma: must be >= 0")
        est = d["estimation"]
        for key in ("lower", "upper", "theta0"):
            if len(est[key]) != len(PARAM_NAMES):
                raise ConfigError(f"estimation.{key}: expected {len(PARAM_NAMES)} values")
        for k, (lo, x, hi) in enumerate(zip(est["lower"], est["theta0"], est["upper"])):
            if not lo <= x <= hi:
                raise ConfigError(f"estimation.theta0[{k}]: {x} outside [{lo}, {hi}]")
        if not est["population"] > 0:
            raise ConfigError("estimation.population: must be positive")
        if int(est["infectious_days"]) < 1:
            raise ConfigError("estimation.infectious_days: must be >= 1")
        if d["simulation"]["scenario_mode"] not in ("uniform", "extreme-switching"):
            raise ConfigError("simulation.scenario_mode: expected 'uniform' or 'extreme-switching'")

    @property
    def set_names(self):
        return list(self.data["uncertainty"]["sets"])

    def state_grid(self):
        g = self.data["grid"]
        return self._build("grid", lambda: StateGrid(int(g["n_m"]), int(g["n_h"]), float(g["h_cap"]),
                                                     float(g["m_max"])))

    def control_grid(self):
        c = self.data["control"]
        return self._build("control", lambda: ControlGrid(int(c["n_u"]), float(c["u_lo"]),
                                                          float(c["u_hi"])))

    def horizon(self):
        h = self.data["horizon"]
        return self._build("horizon", lambda: Horizon(int(h["t0"]), int(h["T"])))

    def uncertainty_set(self, name):
        u = self.data["uncertainty"]
        if name not in u["sets"]:
            raise ConfigError(f"uncertainty.sets: unknown set {name!r}; available: "
                              + ", ".join(self.set_names))
        bounds = u["sets"][name]
        if len(bounds) != 4:
            raise ConfigError(f"uncertainty.sets.{name}: expected [a_m_lo, a_m_hi, a_h_lo, a_h_hi]")
        return self._build(f"uncertainty.sets.{name}",
                           lambda: UncertaintySet(*map(float, bounds), int(u["n_am"]), int(u["n_ah"])))

    @property
    def mode(self):
        return self.data["uncertainty"]["mode"]

    @property
    def gamma(self):
        return float(self.data["model"]["gamma"])

    @property
    def substeps(self):
        return int(self.data["model"]["substeps"])

    @property
    def seed(self):
        return int(self.data["seed"])
