"""Run configuration: TOML parsing, schema validation, and presets.

A run is described by six TOML sections -- ``[system]``, ``[bath]``,
``[truncation]``, ``[run]``, ``[thermo]``, ``[output]`` -- plus a top-level
``schema_version``.  All frequencies, rates, and couplings are quoted in
units of the solvation-mode frequency (``[bath].omega_b``, itself 1.0 by
convention) and times in its inverse.

Resolution order: package defaults, then the named preset (if any), then
the config file, then command-line overrides.  The merged document is
validated against a JSON schema -- unknown keys are rejected and *all*
violations are reported with their key paths, not just the first one.
The system block accepts either the two-state parameterization
(``omega_eg``, ``v``, ``theta_b``, ``lam``) or explicit matrices (``h``,
``q`` plus the three-entry coupling list ``alpha``).
"""

from __future__ import annotations

import copy
import re
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version-dependent import
    import tomli as tomllib

import jsonschema
import numpy as np

from .bath import (
    BathDecomposition,
    BrownianDrude,
    Drude,
    FPParams,
    decompose,
    ht_brownian_params,
)
from .deom import SystemModel, TwoStateSpec, build_two_state_model

SCHEMA_VERSION = 1

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_MATRIX = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "minItems": 1, "items": {"type": "number"}},
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "system", "bath", "truncation", "run",
                 "thermo", "output"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "omega_eg": {"type": "number"},
                "v": {"type": "number"},
                "theta_b": _POS,
                "lam": _NONNEG,
                "h": _MATRIX,
                "q": _MATRIX,
                "alpha": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 3,
                    "maxItems": 3,
                },
            },
        },
        "bath": {
            "type": "object",
            "additionalProperties": False,
            "required": ["beta"],
            "properties": {
                "beta": _POS,
                "model": {"enum": ["brownian_drude", "drude"]},
                "omega_b": _POS,
                "lam_tilde": _NONNEG,
                "gamma_tilde": _POS,
                "scheme": {"enum": ["matsubara", "pade", "ht_two_pole"]},
                "order": _NONNEG_INT,
                "zeta_b": _POS,
            },
        },
        "truncation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "l": _NONNEG_INT,
                "n_max": _NONNEG_INT,
                "l_secondary": _NONNEG_INT,
                "secondary_order": _NONNEG_INT,
                "filter_tol": _NONNEG,
                "filter_interval": _POS_INT,
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "engine": {"enum": ["deom", "bsm", "both"]},
                "dt": _POS,
                "t_end": _POS,
                "preset": {"type": "string"},
                "sample_every": _POS_INT,
                "omega_min": {"type": "number"},
                "omega_max": {"type": "number"},
                "omega_step": _POS,
                "window": _NONNEG,
                "wigner_times": {"type": "array", "minItems": 1,
                                 "items": _NONNEG},
                "wigner_grid_n": {"type": "integer", "minimum": 5},
                "tolerance": _POS,
            },
        },
        "thermo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "a": _NONNEG,
                "t_f": _POS,
                "tau_max": _POS,
                "n_tau": {"type": "integer", "minimum": 2},
                "dtau_imag": _POS,
                "direction": {"enum": ["forward", "backward", "both"]},
                "eq_t_relax": _POS,
                "eq_tol": _POS,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
                "formats": {
                    "type": "array",
                    "items": {"enum": ["csv", "json"]},
                    "uniqueItems": True,
                },
            },
        },
    },
}


def _strip_required(node):
    if isinstance(node, dict):
        return {k: _strip_required(v) for k, v in node.items()
                if k != "required"}
    if isinstance(node, list):
        return [_strip_required(v) for v in node]
    return node


# the file on its own may be partial (defaults and presets fill the rest),
# so requiredness is only enforced on the merged document
PARTIAL_SCHEMA = _strip_required(CONFIG_SCHEMA)

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "system": {"omega_eg": 1.0, "v": 1.0, "theta_b": 1.0, "lam": 0.0},
    "bath": {
        "model": "brownian_drude",
        "omega_b": 1.0,
        "lam_tilde": 5.0,
        "gamma_tilde": 15.0,
        "scheme": "pade",
        "order": 2,
    },
    "truncation": {
        "l": 5,
        "n_max": 8,
        "l_secondary": 30,
        "secondary_order": 1,
        "filter_tol": 1e-8,
        "filter_interval": 10,
    },
    "run": {
        "engine": "deom",
        "dt": 0.01,
        "t_end": 10.0,
        "preset": "",
        "sample_every": 1,
        "omega_min": 44.0,
        "omega_max": 58.0,
        "omega_step": 0.02,
        "window": 0.3,
        "wigner_times": [0.0, 2.0, 5.0, 10.0],
        "wigner_grid_n": 61,
        "tolerance": 5e-3,
    },
    "thermo": {
        "a": 0.2,
        "t_f": 10.0,
        "tau_max": 64.0,
        "n_tau": 256,
        "dtau_imag": 0.005,
        "direction": "forward",
        "eq_t_relax": 400.0,
        "eq_tol": 1e-6,
    },
    "output": {"directory": "quadheom-out", "formats": ["csv", "json"]},
}

# the three coupling regimes shared by the demo figures:
# linear only, quadratic only, and both
_THETA = 4.0 / 3.0
_REGIMES = {"L": (1.0, 0.25), "Q": (_THETA, 0.0), "LQ": (_THETA, 0.25)}


def _dynamics_preset(theta_b, lam, omega_eg=1.0, **run):
    base_run = {"engine": "both", "dt": 0.003, "t_end": 10.0,
                "sample_every": 10}
    base_run.update(run)
    return {
        "system": {"omega_eg": omega_eg, "v": 1.0, "theta_b": theta_b,
                   "lam": lam},
        "bath": {"beta": 1.0, "order": 6},
        "truncation": {"l": 7, "n_max": 8, "l_secondary": 30,
                       "secondary_order": 1, "filter_tol": 1e-8},
        "run": base_run,
    }


def _thermo_preset(theta_b, lam):
    return {
        "system": {"omega_eg": 1.0, "v": 1.0, "theta_b": theta_b,
                   "lam": lam},
        "bath": {"beta": 1.0, "order": 2},
        "truncation": {"l": 5, "filter_tol": 1e-8},
        "run": {"engine": "deom", "dt": 0.01, "t_end": 10.0},
        "thermo": {"a": 0.2, "t_f": 10.0, "tau_max": 64.0, "n_tau": 256,
                   "dtau_imag": 0.005},
    }


PRESETS = {
    # decoupled two-level system; population difference oscillates at
    # sqrt(omega_eg^2 + 4 v^2)
    "rabi": {
        "system": {"omega_eg": 1.0, "v": 1.0, "theta_b": 1.0, "lam": 0.0},
        "bath": {"beta": 1.0, "order": 0},
        "truncation": {"l": 1, "filter_tol": 0.0},
        "run": {"engine": "deom", "dt": 0.01, "t_end": 50.0,
                "sample_every": 1},
    },
    "fig1_a": _dynamics_preset(1.125, 0.1),
    "fig1_LQ": _dynamics_preset(_THETA, 0.25),
}
for _lbl, (_th, _lm) in _REGIMES.items():
    PRESETS[f"fig2_{_lbl}"] = _dynamics_preset(
        _th, _lm, omega_eg=50.0, dt=0.002, t_end=20.0, sample_every=2,
        omega_min=44.0, omega_max=58.0, omega_step=0.02, window=0.3)
    PRESETS[f"fig3_{_lbl}"] = _dynamics_preset(
        _th, _lm, engine="bsm", wigner_times=[0.0, 2.0, 5.0, 10.0],
        wigner_grid_n=61)
    PRESETS[f"fig4_{_lbl}"] = _thermo_preset(_th, _lm)
PRESETS["fig4"] = copy.deepcopy(PRESETS["fig4_LQ"])


class ConfigError(Exception):
    """Carries the full list of configuration violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("\n".join(self.violations))


def _merge(base: dict, update: dict) -> None:
    for key, value in update.items():
        if (isinstance(value, dict) and isinstance(base.get(key), dict)):
            _merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)


def _format_path(parts) -> str:
    parts = list(parts)
    if not parts:
        return "(top level)"
    if parts[0] == "schema_version":
        return "schema_version"
    out = f"[{parts[0]}]"
    for p in parts[1:]:
        out += f".{p}" if isinstance(p, str) else f"[{p}]"
    return out


def validate_config(cfg: dict, *, partial: bool = False) -> list[str]:
    """All schema violations of `cfg`, formatted with their key paths."""
    schema = PARTIAL_SCHEMA if partial else CONFIG_SCHEMA
    validator = jsonschema.Draft202012Validator(schema)
    msgs = []
    errors = sorted(validator.iter_errors(cfg),
                    key=lambda e: [str(p) for p in e.absolute_path])
    for err in errors:
        path = list(err.absolute_path)
        if err.validator == "required":
            m = re.match(r"'(.+?)' is a required property", err.message)
            name = m.group(1) if m else "?"
            msgs.append(f"{_format_path(path + [name])}: "
                        "missing required key")
        elif err.validator == "additionalProperties":
            known = set(err.schema.get("properties", {}))
            kind = "key" if path else "section"
            for extra in sorted(set(err.instance) - known):
                msgs.append(f"{_format_path(path + [extra])}: "
                            f"unknown {kind}")
        else:
            msgs.append(f"{_format_path(path)}: {err.message}")
    return msgs


def _semantic_violations(cfg: dict) -> list[str]:
    out = []
    system = cfg["system"]
    explicit = [k for k in ("h", "q", "alpha") if k in system]
    if explicit and len(explicit) != 3:
        out.append("[system]: h, q, and alpha must be given together")
    elif explicit:
        h = np.asarray(system["h"], dtype=float)
        q = np.asarray(system["q"], dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            out.append("[system].h: must be a square matrix")
        if q.shape != h.shape:
            out.append("[system].q: must match the shape of h")
    run = cfg["run"]
    if run["omega_max"] <= run["omega_min"]:
        out.append("[run].omega_max: must exceed omega_min")
    if cfg["thermo"]["n_tau"] % 2:
        out.append("[thermo].n_tau: must be even")
    if (run["engine"] in ("bsm", "both")
            and cfg["bath"]["model"] != "brownian_drude"):
        out.append("[bath].model: the bsm engine needs the "
                    "brownian_drude model (an explicit solvation mode)")
    return out


@dataclass
class RunConfig:
    """A validated, fully resolved run description."""

    data: dict

    @property
    def system(self) -> dict:
        return self.data["system"]

    @property
    def bath(self) -> dict:
        return self.data["bath"]

    @property
    def truncation(self) -> dict:
        return self.data["truncation"]

    @property
    def run(self) -> dict:
        return self.data["run"]

    @property
    def thermo(self) -> dict:
        return self.data["thermo"]

    @property
    def output(self) -> dict:
        return self.data["output"]

    def resolved(self) -> dict:
        """Deep copy of the merged document, for metadata artifacts."""
        return copy.deepcopy(self.data)

    # -- model builders ----------------------------------------------------

    def system_model(self) -> SystemModel:
        s, beta = self.system, self.bath["beta"]
        if "h" in s:
            a0, a1, a2 = s["alpha"]
            return SystemModel(np.asarray(s["h"], dtype=complex),
                               np.asarray(s["q"], dtype=complex),
                               a0, a1, a2, beta)
        spec = TwoStateSpec(s["omega_eg"], s["v"], s["lam"], s["theta_b"])
        return build_two_state_model(spec, beta,
                                     omega_b=self.bath["omega_b"])

    def bath_model(self):
        b = self.bath
        if b["model"] == "drude":
            return Drude(lam=b["lam_tilde"], gamma=b["gamma_tilde"])
        return BrownianDrude(b["omega_b"], b["lam_tilde"],
                             b["gamma_tilde"])

    def primary_decomposition(self) -> BathDecomposition:
        b = self.bath
        kwargs = {}
        if b["scheme"] == "ht_two_pole" and "zeta_b" in b:
            kwargs["zeta_b"] = b["zeta_b"]
        return decompose(self.bath_model(), b["beta"], b["scheme"],
                         b["order"], **kwargs)

    def secondary_decomposition(self) -> BathDecomposition:
        b = self.bath
        return decompose(Drude(lam=b["lam_tilde"], gamma=b["gamma_tilde"]),
                         b["beta"], "pade", self.truncation["secondary_order"])

    def fp_params(self) -> FPParams:
        b = self.bath
        zeta = b.get("zeta_b",
                     2.0 * b["lam_tilde"] * b["omega_b"] / b["gamma_tilde"])
        return ht_brownian_params(b["omega_b"], zeta, b["beta"])


def resolve_config(preset: str | None = None,
                   config_path: str | Path | None = None,
                   overrides: dict | None = None) -> RunConfig:
    """Merge defaults, preset, config file, and CLI overrides; validate.

    Raises ConfigError carrying every violation found.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                [f"unknown preset {preset!r}; available: "
                 f"{', '.join(sorted(PRESETS))}"])
        _merge(cfg, PRESETS[preset])
        cfg["run"]["preset"] = preset
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError([f"config file not found: {path}"])
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"TOML parse error in {path}: {exc}"]) from exc
        file_violations = validate_config(raw, partial=True)
        if file_violations:
            raise ConfigError(file_violations)
        _merge(cfg, raw)
    if overrides:
        _merge(cfg, overrides)
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    semantic = _semantic_violations(cfg)
    if semantic:
        raise ConfigError(semantic)
    return RunConfig(cfg)
