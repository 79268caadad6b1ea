"""Line-oriented experiment configuration.

Format: one ``dotted.key = value`` assignment per line, ``#`` comments and
blank lines allowed.  Parsing validates against a fixed schema, collects
every error (not just the first) and produces a normalized echo whose
sha-256 (excluding output.* keys) identifies the experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_TARGET_KINDS = (
    "euclidean3", "sphere2", "sphere3", "clifford_torus", "catenoid_band",
    "ellipsoid",
)
_DIAGNOSTIC_NAMES = (
    "energy", "el_residual", "stress_energy", "bochner", "v_bochner",
    "second_variation", "confinement", "flow_bochner", "monotonicity",
    "eigenvalue",
)


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


def _fraction(x):
    return 0 < x <= 1


def _uint64(x):
    return 0 <= x < 2**64


def _choice(*options):
    return lambda x: x in options


def _comma_floats(text):
    return [float(p) for p in str(text).split(",") if p.strip() != ""]


def _comma_names(text):
    return [p.strip() for p in str(text).split(",") if p.strip() != ""]


# key -> (type tag, default, validator or None, description of constraint)
_SCHEMA: dict[str, tuple] = {
    "domain.kind": ("str", None, _choice("torus", "sphere", "patch"),
                    "one of torus|sphere|patch"),
    "domain.n": ("int", 32, lambda x: x >= 8, ">= 8"),
    "domain.subdiv": ("int", 3, lambda x: 1 <= x <= 8, "in [1, 8]"),
    "domain.Lx": ("float", 1.0, _positive, "> 0"),
    "domain.Ly": ("float", 1.0, _positive, "> 0"),
    "domain.scalar_curvature_override": ("float_or_none", None, None, ""),
    "target.kind": ("str", None, _choice(*_TARGET_KINDS),
                    "one of " + "|".join(_TARGET_KINDS)),
    "target.semi_axes": ("vector", [2.0, 1.0, 1.0],
                         lambda v: len(v) == 3 and min(v) > 0,
                         "three positive reals"),
    "fields.V.kind": ("str", "zero", _choice("zero", "linear", "quadratic"),
                      "one of zero|linear|quadratic"),
    "fields.V.a": ("vector", [0.0, 0.0, 0.0], None, ""),
    "fields.V.offset": ("float", 0.0, None, ""),
    "fields.V.y0": ("vector", [0.0, 0.0, 0.0], None, ""),
    "fields.V.c": ("float", 1.0, None, ""),
    "fields.B.kind": ("str", "none",
                      _choice("none", "zero", "radial", "constant", "poly"),
                      "one of none|zero|radial|constant|poly"),
    "fields.B.f": ("float", 1.0, None, ""),
    "fields.B.coeffs": ("str", "", None, ""),
    "fields.B.poly": ("str", "", None, ""),
    "fields.Omega.kind": ("str", "auto",
                          _choice("auto", "zero", "volume", "poly_volume", "radial4"),
                          "one of auto|zero|volume|poly_volume|radial4"),
    "fields.Omega.f": ("float", 1.0, None, ""),
    "fields.Omega.poly": ("str", "", None, ""),
    "fields.omega_exact": ("str", "auto", _choice("auto", "true", "false"),
                           "one of auto|true|false"),
    "initial_map.kind": ("str", "constant",
                         _choice("constant", "equator", "torus_wrap", "identity",
                                 "radial_sphere"),
                         "a builtin initial map kind"),
    "initial_map.value": ("vector", [1.0, 0.0, 0.0], None, ""),
    "initial_map.winding": ("int", 1, None, ""),
    "initial_map.radius": ("float", 1.0, _positive, "> 0"),
    "initial_map.orientation": ("int", 1, _choice(1, -1), "1 or -1"),
    "initial_map.perturb": ("str", "none", _choice("none", "smooth", "phase"),
                            "one of none|smooth|phase"),
    "initial_map.amplitude": ("float", 0.0, _non_negative, ">= 0"),
    "initial_map.seed": ("int", 0, _uint64, "a 64-bit unsigned integer"),
    "initial_map.volume_neutral": ("bool", False, None, ""),
    "flow.dt0": ("float", 1.0, _positive, "> 0"),
    "flow.dt_min": ("float", 1e-12, _positive, "> 0"),
    "flow.cfl_fraction": ("float", 0.2, _fraction, "in (0, 1]"),
    "flow.stop_residual": ("float", 1e-6, _positive, "> 0"),
    "flow.max_steps": ("int", 10000, _non_negative, ">= 0"),
    "flow.energy_backtrack": ("str", "auto", _choice("auto", "true", "false"),
                              "one of auto|true|false"),
    "flow.anchor": ("vector", [0.0, 0.0, 0.0], None, ""),
    "diagnostics.which": ("names", ["energy", "el_residual"],
                          lambda v: all(n in _DIAGNOSTIC_NAMES for n in v),
                          "comma list of " + ",".join(_DIAGNOSTIC_NAMES)),
    "diagnostics.cadence": ("int", 10, lambda x: x >= 1, ">= 1"),
    "diagnostics.second_variation.directions": ("int", 5, _positive, "> 0"),
    "diagnostics.monotonicity.pole": ("int", 0, _non_negative, ">= 0"),
    "diagnostics.monotonicity.sigma": ("float", 1.0, None, ""),
    "diagnostics.monotonicity.radii": ("vector", [0.5, 1.0],
                                       lambda v: len(v) >= 1, "at least one radius"),
    "output.directory": ("str", "out", None, ""),
    "output.checkpoint_every": ("int", 0, _non_negative, ">= 0"),
}

_REQUIRED = ("domain.kind", "target.kind")


class ConfigError(ValueError):
    """Carries the full list of configuration problems."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    # -- normalized form -------------------------------------------------

    def normalized(self) -> str:
        lines = []
        for key in sorted(self.values):
            lines.append(f"{key} = {_format_value(self.values[key])}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        physics = [
            f"{key} = {_format_value(self.values[key])}"
            for key in sorted(self.values)
            if not key.startswith("output.")
        ]
        return hashlib.sha256("\n".join(physics).encode()).hexdigest()

    def ambient_dim(self) -> int:
        return 4 if self.values["target.kind"] in ("sphere3", "clifford_torus") else 3


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, (list, tuple)):
        return ",".join(
            f"{v:.17g}" if isinstance(v, float) else str(v) for v in value
        )
    return str(value)


def _parse_value(key: str, raw: str, errors: list[str]):
    tag = _SCHEMA[key][0]
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "float_or_none":
            return None if raw.lower() in ("none", "") else float(raw)
        if tag == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError("expected true/false")
        if tag == "vector":
            return _comma_floats(raw)
        if tag == "names":
            return _comma_names(raw)
        return raw
    except ValueError as exc:
        errors.append(f"{key}: cannot parse {raw!r} ({exc})")
        return None


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate; raises ConfigError carrying all problems."""
    errors: list[str] = []
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
            continue
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        parsed = _parse_value(key, raw, errors)
        if parsed is not None or _SCHEMA[key][0] == "float_or_none":
            values[key] = parsed

    for key, value in (overrides or {}).items():
        if key not in _SCHEMA:
            errors.append(f"override: unknown key {key!r}")
        else:
            values[key] = value

    for key in _REQUIRED:
        if key not in values:
            errors.append(f"{key}: required key missing")

    resolved = {}
    for key, (tag, default, validator, constraint) in _SCHEMA.items():
        value = values.get(key, default)
        if key in values and validator is not None and value is not None:
            if not validator(value):
                errors.append(f"{key}: value {_format_value(value)} not {constraint}")
        resolved[key] = value

    if errors:
        raise ConfigError(errors)

    # cross-key checks
    cross: list[str] = []
    q = 4 if resolved["target.kind"] in ("sphere3", "clifford_torus") else 3
    if resolved["fields.B.kind"] in ("radial",) and q != 3:
        cross.append("fields.B.kind: radial two-form requires a 3-dimensional ambient space")
    if resolved["fields.Omega.kind"] in ("volume", "poly_volume") and q != 3:
        cross.append("fields.Omega.kind: volume forms require a 3-dimensional ambient space")
    if resolved["fields.Omega.kind"] == "radial4" and q != 4:
        cross.append("fields.Omega.kind: radial4 requires a 4-dimensional ambient space")
    if resolved["initial_map.kind"] == "torus_wrap" and q != 4:
        cross.append("initial_map.kind: torus_wrap requires a 4-dimensional ambient space")
    if resolved["domain.kind"] != "sphere" and resolved["initial_map.kind"] in (
        "identity", "radial_sphere",
    ):
        cross.append(
            f"initial_map.kind: {resolved['initial_map.kind']} requires a sphere domain"
        )
    if cross:
        raise ConfigError(cross)
    return ExperimentConfig(values=resolved)


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config file {path}: {exc}"])
    return parse_config_text(text, overrides)
