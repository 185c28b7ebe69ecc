"""Run configuration: a single JSON document validated with pydantic.

Every section rejects unknown keys. Validation failures are collected into a
:class:`ConfigError` whose lines name the offending key path and constraint,
e.g. ``physics.gamma: must be > 0``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import ResofluoError

SCENARIOS = ("map", "ple", "g2", "kmc-sweep", "fit-ple", "fit-g2", "fit-narrowing", "synth")


class ConfigError(ResofluoError, ValueError):
    """Configuration could not be parsed or validated."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PhysicsSection(_Section):
    """Two-level system. gamma and dephasing in 1/ns, rabi in rad/ns,
    detuning (laser minus transition) in GHz."""

    gamma: float = Field(1.5, gt=0)
    rabi: float = Field(0.47, ge=0)
    detuning: float = 0.0
    dephasing: float = Field(0.0, ge=0)


class MapSection(_Section):
    """Fluorescence-map geometry and broadening widths (GHz)."""

    center: float = 0.0
    half_span: float = Field(6.0, gt=0)
    count: int = Field(256, ge=3)
    laser_linewidth: float = Field(0.0, ge=0)
    detector_fwhm: float = Field(0.0, ge=0)
    inhomogeneous_fwhm: float = Field(0.0, ge=0)
    diagonal_lorentzian_fwhm: float = Field(0.0, ge=0)
    regime: Literal["total", "elastic", "inelastic", "point"] = "total"
    pgm: bool = True


class PleSection(_Section):
    """Laser sweep (GHz) for PLE spectra; the Gaussian width is map.inhomogeneous_fwhm."""

    half_span: float = Field(6.0, gt=0)
    count: int = Field(481, ge=5)


class G2Section(_Section):
    """Delay grid (ns) and signal fraction rho (g2(0) = 1 - rho**2)."""

    tau_max: float = Field(20.0, gt=0)
    count: int = Field(2001, ge=2)
    signal_fraction: float = Field(1.0, gt=0, le=1)


Power = Annotated[float, Field(ge=0)]


class KmcSection(_Section):
    """Carrier model rates (1/ns, per unit power where noted) and sweep grid."""

    gamma_rad: float = Field(1.5, ge=0)
    gen_ab: float = Field(1.0, ge=0)
    pump_res: float = Field(2.0, ge=0)
    relax: float = Field(10.0, ge=0)
    loss_res: float = Field(0.5, ge=0)
    rad_excited: float = Field(0.0, ge=0)
    spin_flip: float = Field(0.0, ge=0)
    asym_gen: float = Field(1.0, gt=0)
    loss_excited_only: bool = False
    p_hene: list[Power] = Field(
        default_factory=lambda: [0.0, 0.01, 0.0178, 0.0316, 0.0562, 0.1, 0.178, 0.316,
                                 0.562, 1.0, 1.78, 3.16, 5.62, 10.0],
        min_length=1,
    )
    p_res: list[Power] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0], min_length=1)
    t_max: float = Field(100.0, gt=0)
    trajectories: int = Field(1000, ge=1)
    initial_state: Literal["empty", "electron", "hole"] = "electron"


class FitSection(_Section):
    """Input data for the fit scenarios. CSV with columns x, y[, sigma]."""

    input: Optional[str] = None
    poisson: bool = False
    omega_r: float = Field(0.47, gt=0)
    gamma: float = Field(1.5, gt=0)


class SynthSection(_Section):
    """Noisy samples of a model curve for exercising the fit scenarios.

    ``params`` overrides the model's default parameters. For gaussian noise
    ``noise_level`` is a constant sigma relative to the curve maximum; for
    poisson noise the curve is scaled so its maximum is ``peak_counts``.
    ``count`` defaults to 161 (ple), 4001 (g2) or 41 (plateau) points.
    """

    model: Literal["ple", "g2", "plateau"] = "ple"
    noise: Literal["none", "gaussian", "poisson"] = "gaussian"
    noise_level: float = Field(0.02, ge=0)
    peak_counts: float = Field(1e4, gt=0)
    x_start: Optional[float] = None
    x_stop: Optional[float] = None
    count: Optional[int] = Field(None, ge=5)
    params: dict[str, float] = Field(default_factory=dict)


class Config(_Section):
    scenario: Literal["map", "ple", "g2", "kmc-sweep", "fit-ple", "fit-g2", "fit-narrowing",
                      "synth"]
    seed: int = Field(0, ge=0, lt=2**64)
    output: str = "out"
    physics: PhysicsSection = PhysicsSection()
    map: MapSection = MapSection()
    ple: PleSection = PleSection()
    g2: G2Section = G2Section()
    kmc: KmcSection = KmcSection()
    fit: FitSection = FitSection()
    synth: SynthSection = SynthSection()

    @model_validator(mode="after")
    def _scenario_requirements(self):
        if self.scenario.startswith("fit-") and not self.fit.input:
            raise ValueError("fit.input: required for scenario " + self.scenario)
        return self

    def to_json(self) -> str:
        """Effective configuration with all defaults filled in."""
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


_SECTIONS = {
    "physics": PhysicsSection, "map": MapSection, "ple": PleSection, "g2": G2Section,
    "kmc": KmcSection, "fit": FitSection, "synth": SynthSection,
}


def _describe(err: dict) -> str:
    loc = [str(p) for p in err["loc"]]
    key = ".".join(loc) or "config"
    kind, ctx = err["type"], err.get("ctx", {})
    if kind == "greater_than":
        return f"{key}: must be > {ctx['gt']:g}"
    if kind == "greater_than_equal":
        return f"{key}: must be >= {ctx['ge']:g}"
    if kind == "less_than":
        return f"{key}: must be < {ctx['lt']:g}"
    if kind == "less_than_equal":
        return f"{key}: must be <= {ctx['le']:g}"
    if kind == "missing":
        return f"{key}: required key missing"
    if kind == "extra_forbidden":
        model = Config if len(loc) == 1 else _SECTIONS.get(loc[0])
        valid = ", ".join(sorted(model.model_fields)) if model else "?"
        return f"{key}: unknown key (valid keys: {valid})"
    if kind == "literal_error":
        return f"{key}: must be one of {ctx.get('expected')}"
    if kind == "value_error":
        # raised by our own validators, which already name the key
        return str(ctx.get("error", err["msg"]))
    if kind.endswith("_type") or kind.endswith("_parsing"):
        return f"{key}: expected {kind.split('_')[0]}, got {err.get('input')!r}"
    return f"{key}: {err['msg']}"


def validate(doc: dict) -> Config:
    try:
        return Config.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError("\n".join(_describe(e) for e in exc.errors())) from None


def _set_dotted(doc: dict, dotted: str, value: Any):
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {p} is not a section")
    node[parts[-1]] = value


def parse_value(text: str):
    """Flag value: JSON if it parses (numbers, lists, booleans), else a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(path: str | Path | None = None, overrides: dict | None = None,
                 scenario: str | None = None) -> Config:
    """Load a JSON config file (optional), apply dotted-key overrides, validate."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be an object")
    if scenario is not None:
        if doc.get("scenario", scenario) != scenario:
            raise ConfigError(
                f"scenario: file says {doc['scenario']!r} but command is {scenario!r}"
            )
        doc["scenario"] = scenario
    for k, v in (overrides or {}).items():
        _set_dotted(doc, k, v)
    return validate(doc)
