"""Run configuration: Table I defaults < config file < command-line overrides.

The file is line-oriented ``key = value`` with one section per module::

    [models]
    a0 = 1.46       # m/s^2
    v0 = 100        # km/h
    [dynamics]
    T' = 1.0        # s

Speeds (v0, v_max) are given in km/h and converted to m/s here; every other
value is SI. Unknown keys, duplicates and invariant violations are errors.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from carfollow.dynamics import LeadProfile, StepConfig
from carfollow.metrics import StabilizationCriterion
from carfollow.models import (
    KMH,
    CarFollowingModel,
    ModelKind,
    ModelParams,
    ParameterError,
    RiskParams,
    VariantParams,
)
from carfollow.scenarios import DEFAULT_BRAKE_SPEED, DEFAULT_T_MAX, ScenarioConfig


class ConfigError(Exception):
    """Malformed or invalid configuration; the CLI exits with status 2."""


# section -> key -> (type, default, unit)
SCHEMA: dict[str, dict[str, tuple[type, object, str]]] = {
    "models": {
        "a0": (float, 1.46, "m/s^2"),
        "b0": (float, 2.0, "m/s^2"),
        "v0": (float, 100.0, "km/h"),
        "delta": (float, 4.0, "-"),
        "T": (float, 1.6, "s"),
        "s0": (float, 2.0, "m"),
        "TTC0": (float, 2.7, "s"),
        "r": (float, 0.6, "-"),
        "smoothing": (float, 0.1, "-"),
        "c": (float, 0.4, "-"),
    },
    "dynamics": {
        "dt": (float, 0.1, "s"),
        "t_max": (float, None, "s"),
        "T'": (float, 1.0, "s"),
        "v_max": (float, 95.0, "km/h"),
        "length": (float, 4.5, "m"),
        "profile": (str, f"hold:5,ramp:-6:{DEFAULT_BRAKE_SPEED}", "s, m/s^2, m/s"),
    },
    "scenarios": {
        "seed": (int, 0, "-"),
        "trials": (int, None, "-"),
        "t_insert": (float, 10.0, "s"),
        "workers": (int, 1, "-"),
    },
    "metrics": {
        "accel_tol": (float, 0.005, "m/s^2"),
        "speed_tol": (float, 0.05, "m/s"),
        "hold_window": (float, 30.0, "s"),
        "iso_threshold": (float, 3.5, "m/s^2"),
        "response_threshold": (float, 1e-4, "m/s^2"),
        "stall_fraction": (float, 0.1, "-"),
    },
}


def default_values() -> dict[str, dict[str, object]]:
    return {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}


def _convert(section: str, key: str, raw: str):
    kind = SCHEMA[section][key][0]
    raw = raw.strip()
    if raw == "" and SCHEMA[section][key][1] is None:
        return None
    try:
        return kind(raw)
    except ValueError as exc:
        raise ValueError(f"{section}.{key} expects {kind.__name__}, got {raw!r}") from exc


def _check(values: dict) -> None:
    """Build every parameter object once so invariant violations surface early."""
    RunConfig(values=values).model(ModelKind.SEIDM)
    RunConfig(values=values).criterion()
    m = values["models"]
    if m["r"] < 0:
        raise ParameterError(f"risk exponent r must be >= 0 (got {m['r']})")
    d = values["dynamics"]
    StepConfig(dt=d["dt"], t_max=d["t_max"] or 300.0, reaction=d["T'"], v_max=d["v_max"] * KMH)
    LeadProfile.parse(d["profile"]).breakpoints(d["v_max"] * KMH)
    if d["length"] <= 0:
        raise ParameterError(f"vehicle length must be > 0 (got {d['length']})")
    s = values["scenarios"]
    if s["trials"] is not None and s["trials"] < 1:
        raise ParameterError(f"trials must be >= 1 (got {s['trials']})")
    if s["workers"] < 1:
        raise ParameterError(f"workers must be >= 1 (got {s['workers']})")


def _line_of(lines: list[str], section: str, key: str) -> int | None:
    current = None
    for number, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
        elif current == section and "=" in stripped and stripped.split("=", 1)[0].strip() == key:
            return number
    return None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, object]]:
    """Parse config text into a values dict layered over the defaults."""
    parser = configparser.ConfigParser(strict=True, interpolation=None,
                                       inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                       delimiters=("=",), empty_lines_in_values=False)
    parser.optionxform = str  # keys are case-sensitive (T vs t)
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate section [{exc.section}]") from exc
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: key outside of a [section]") from exc
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{source}:{lineno}: cannot parse {line.strip()!r}") from exc

    lines = text.splitlines()
    values = default_values()
    for section in parser.sections():
        if section not in SCHEMA:
            line = next((i for i, ln in enumerate(lines, 1) if ln.strip().startswith(f"[{section}")), "?")
            raise ConfigError(f"{source}:{line}: unknown section [{section}] "
                              f"(known: {', '.join(SCHEMA)})")
        for key, raw in parser.items(section):
            where = f"{source}:{_line_of(lines, section, key) or '?'}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}] "
                                  f"(known: {', '.join(SCHEMA[section])})")
            try:
                values[section][key] = _convert(section, key, raw)
                _check(values)
            except (ValueError, ParameterError) as exc:
                raise ConfigError(f"{where}: {section}.{key}: {exc}") from exc
    return values


def parse_config(path: str | Path) -> dict[str, dict[str, object]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config_text(text, source=str(path))


def apply_override(values: dict, dotted: str, raw: str) -> None:
    """Set ``section.key`` from a command-line string, validating as the file parser does."""
    section, _, key = dotted.partition(".")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown override {dotted!r}; use section.key, e.g. models.T")
    try:
        values[section][key] = _convert(section, key, raw)
        _check(values)
    except (ValueError, ParameterError) as exc:
        raise ConfigError(f"override {dotted}: {exc}") from exc


def render_defaults() -> str:
    """A commented config file holding every default."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, (_, default, unit) in keys.items():
            shown = "" if default is None else default
            out.append(f"{key} = {shown}    # {unit}")
        out.append("")
    return "\n".join(out)


@dataclass
class RunConfig:
    subcommand: str = ""
    config_path: str | None = None
    out_dir: str = "results"
    values: dict = field(default_factory=default_values)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def model_params(self) -> ModelParams:
        m = self.values["models"]
        return ModelParams(a0=m["a0"], b0=m["b0"], v0=m["v0"] * KMH, delta=m["delta"], T=m["T"], s0=m["s0"])

    def model(self, kind: ModelKind, r: float | None = None) -> CarFollowingModel:
        m = self.values["models"]
        d = self.values["dynamics"]
        risk = RiskParams(ttc0=m["TTC0"], r=m["r"] if r is None else r, smoothing=m["smoothing"])
        variant = VariantParams(derbel_c=m["c"], reaction=d["T'"], v_max=d["v_max"] * KMH)
        return CarFollowingModel(kind, self.model_params(), risk, variant)

    def step(self, scenario: str) -> StepConfig:
        d = self.values["dynamics"]
        t_max = d["t_max"] if d["t_max"] is not None else DEFAULT_T_MAX[scenario]
        return StepConfig(dt=d["dt"], t_max=t_max, reaction=d["T'"], v_max=d["v_max"] * KMH,
                          seed=self.values["scenarios"]["seed"])

    def criterion(self) -> StabilizationCriterion:
        m = self.values["metrics"]
        return StabilizationCriterion(m["accel_tol"], m["speed_tol"], m["hold_window"])

    def profile(self) -> LeadProfile:
        return LeadProfile.parse(self.values["dynamics"]["profile"])

    def scenario(self, kind: str, model: CarFollowingModel, **overrides) -> ScenarioConfig:
        s = self.values["scenarios"]
        cfg = ScenarioConfig(
            kind=kind,
            model=model,
            step=self.step(kind),
            trials=s["trials"],
            seed=s["seed"],
            profile=self.profile(),
            t_insert=s["t_insert"],
            criterion=self.criterion(),
            response_threshold=self.values["metrics"]["response_threshold"],
            vehicle_length=self.values["dynamics"]["length"],
        )
        return replace(cfg, **overrides)
