"""Scenario files: INI-style sections, validation with line numbers, presets and round-tripping."""

from __future__ import annotations

import configparser
import difflib
import io
import re
from dataclasses import dataclass, field, fields, replace

from .datasets import load_dataset
from .devices import STATCOM_CONTROLS, TCSC_STRATEGIES
from .network import Network
from .simulator import (
    Disturbance,
    SimulationCase,
    StatcomSettings,
    TcscSettings,
)

EXPECT_LABELS = ("sink", "source", "neutral", "path_independent", "path_dependent")
PLL_MODES = ("instant", "first_order")


class ConfigError(ValueError):
    """All problems found in a scenario file."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid scenario:\n  " + "\n  ".join(errors))
        self.errors = errors


@dataclass
class AnalysisSettings:
    settle: float = 1.0
    t_start: float | None = None  # None: disturbance end + settle
    t_end: float | None = None  # None: end of record
    reference: str = "L9-10@10"


@dataclass
class ScenarioConfig:
    name: str = "custom"
    network: str = "kundur"
    lossless: bool = True
    duration: float = 25.0
    dt: float = 1e-3
    disturbance: Disturbance = field(default_factory=Disturbance)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    tcsc: TcscSettings | None = None
    statcom: StatcomSettings | None = None
    expect: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def build_network(self) -> Network:
        return Network.from_dataset(load_dataset(self.network), lossless=self.lossless)

    def to_case(self) -> SimulationCase:
        return SimulationCase(self.build_network(), self.tcsc, self.statcom, self.disturbance,
                              self.duration, self.dt)


# section -> key -> (attribute owner, converter)
_OPT_FLOAT = "optional float"
SCHEMA = {
    "scenario": {"name": str, "preset": str, "network": str, "lossless": bool, "duration": float, "dt": float},
    "disturbance": {"kind": str, "target": str, "magnitude": float, "t_start": float, "duration": float,
                    "frequency": float},
    "analysis": {"settle": float, "t_start": _OPT_FLOAT, "t_end": _OPT_FLOAT, "reference": str},
    "tcsc": {"branch": str, "kc0": float, "b0": _OPT_FLOAT, "strategy": str, "Kp": float, "Tc": float,
             "Tw": float, "Td1": float, "Td2": float, "feedback": str, "dkc_limit": float},
    "statcom": {"bus": int, "control": str, "q0": float, "Kp_q": float, "Ki_q": float, "Kdroop": float,
                "Qref": _OPT_FLOAT, "Vref": _OPT_FLOAT, "pll": str, "T_pll": float},
    "expect": {"tcsc": str, "statcom": str},
}
REQUIRED_SECTIONS = ("scenario",)
_BOOLS = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _line_numbers(text: str) -> dict[tuple[str, str | None], int]:
    where = {}
    section = None
    for num, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), num)
            continue
        key = re.split(r"[=:]", stripped, maxsplit=1)[0].strip()
        if section is not None:
            where.setdefault((section, key), num)
    return where


def _convert(kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() not in _BOOLS:
            raise ValueError(f"expected true/false, got {raw!r}")
        return _BOOLS[raw.lower()]
    if kind == _OPT_FLOAT:
        return None if raw.lower() in ("", "auto", "none") else float(raw)
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _suggest(word: str, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=1, cutoff=0.4)
    return f" (did you mean {close[0]!r}?)" if close else ""


def parse_config(text: str) -> ScenarioConfig:
    """Validated config from scenario text; raises :class:`ConfigError` listing every problem."""
    errors: list[str] = []
    where = _line_numbers(text)
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None

    def at(section, key=None):
        num = where.get((section, key))
        return f"line {num}: " if num else ""

    for name in REQUIRED_SECTIONS:
        if not parser.has_section(name):
            errors.append(f"missing required section [{name}]")
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append(f"{at(section)}unknown section [{section}]{_suggest(section, SCHEMA)}")
            continue
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                errors.append(f"{at(section, key)}unknown key {section}.{key}{_suggest(key, SCHEMA[section])}")
                continue
            try:
                values[section][key] = _convert(SCHEMA[section][key], raw)
            except ValueError:
                kind = SCHEMA[section][key]
                kind_name = kind if isinstance(kind, str) else kind.__name__
                errors.append(f"{at(section, key)}{section}.{key} = {raw!r} is not a valid {kind_name}")
    if errors:
        raise ConfigError(errors)

    scen = values.get("scenario", {})
    if "preset" in scen:
        try:
            cfg = preset(scen["preset"])
        except KeyError as exc:
            raise ConfigError([f"{at('scenario', 'preset')}{exc.args[0]}"]) from None
    else:
        cfg = ScenarioConfig()
        if "tcsc" not in values and "statcom" not in values:
            errors.append("need a [tcsc] or [statcom] section (or a preset)")
    for key, value in scen.items():
        if key != "preset":
            setattr(cfg, key, value)
    cfg.disturbance = _merge(cfg.disturbance, values.get("disturbance"), errors, "disturbance", at)
    cfg.analysis = _merge(cfg.analysis, values.get("analysis"), errors, "analysis", at)
    if "tcsc" in values:
        cfg.tcsc = _merge(cfg.tcsc or TcscSettings(), values["tcsc"], errors, "tcsc", at)
    if "statcom" in values:
        cfg.statcom = _merge(cfg.statcom or StatcomSettings(), values["statcom"], errors, "statcom", at)
    if "expect" in values:
        cfg.expect = dict(cfg.expect)
        for device, raw in values["expect"].items():
            labels = tuple(s.strip() for s in raw.split(",") if s.strip())
            bad = [s for s in labels if s not in EXPECT_LABELS]
            if bad:
                errors.append(f"{at('expect', device)}unknown expectation {bad[0]!r}{_suggest(bad[0], EXPECT_LABELS)}")
            cfg.expect[device] = labels
    errors += validate(cfg, at)
    if errors:
        raise ConfigError(errors)
    return cfg


def _merge(obj, updates, errors, section, at):
    if not updates:
        return obj
    try:
        return replace(obj, **updates)
    except (ValueError, TypeError) as exc:
        errors.append(f"{at(section)}[{section}]: {exc}")
        return obj


def validate(cfg: ScenarioConfig, at=lambda s, k=None: "") -> list[str]:
    """Cross-field checks, including that referenced buses and branches exist."""
    errors = []
    if cfg.dt <= 0 or cfg.duration <= cfg.dt:
        errors.append(f"{at('scenario', 'duration')}need dt > 0 and duration > dt")
    try:
        net = cfg.build_network()
    except (FileNotFoundError, KeyError, ValueError) as exc:
        return errors + [f"{at('scenario', 'network')}cannot load network {cfg.network!r}: {exc}"]
    branches = [br.name for br in net.branches]
    gens = [g.name for g in net.generators]

    def check_branch_end(spec, section, key):
        name, _, end = spec.partition("@")
        if name not in branches:
            errors.append(f"{at(section, key)}{section}.{key}: unknown branch {name!r}{_suggest(name, branches)}")
        elif not end.isdigit() or int(end) not in (net.branch(name).from_bus, net.branch(name).to_bus):
            errors.append(f"{at(section, key)}{section}.{key}: {spec!r} must name an end bus of {name}")

    if cfg.tcsc is not None:
        t = cfg.tcsc
        if t.strategy not in TCSC_STRATEGIES:
            errors.append(f"{at('tcsc', 'strategy')}unknown strategy {t.strategy!r}{_suggest(t.strategy, TCSC_STRATEGIES)}")
        if t.branch not in branches:
            errors.append(f"{at('tcsc', 'branch')}unknown branch {t.branch!r}{_suggest(t.branch, branches)}")
        if not t.kc0 + t.dkc_limit < 1.0 or t.dkc_limit <= 0:
            errors.append(f"{at('tcsc', 'dkc_limit')}compensation range must stay below 1")
        if min(t.Tc, t.Tw, t.Td1, t.Td2) <= 0:
            errors.append(f"{at('tcsc')}time constants must be positive")
        check_branch_end(t.feedback, "tcsc", "feedback")
    if cfg.statcom is not None:
        s = cfg.statcom
        if s.bus not in net.index:
            errors.append(f"{at('statcom', 'bus')}unknown bus {s.bus}")
        if s.control not in STATCOM_CONTROLS:
            errors.append(f"{at('statcom', 'control')}unknown control {s.control!r}{_suggest(s.control, STATCOM_CONTROLS)}")
        if s.pll not in PLL_MODES:
            errors.append(f"{at('statcom', 'pll')}unknown pll mode {s.pll!r}{_suggest(s.pll, PLL_MODES)}")
        if s.T_pll <= 0:
            errors.append(f"{at('statcom', 'T_pll')}T_pll must be positive")
    d = cfg.disturbance
    if d.kind in ("pm_pulse", "pm_sine") and d.target not in gens:
        errors.append(f"{at('disturbance', 'target')}unknown generator {d.target!r}{_suggest(d.target, gens)}")
    if d.kind == "load_step" and (not str(d.target).isdigit() or int(d.target) not in net.index):
        errors.append(f"{at('disturbance', 'target')}load_step target must be a bus id")
    if d.kind == "qref_pulse" and cfg.statcom is None:
        errors.append(f"{at('disturbance', 'kind')}qref_pulse needs a [statcom] section")
    check_branch_end(cfg.analysis.reference, "analysis", "reference")
    for device in cfg.expect:
        if device not in ("tcsc", "statcom") or getattr(cfg, device) is None:
            errors.append(f"{at('expect', device)}expectation for absent device {device!r}")
    return errors


def serialize(cfg: ScenarioConfig) -> str:
    """Scenario text that :func:`parse_config` turns back into an equal config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str

    def put(section, obj, keys):
        parser.add_section(section)
        for key in keys:
            value = getattr(obj, key)
            if value is None:
                continue
            parser.set(section, key, repr(value) if isinstance(value, float) else str(value).lower()
                       if isinstance(value, bool) else str(value))

    put("scenario", cfg, ["name", "network", "lossless", "duration", "dt"])
    put("disturbance", cfg.disturbance, [f.name for f in fields(Disturbance)])
    put("analysis", cfg.analysis, [f.name for f in fields(AnalysisSettings)])
    if cfg.tcsc is not None:
        put("tcsc", cfg.tcsc, [f.name for f in fields(TcscSettings)])
    if cfg.statcom is not None:
        put("statcom", cfg.statcom, [f.name for f in fields(StatcomSettings)])
    if cfg.expect:
        parser.add_section("expect")
        for device, labels in cfg.expect.items():
            parser.set("expect", device, ", ".join(labels))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def apply_overrides(cfg: ScenarioConfig, overrides) -> ScenarioConfig:
    """Apply ``section.key=value`` strings and re-validate."""
    if not overrides:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(serialize(cfg))
    errors = []
    for item in overrides:
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot:
            errors.append(f"override {item!r} must look like section.key=value")
            continue
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value.strip())
    if errors:
        raise ConfigError(errors)
    buf = io.StringIO()
    parser.write(buf)
    return parse_config(buf.getvalue())


# --- presets -----------------------------------------------------------------

POD_GAIN = 0.0527
FORCED = Disturbance("pm_sine", "G1", 0.02, 1.0, 1.0e9, 0.5)


def _case_a(name, strategy, kp, expect, **kw) -> ScenarioConfig:
    cfg = ScenarioConfig(name=name, tcsc=TcscSettings(strategy=strategy, Kp=kp), expect=expect)
    for key, value in kw.items():
        setattr(cfg, key, value)
    return cfg


def _case_b(name, expect, **statcom) -> ScenarioConfig:
    return ScenarioConfig(name=name, statcom=StatcomSettings(**statcom), expect=expect)


def _forced(cfg: ScenarioConfig) -> ScenarioConfig:
    cfg.disturbance = replace(FORCED)
    cfg.duration = 60.0
    cfg.analysis = AnalysisSettings(t_start=30.0)
    return cfg


PRESETS = {
    "A-i": lambda: _case_a("A-i", "damping_controller", 0.0, {"tcsc": ("neutral", "path_independent")}),
    "A-ii": lambda: _case_a("A-ii", "damping_controller", POD_GAIN, {"tcsc": ("sink", "path_dependent")}),
    "A-iii": lambda: _case_a("A-iii", "damping_controller", -POD_GAIN, {"tcsc": ("source", "path_dependent")}),
    "A-alg": lambda: _forced(_case_a("A-alg", "algebraic", 2.0, {"tcsc": ("neutral", "path_independent")})),
    "A-lag": lambda: _case_a("A-lag", "lag", 2.0, {"tcsc": ("sink", "path_dependent")}),
    "B-constI": lambda: _case_b("B-constI", {"statcom": ("neutral", "path_independent")},
                                control="constant_current"),
    "B-prop": lambda: _forced(_case_b("B-prop", {"statcom": ("neutral", "path_independent")},
                                      control="pi_droop", Ki_q=0.0)),
}
_DROOP = re.compile(r"B-droop\(\s*([-+0-9.eE]+)\s*\)$")


def preset(name: str) -> ScenarioConfig:
    """Shipped scenario by name; ``B-droop(x)`` takes any droop value ``x``."""
    if name in PRESETS:
        return PRESETS[name]()
    m = _DROOP.match(name.strip())
    if m:
        x = float(m.group(1))
        return _case_b(f"B-droop({x:g})", {}, control="pi_droop", Kdroop=x)
    raise KeyError(f"unknown preset {name!r}{_suggest(name, [*PRESETS, 'B-droop(x)'])}")


def preset_names() -> list[str]:
    return [*PRESETS, "B-droop(x)"]
