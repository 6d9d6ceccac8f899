"""
JSON run documents: parsing, validation and conversion to core types.
"""
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from config import (HEATING_DEFAULTS, INTEGRATOR_SETTINGS, OUTPUT_DEFAULTS, DEFAULT_DRIVE,
                    DEFAULT_ION, FOUR_RAIL_LAYOUT, PROTOCOL_DEFAULTS, SWEEP_DEFAULTS, VOLTAGE_LIMIT)
from core.dynamics import ExcitationMeasure, IntegratorSettings, SimulationMode
from core.errors import ConfigParseError, ConfigValidationError, PhysicsError
from core.fields import DriveState, PhysicalConstants
from core.geometry import (LayoutParams, TrapLayout, build_four_rail_trap, layout_from_entries,
                           validate_layout)
from core.heating import HeatingModel
from core.sweep import Scenario, SweepSpec
from core.waveforms import DcSchedule, Shaping, ShuttleTarget, TrajectoryKind

logger = logging.getLogger(__name__)

_ELECTRODE_KEYS = ("id", "role", "x1", "x2", "z1", "z2", "node")


@dataclass(frozen=True)
class LayoutSection:
    rf_width_um: float = FOUR_RAIL_LAYOUT["rf_width_um"]
    central_width_um: float = FOUR_RAIL_LAYOUT["central_width_um"]
    dc_segment_width_um: float = FOUR_RAIL_LAYOUT["dc_segment_width_um"]
    dc_segment_depth_um: float = FOUR_RAIL_LAYOUT["dc_segment_depth_um"]
    rail_length_um: float = FOUR_RAIL_LAYOUT["rail_length_um"]
    dc_segment_count: int = FOUR_RAIL_LAYOUT["dc_segment_count"]
    # (id, role, x1, x2, z1, z2, node) per electrode; replaces the parametric layout
    electrodes: Optional[Tuple[tuple, ...]] = None


@dataclass(frozen=True)
class DriveSection:
    V_rf: float = DEFAULT_DRIVE["V_rf"]
    Omega_MHz: float = DEFAULT_DRIVE["Omega_MHz"]
    V_ce: float = DEFAULT_DRIVE["V_ce"]
    dc_voltages: Tuple[Tuple[str, float], ...] = tuple(sorted(DEFAULT_DRIVE["dc_voltages"].items()))


@dataclass(frozen=True)
class IonSection:
    mass_amu: float
    charge_e: float


@dataclass(frozen=True)
class ProtocolSection:
    kind: str = PROTOCOL_DEFAULTS["kind"]
    N: float = PROTOCOL_DEFAULTS["N"]
    T_ms: float = PROTOCOL_DEFAULTS["T_ms"]
    V_ce_final: float = PROTOCOL_DEFAULTS["V_ce_final"]
    shaping: str = PROTOCOL_DEFAULTS["shaping"]
    dc_schedule: str = PROTOCOL_DEFAULTS["dc_schedule"]


@dataclass(frozen=True)
class HeatingSection:
    rate_quanta_per_ms: float = HEATING_DEFAULTS["rate_quanta_per_ms"]
    reference_height_um: float = HEATING_DEFAULTS["reference_height_um"]


@dataclass(frozen=True)
class SweepSection:
    N_values: Tuple[float, ...] = tuple(SWEEP_DEFAULTS["N_values"])
    T_ms: Tuple[float, ...] = tuple(SWEEP_DEFAULTS["T_ms"])


@dataclass(frozen=True)
class IntegratorSection:
    steps_per_period: int = INTEGRATOR_SETTINGS["steps_per_period"]
    steps_per_rf_period: int = INTEGRATOR_SETTINGS["steps_per_rf_period"]
    post_periods: float = INTEGRATOR_SETTINGS["post_periods"]
    measure: str = INTEGRATOR_SETTINGS["measure"]


@dataclass(frozen=True)
class OutputSection:
    directory: str = OUTPUT_DEFAULTS["directory"]
    waveform_rate_MS: float = OUTPUT_DEFAULTS["waveform_rate_MS"]
    trajectory_downsample: int = OUTPUT_DEFAULTS["trajectory_downsample"]


@dataclass(frozen=True)
class Config:
    layout: LayoutSection
    drive: DriveSection
    ion: IonSection
    protocol: ProtocolSection
    heating: HeatingSection
    sweep: SweepSection
    integrator: IntegratorSection
    output: OutputSection

    def to_dict(self) -> Dict[str, Any]:
        """Canonical, fully defaulted document; parse_config(to_dict()) == self."""
        document = {section.name: asdict(getattr(self, section.name)) for section in fields(self)}
        layout = document["layout"]
        if self.layout.electrodes is None:
            del layout["electrodes"]
        else:
            document["layout"] = {
                "electrodes": [dict(zip(_ELECTRODE_KEYS, e)) for e in self.layout.electrodes]
            }
        document["drive"]["dc_voltages"] = dict(self.drive.dc_voltages)
        document["sweep"] = {"N_values": list(self.sweep.N_values), "T_ms": list(self.sweep.T_ms)}
        return document

    def build_layout(self) -> TrapLayout:
        if self.layout.electrodes is not None:
            return layout_from_entries(dict(zip(_ELECTRODE_KEYS, e)) for e in self.layout.electrodes)
        return build_four_rail_trap(LayoutParams(
            rf_width=self.layout.rf_width_um,
            central_width=self.layout.central_width_um,
            dc_segment_width=self.layout.dc_segment_width_um,
            rail_length=self.layout.rail_length_um,
            dc_segment_count=self.layout.dc_segment_count,
            dc_segment_depth=self.layout.dc_segment_depth_um,
        ))

    def drive_state(self) -> DriveState:
        return DriveState(V_rf=self.drive.V_rf, V_ce=self.drive.V_ce,
                          Omega=2.0 * math.pi * self.drive.Omega_MHz * 1e6,
                          dc_voltages=dict(self.drive.dc_voltages))

    def constants(self) -> PhysicalConstants:
        return PhysicalConstants.from_species(self.ion.mass_amu, self.ion.charge_e)

    def target(self) -> ShuttleTarget:
        return ShuttleTarget(final_vce=self.protocol.V_ce_final)

    def heating_model(self) -> HeatingModel:
        return HeatingModel(rate_at_reference=self.heating.rate_quanta_per_ms,
                            reference_height=self.heating.reference_height_um)

    def integrator_settings(self) -> IntegratorSettings:
        return IntegratorSettings(steps_per_period=self.integrator.steps_per_period,
                                  steps_per_rf_period=self.integrator.steps_per_rf_period,
                                  post_periods=self.integrator.post_periods)

    @property
    def measure(self) -> ExcitationMeasure:
        return ExcitationMeasure(self.integrator.measure)

    def scenario(self, mode: SimulationMode = SimulationMode.PSEUDOPOTENTIAL,
                 layout: Optional[TrapLayout] = None) -> Scenario:
        return Scenario(
            layout=layout if layout is not None else self.build_layout(),
            drive=self.drive_state(),
            consts=self.constants(),
            target=self.target(),
            kind=TrajectoryKind(self.protocol.kind),
            mode=mode,
            settings=self.integrator_settings(),
            measure=self.measure,
            shaping=self.protocol.shaping,
            dc_schedule=self.protocol.dc_schedule,
        )

    def sweep_spec(self, mode: SimulationMode = SimulationMode.PSEUDOPOTENTIAL,
                   layout: Optional[TrapLayout] = None) -> SweepSpec:
        return SweepSpec(N_values=self.sweep.N_values,
                         T_grid=tuple(t * 1e-3 for t in self.sweep.T_ms),
                         scenario=self.scenario(mode, layout),
                         model=self.heating_model())


def config_hash(config: Config) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class _Reader:
    """Pulls typed values out of one section and records problems by path."""

    def __init__(self, section: str, values: Mapping[str, Any], problems: List[str]):
        self.section = section
        self.values = values
        self.problems = problems

    def problem(self, key: str, message: str) -> None:
        self.problems.append(f"{self.section}.{key}: {message}" if key else f"{self.section}: {message}")

    def number(self, key: str, default=None, required: bool = False, integer: bool = False):
        if key not in self.values:
            if required:
                self.problem(key, "required")
            if default is None:
                return None
            return int(default) if integer else float(default)
        value = self.values[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.problem(key, f"expected a number, got {value!r}")
            return default
        if not math.isfinite(value):
            self.problem(key, "must be finite")
            return default
        if integer:
            if int(value) != value:
                self.problem(key, f"expected an integer, got {value}")
                return default
            return int(value)
        return float(value)

    def choice(self, key: str, default: str, allowed) -> str:
        value = self.values.get(key, default)
        options = [a.value for a in allowed]
        if value not in options:
            self.problem(key, f"must be one of {options}, got {value!r}")
            return default
        return value

    def numbers(self, key: str, default) -> Tuple[float, ...]:
        value = self.values.get(key, list(default))
        if not isinstance(value, list) or not value:
            self.problem(key, "expected a non-empty list of numbers")
            return tuple(default)
        out = []
        for item in value:
            if isinstance(item, bool) or not isinstance(item, (int, float)) or not math.isfinite(item):
                self.problem(key, f"expected numbers, got {item!r}")
                return tuple(default)
            out.append(float(item))
        return tuple(out)

    def text(self, key: str, default: str) -> str:
        value = self.values.get(key, default)
        if not isinstance(value, str) or not value:
            self.problem(key, "expected a non-empty string")
            return default
        return value


def _section(document: Mapping[str, Any], name: str, known, problems: List[str]) -> _Reader:
    values = document.get(name, {})
    if not isinstance(values, dict):
        problems.append(f"{name}: expected an object")
        values = {}
    for key in sorted(set(values) - set(known)):
        problems.append(f"{name}.{key}: unknown key")
    return _Reader(name, values, problems)


def _parse_electrodes(reader: _Reader) -> Optional[Tuple[tuple, ...]]:
    entries = reader.values["electrodes"]
    if not isinstance(entries, list) or not entries:
        reader.problem("electrodes", "expected a non-empty list")
        return None
    parsed = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or set(entry) != set(_ELECTRODE_KEYS):
            reader.problem(f"electrodes[{i}]", f"expected exactly the keys {list(_ELECTRODE_KEYS)}")
            return None
        try:
            coords = [float(entry[k]) for k in ("x1", "x2", "z1", "z2")]
        except (TypeError, ValueError):
            reader.problem(f"electrodes[{i}]", "coordinates must be numbers")
            return None
        parsed.append((str(entry["id"]), str(entry["role"]), *coords, str(entry["node"])))
    try:
        layout = layout_from_entries(dict(zip(_ELECTRODE_KEYS, e)) for e in parsed)
    except ValueError as e:
        reader.problem("electrodes", str(e))
        return None
    for diagnostic in validate_layout(layout):
        reader.problem("electrodes", diagnostic)
    return tuple(parsed)


def _parse_layout(document, problems) -> LayoutSection:
    known = [f.name for f in fields(LayoutSection)]
    reader = _section(document, "layout", known, problems)
    if "electrodes" in reader.values:
        extra = sorted(set(reader.values) - {"electrodes"})
        if extra:
            reader.problem("", f"electrodes cannot be combined with {extra}")
        return LayoutSection(electrodes=_parse_electrodes(reader))

    section = LayoutSection(
        rf_width_um=reader.number("rf_width_um", LayoutSection.rf_width_um),
        central_width_um=reader.number("central_width_um", LayoutSection.central_width_um),
        dc_segment_width_um=reader.number("dc_segment_width_um", LayoutSection.dc_segment_width_um),
        dc_segment_depth_um=reader.number("dc_segment_depth_um", LayoutSection.dc_segment_depth_um),
        rail_length_um=reader.number("rail_length_um", LayoutSection.rail_length_um),
        dc_segment_count=reader.number("dc_segment_count", LayoutSection.dc_segment_count, integer=True),
    )
    try:
        LayoutParams(section.rf_width_um, section.central_width_um, section.dc_segment_width_um,
                     section.rail_length_um, section.dc_segment_count,
                     section.dc_segment_depth_um).validate()
    except PhysicsError as e:
        reader.problem("", str(e))
    return section


def _check_voltage(reader: _Reader, key: str, value: Optional[float]) -> None:
    if value is not None and abs(value) > VOLTAGE_LIMIT:
        reader.problem(key, f"{value} V exceeds the {VOLTAGE_LIMIT} V limit")


def _parse_drive(document, problems) -> DriveSection:
    reader = _section(document, "drive", [f.name for f in fields(DriveSection)], problems)
    V_rf = reader.number("V_rf", DriveSection.V_rf)
    Omega_MHz = reader.number("Omega_MHz", DriveSection.Omega_MHz)
    V_ce = reader.number("V_ce", DriveSection.V_ce)
    _check_voltage(reader, "V_rf", V_rf)
    _check_voltage(reader, "V_ce", V_ce)
    if not Omega_MHz > 0:
        reader.problem("Omega_MHz", "must be > 0")

    dc = dict(DEFAULT_DRIVE["dc_voltages"])
    if "dc_voltages" in reader.values:
        raw = reader.values["dc_voltages"]
        if not isinstance(raw, dict):
            reader.problem("dc_voltages", "expected an object of node -> volts")
        else:
            dc = {}
            sub = _Reader("drive.dc_voltages", raw, problems)
            for node in raw:
                value = sub.number(node)
                if value is not None:
                    _check_voltage(sub, node, value)
                    dc[str(node)] = value
    return DriveSection(V_rf=V_rf, Omega_MHz=Omega_MHz, V_ce=V_ce,
                        dc_voltages=tuple(sorted(dc.items())))


def _parse_ion(document, problems) -> IonSection:
    reader = _section(document, "ion", ["mass_amu", "charge_e"], problems)
    mass = reader.number("mass_amu", required=True)
    charge = reader.number("charge_e", required=True)
    if mass is not None and not mass > 0:
        reader.problem("mass_amu", "must be > 0")
    if charge is not None and charge == 0:
        reader.problem("charge_e", "must be non-zero")
    return IonSection(mass_amu=mass, charge_e=charge)


def _parse_protocol(document, problems) -> ProtocolSection:
    reader = _section(document, "protocol", [f.name for f in fields(ProtocolSection)], problems)
    section = ProtocolSection(
        kind=reader.choice("kind", ProtocolSection.kind, TrajectoryKind),
        N=reader.number("N", ProtocolSection.N),
        T_ms=reader.number("T_ms", ProtocolSection.T_ms),
        V_ce_final=reader.number("V_ce_final", ProtocolSection.V_ce_final),
        shaping=reader.choice("shaping", ProtocolSection.shaping, Shaping),
        dc_schedule=reader.choice("dc_schedule", ProtocolSection.dc_schedule, DcSchedule),
    )
    if not section.N > 0:
        reader.problem("N", "must be > 0")
    if not section.T_ms > 0:
        reader.problem("T_ms", "must be > 0")
    _check_voltage(reader, "V_ce_final", section.V_ce_final)
    return section


def _parse_heating(document, problems) -> HeatingSection:
    reader = _section(document, "heating", [f.name for f in fields(HeatingSection)], problems)
    section = HeatingSection(
        rate_quanta_per_ms=reader.number("rate_quanta_per_ms", HeatingSection.rate_quanta_per_ms),
        reference_height_um=reader.number("reference_height_um", HeatingSection.reference_height_um),
    )
    for f in fields(section):
        if not getattr(section, f.name) > 0:
            reader.problem(f.name, "must be > 0")
    return section


def _parse_sweep(document, problems) -> SweepSection:
    reader = _section(document, "sweep", ["N_values", "T_ms"], problems)
    section = SweepSection(N_values=reader.numbers("N_values", SweepSection.N_values),
                           T_ms=reader.numbers("T_ms", SweepSection.T_ms))
    if any(n <= 0 for n in section.N_values):
        reader.problem("N_values", "values must be > 0")
    if any(t <= 0 for t in section.T_ms):
        reader.problem("T_ms", "values must be > 0")
    if any(b <= a for a, b in zip(section.T_ms, section.T_ms[1:])):
        reader.problem("T_ms", "must be strictly ascending")
    return section


def _parse_integrator(document, problems) -> IntegratorSection:
    reader = _section(document, "integrator", [f.name for f in fields(IntegratorSection)], problems)
    section = IntegratorSection(
        steps_per_period=reader.number("steps_per_period", IntegratorSection.steps_per_period, integer=True),
        steps_per_rf_period=reader.number("steps_per_rf_period", IntegratorSection.steps_per_rf_period,
                                          integer=True),
        post_periods=reader.number("post_periods", IntegratorSection.post_periods),
        measure=reader.choice("measure", IntegratorSection.measure, ExcitationMeasure),
    )
    if section.steps_per_period < 200:
        reader.problem("steps_per_period", "must be >= 200")
    if section.steps_per_rf_period < 100:
        reader.problem("steps_per_rf_period", "must be >= 100")
    if section.post_periods < 10:
        reader.problem("post_periods", "must be >= 10")
    return section


def _parse_output(document, problems) -> OutputSection:
    reader = _section(document, "output", [f.name for f in fields(OutputSection)], problems)
    section = OutputSection(
        directory=reader.text("directory", OutputSection.directory),
        waveform_rate_MS=reader.number("waveform_rate_MS", OutputSection.waveform_rate_MS),
        trajectory_downsample=reader.number("trajectory_downsample", OutputSection.trajectory_downsample,
                                            integer=True),
    )
    if not section.waveform_rate_MS > 0:
        reader.problem("waveform_rate_MS", "must be > 0")
    if section.trajectory_downsample < 1:
        reader.problem("trajectory_downsample", "must be >= 1")
    return section


_PARSERS = {
    "layout": _parse_layout,
    "drive": _parse_drive,
    "ion": _parse_ion,
    "protocol": _parse_protocol,
    "heating": _parse_heating,
    "sweep": _parse_sweep,
    "integrator": _parse_integrator,
    "output": _parse_output,
}


def parse_config(document: Union[str, Mapping[str, Any]]) -> Config:
    """
    Build a validated Config from JSON text or an already decoded mapping.
    Raises ConfigParseError for malformed JSON and ConfigValidationError
    listing every problem by its path in the document.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ConfigParseError(f"malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(document, dict):
        raise ConfigParseError("configuration document must be a JSON object")

    problems: List[str] = [f"{key}: unknown section" for key in sorted(set(document) - set(_PARSERS))]
    sections = {name: parser(document, problems) for name, parser in _PARSERS.items()}
    if problems:
        raise ConfigValidationError(problems)
    return Config(**sections)


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigParseError(f"cannot read {path}: {e}") from e
    config = parse_config(text)
    logger.info(f"Configuration loaded: {path} (sha256 {config_hash(config)[:12]})")
    return config


def default_config() -> Config:
    """Four-rail reference configuration with the calibrated species."""
    return parse_config({"ion": dict(DEFAULT_ION)})
