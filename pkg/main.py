"""
Main entry point for VertiShuttle: trap analysis, shuttling waveforms,
transport simulation and N x T excitation sweeps from the command line.
"""
import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from config import APP_NAME, APP_VERSION, DEFAULT_OUTPUT_DIR, setup_logging
from core.dynamics import SimulationMode, integrate_trajectory, motional_quanta
from core.errors import ConfigError, InvalidParamsError, PhysicsError
from core.fields import FieldPoint, field_map_rows
from core.heating import anomalous_quanta
from core.pdf_generator import SweepReportGenerator
from core.sweep import run_sweep
from core.trap_analysis import analyze_trap, curve_rows, find_minimum, height_vs_vce
from core.waveforms import build_protocol
from utils.config_loader import Config, config_hash, default_config, load_config, parse_config
from utils.file_utils import output_path, write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PHYSICS = 1
EXIT_CONFIG = 2

_TWO_PI = 2.0 * math.pi
_START_GUESS = FieldPoint(0.0, 120.0, 0.0)
_CONTINUATION_STEP_V = 25.0


def _mhz(omega: Optional[float]):
    return None if omega is None else omega / _TWO_PI / 1e6


def _tag(value: float) -> str:
    return f"{value:g}"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run document (default: built-in four-rail setup)")
    common.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    motion = argparse.ArgumentParser(add_help=False)
    motion.add_argument("--mode", default="pseudopotential", choices=["pseudopotential", "full-rf"])
    motion.add_argument("--kind", choices=["linear", "sinusoidal", "tanh"])
    motion.add_argument("--shaping", choices=["voltage", "height"])
    motion.add_argument("--measure", choices=["peak", "residual"])

    parser = argparse.ArgumentParser(prog=APP_NAME.lower(),
                                     description="Vertical ion shuttling in surface-electrode traps")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="trap point, frequencies, depth and Mathieu parameters")
    p.add_argument("--vce", type=float, help="central-electrode RF amplitude (V)")
    p.add_argument("--no-depth", action="store_true", help="skip the trap-depth search")

    p = sub.add_parser("curve", parents=[common], help="ion height and frequencies versus V_ce")
    p.add_argument("--vce-max", type=float, help="last V_ce sample (default protocol.V_ce_final)")
    p.add_argument("--points", type=int, default=11)
    p.add_argument("--no-depth", action="store_true")

    p = sub.add_parser("waveform", parents=[common, motion], help="export the protocol voltages")
    p.add_argument("--N", type=float)
    p.add_argument("--T-ms", type=float, dest="T_ms")

    p = sub.add_parser("simulate", parents=[common, motion], help="one protocol: trajectory and quanta")
    p.add_argument("--N", type=float)
    p.add_argument("--T-ms", type=float, dest="T_ms")

    p = sub.add_parser("sweep", parents=[common, motion], help="N x T budget table and optimum")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--pdf", action="store_true", help="also write a PDF summary")

    p = sub.add_parser("fieldmap", parents=[common], help="U or phi on the x-y plane at the zone center")
    p.add_argument("--quantity", default="U", choices=["U", "phi"])
    p.add_argument("--step-um", type=float, default=5.0)
    p.add_argument("--half-width-um", type=float, default=100.0)
    p.add_argument("--y-max-um", type=float, default=250.0)
    return parser


def resolve_config(args) -> Config:
    """Configuration file (or built-in defaults) with the command-line overrides applied."""
    config = load_config(args.config) if args.config else default_config()
    document = config.to_dict()
    overrides = {
        ("protocol", "N"): getattr(args, "N", None),
        ("protocol", "T_ms"): getattr(args, "T_ms", None),
        ("protocol", "kind"): getattr(args, "kind", None),
        ("protocol", "shaping"): getattr(args, "shaping", None),
        ("integrator", "measure"): getattr(args, "measure", None),
        ("output", "directory"): str(args.out) if args.out else None,
    }
    changed = False
    for (section, key), value in overrides.items():
        if value is not None and document[section].get(key) != value:
            document[section][key] = value
            changed = True
    return parse_config(document) if changed else config


def _mode(args) -> SimulationMode:
    return SimulationMode(getattr(args, "mode", "pseudopotential").replace("-", "_"))


def _follow_to(layout, drive, consts, v_target: float) -> FieldPoint:
    """Continuation of the trap minimum from the configured V_ce to v_target."""
    guess = _START_GUESS
    steps = max(int(math.ceil(abs(v_target - drive.V_ce) / _CONTINUATION_STEP_V)), 1)
    for v in np.linspace(drive.V_ce, v_target, steps + 1)[:-1]:
        guess = find_minimum(layout, drive.with_vce(float(v)), consts, guess)
    return guess


def cmd_analyze(args, config: Config, sha: str) -> None:
    layout, drive, consts = config.build_layout(), config.drive_state(), config.constants()
    v_ce = drive.V_ce if args.vce is None else args.vce
    guess = _follow_to(layout, drive, consts, v_ce)
    drive_v = drive.with_vce(v_ce)
    drive_v.validate(layout)
    tp = analyze_trap(layout, drive_v, consts, guess, with_depth=not args.no_depth)

    freqs = tp.frequencies
    document = {
        "V_ce_V": v_ce,
        "position_um": [tp.position.x, tp.position.y, tp.position.z],
        "height_um": tp.ion_height,
        "omega_radial_MHz": [_mhz(w) for w in freqs.radial],
        "omega_vertical_MHz": _mhz(freqs.vertical),
        "omega_axial_MHz": _mhz(freqs.axial),
        "depth_eV": tp.trap_depth,
        "mathieu": {"q": list(tp.mathieu.q), "a": list(tp.mathieu.a), "stable": tp.mathieu.stable},
    }
    write_json(output_path(config.output.directory, "analyze", "json", f"vce{_tag(v_ce)}"), document, sha)
    print(f"V_ce = {v_ce:g} V: height {tp.ion_height:.3f} um, "
          f"f_vertical {_mhz(freqs.vertical):.4f} MHz"
          + (f", depth {tp.trap_depth:.4f} eV" if tp.trap_depth is not None else ""))


def cmd_curve(args, config: Config, sha: str) -> None:
    layout, drive, consts = config.build_layout(), config.drive_state(), config.constants()
    v_max = config.protocol.V_ce_final if args.vce_max is None else args.vce_max
    if args.points < 2:
        raise InvalidParamsError("curve needs at least two points")
    samples = [float(v) for v in np.linspace(drive.V_ce, v_max, args.points)]
    curve = height_vs_vce(layout, drive, consts, samples, with_depth=not args.no_depth)
    header, rows = curve_rows(curve)
    write_csv(output_path(config.output.directory, "curve"), header, rows, sha,
              units="V, um, MHz (omega/2pi), MHz (omega/2pi), eV")


def _protocol(config: Config):
    layout, drive, consts = config.build_layout(), config.drive_state(), config.constants()
    return build_protocol(layout, drive, consts, config.target(), config.protocol.T_ms * 1e-3,
                          config.protocol.N, kind=config.protocol.kind,
                          shaping=config.protocol.shaping, dc_schedule=config.protocol.dc_schedule)


def cmd_waveform(args, config: Config, sha: str) -> None:
    protocol = _protocol(config)
    header, rows = protocol.voltage_table(config.output.waveform_rate_MS * 1e6)
    tag = f"N{_tag(config.protocol.N)}_T{_tag(config.protocol.T_ms)}ms"
    write_csv(output_path(config.output.directory, "waveform", tag=tag), header, rows, sha,
              units="s, V")


def cmd_simulate(args, config: Config, sha: str) -> None:
    mode = _mode(args)
    protocol = _protocol(config)
    record = integrate_trajectory(protocol, mode=mode, settings=config.integrator_settings())
    quanta = motional_quanta(record, measure=config.measure)
    window = record.transport_window
    t_transport = record.t[window] - protocol.t_start
    h_transport = record.heights_um()[window]
    n_anomalous = anomalous_quanta(lambda t: np.interp(t, t_transport, h_transport),
                                   protocol.T_total, config.heating_model())

    tag = f"N{_tag(config.protocol.N)}_T{_tag(config.protocol.T_ms)}ms"
    extra = {"mode": mode.value}
    header, rows = record.table(config.output.trajectory_downsample)
    write_csv(output_path(config.output.directory, "trajectory", tag=tag), header, rows, sha,
              units="s, um, m/s, J", extra=extra)
    omega = record.final_minimum.frequencies.vertical
    document = {
        "N": config.protocol.N,
        "T_ms": config.protocol.T_ms,
        "kind": protocol.kind.value,
        "mode": mode.value,
        "measure": quanta.measure.value,
        "n_shuttle": quanta.n_shuttle,
        "n_anomalous": n_anomalous,
        "n_total": quanta.n_shuttle + n_anomalous,
        "ke_max_initial_J": quanta.ke_max_initial,
        "ke_max_final_J": quanta.ke_max_final,
        "omega_vertical_MHz": _mhz(omega),
        "cycles": protocol.T_total * omega / _TWO_PI,
        "height_start_um": record.initial_minimum.ion_height,
        "height_final_um": record.final_minimum.ion_height,
    }
    write_json(output_path(config.output.directory, "simulate", "json", tag), document, sha)
    print(f"N = {config.protocol.N:g}, T = {config.protocol.T_ms:g} ms: "
          f"{quanta.n_shuttle:.4f} shuttle quanta, {n_anomalous:.4f} anomalous")


def cmd_sweep(args, config: Config, sha: str) -> None:
    mode = _mode(args)
    if args.threads < 1:
        raise InvalidParamsError("--threads must be >= 1")
    result = run_sweep(config.sweep_spec(mode), threads=args.threads,
                       provenance={"mode": mode.value})
    extra = {"mode": mode.value}
    header, rows = result.rows()
    out = config.output.directory
    write_csv(output_path(out, "sweep"), header, rows, sha, units="-, ms, -, quanta, quanta, quanta",
              extra=extra)
    summary = result.summary()
    write_json(output_path(out, "sweep_summary", "json"), summary, sha)
    if args.pdf:
        SweepReportGenerator(sha).generate_pdf(result, output_path(out, "sweep_report", "pdf"))
    print(f"best N = {summary['best_N']:g} at T = {summary['T_star_ms']:.3f} ms "
          f"({summary['n_total_star']:.3f} quanta)")


def cmd_fieldmap(args, config: Config, sha: str) -> None:
    if not args.step_um > 0:
        raise InvalidParamsError("--step-um must be > 0")
    layout, drive, consts = config.build_layout(), config.drive_state(), config.constants()
    xs = np.arange(-args.half_width_um, args.half_width_um + 0.5 * args.step_um, args.step_um)
    ys = np.arange(args.step_um, args.y_max_um + 0.5 * args.step_um, args.step_um)
    header, rows = field_map_rows(layout, drive, consts, xs, ys, [0.0], quantity=args.quantity)
    units = "m, J" if args.quantity == "U" else "m, V"
    write_csv(output_path(config.output.directory, "fieldmap", tag=args.quantity), header, rows, sha,
              units=units)


COMMANDS = {
    "analyze": cmd_analyze,
    "curve": cmd_curve,
    "waveform": cmd_waveform,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "fieldmap": cmd_fieldmap,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns 0 on success, 1 on physics errors, 2 on config errors."""
    args = build_parser().parse_args(argv)
    log_dir = args.out or DEFAULT_OUTPUT_DIR
    setup_logging(log_dir, getattr(logging, args.log_level))
    logger.info(f"Starting {APP_NAME} {APP_VERSION}: {args.command}")

    try:
        config = resolve_config(args)
        sha = config_hash(config)
        COMMANDS[args.command](args, config, sha)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except PhysicsError as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return EXIT_PHYSICS

    logger.info(f"{args.command} finished")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
