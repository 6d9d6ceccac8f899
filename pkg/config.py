"""
Configuration constants and default settings for VertiShuttle
"""

import logging
from pathlib import Path
from logging.handlers import RotatingFileHandler

# Application info
APP_NAME = "VertiShuttle"
APP_VERSION = "1.0.0"

# File paths
DEFAULT_OUTPUT_DIR = Path("results")
LOG_FILE_NAME = "vertishuttle.log"

# RF breakdown cap applied to every scheduled voltage (V)
VOLTAGE_LIMIT = 500.0

# Four-rail single-zone layout (micrometers)
FOUR_RAIL_LAYOUT = {
    "rf_width_um": 300.0,
    "central_width_um": 85.0,
    "dc_segment_width_um": 310.0,
    "dc_segment_depth_um": 700.0,
    "rail_length_um": 12000.0,
    "dc_segment_count": 3,
}

# Drive at the initial trapping configuration
DEFAULT_DRIVE = {
    "V_rf": 200.0,
    "Omega_MHz": 22.0,
    "V_ce": 0.0,
    "dc_voltages": {"dc_pos": 6.0, "dc_neg": -8.4},
}

# Calibrated species (202Hg+)
DEFAULT_ION = {
    "mass_amu": 202.0,
    "charge_e": 1.0,
}

PROTOCOL_DEFAULTS = {
    "kind": "tanh",
    "N": 2.5,
    "T_ms": 0.5,
    "V_ce_final": 100.0,
    "shaping": "voltage",
    "dc_schedule": "tracking",
}

HEATING_DEFAULTS = {
    "rate_quanta_per_ms": 3.1,
    "reference_height_um": 134.0,
}

SWEEP_DEFAULTS = {
    "N_values": [2.5, 5.0, 10.0],
    "T_ms": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
}

INTEGRATOR_SETTINGS = {
    "steps_per_period": 200,
    "steps_per_rf_period": 100,
    "post_periods": 10,
    "pre_periods": 0,
    "measure": "peak",
    "self_test": True,
    "self_test_periods": 20,
    "energy_drift_bound": 1e-6,
    "axial_table_step_um": 0.02,
    "force_model": "auto",
}

# Finite-difference derivative engine
FIELD_SETTINGS = {
    "fd_step_fraction": 1e-3,   # of the evaluation height
    "fd_step_min_um": 1e-6,
}

MINIMUM_SEARCH = {
    "max_iterations": 100,
    "gradient_tolerance": 1e-9,  # relative to curvature scale x height
    "max_step_fraction": 0.25,
    "region_factor": 10.0,
}

DEPTH_SEARCH = {
    "rays": 72,
    "samples_per_ray": 240,
    "radius_factor": 10.0,
}

COMPENSATION = {
    "knots": 33,
    "adjust_node": "dc_neg",
    "bracket": (-20.0, 0.0),
    "xtol": 1e-8,
}

OUTPUT_DEFAULTS = {
    "directory": str(DEFAULT_OUTPUT_DIR),
    "waveform_rate_MS": 1.0,
    "trajectory_downsample": 100,
}


def setup_logging(log_dir: Path = DEFAULT_OUTPUT_DIR, level: int = logging.INFO) -> None:
    """Setup application logging."""
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / LOG_FILE_NAME

    logger = logging.getLogger()
    logger.setLevel(level)

    # Remove existing handlers
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    file_handler = RotatingFileHandler(
        log_file, maxBytes=1024*1024, backupCount=5, encoding="utf-8"
    )
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    logging.info("Logging setup completed")
