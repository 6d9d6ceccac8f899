"""
File utility functions
"""
import csv
import json
import logging
import os
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from config import APP_NAME, APP_VERSION, DEFAULT_OUTPUT_DIR

logger = logging.getLogger(__name__)


def ensure_output_dir(directory=DEFAULT_OUTPUT_DIR) -> Path:
    """Create the output directory if needed and return it."""
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def output_path(directory, command: str, suffix: str = "csv", tag: Optional[str] = None) -> Path:
    """Deterministic result file name, e.g. results/sweep.csv or results/simulate_N2.5_T0.5ms.csv."""
    stem = command if not tag else f"{command}_{tag}"
    return ensure_output_dir(directory) / f"{stem}.{suffix}"


def provenance(config_sha256: str, version: str = APP_VERSION) -> dict:
    return {"program": APP_NAME.lower(), "version": version, "config_sha256": config_sha256}


def provenance_lines(config_sha256: str, units: Optional[str] = None, extra: Optional[dict] = None,
                     version: str = APP_VERSION) -> List[str]:
    lines = [f"# {APP_NAME.lower()} {version}", f"# config_sha256 {config_sha256}"]
    for key, value in (extra or {}).items():
        lines.append(f"# {key} {value}")
    if units:
        lines.append(f"# units {units}")
    return lines


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], config_sha256: str,
              units: Optional[str] = None, extra: Optional[dict] = None) -> Path:
    """CSV with '#' provenance lines ahead of the header row."""
    path = Path(path)
    ensure_output_dir(path.parent)
    try:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            for line in provenance_lines(config_sha256, units, extra):
                handle.write(line + "\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            count = 0
            for row in rows:
                writer.writerow([_format(v) for v in row])
                count += 1
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise
    logger.info(f"CSV saved: {path} ({count} rows)")
    return path


def write_json(path, document: dict, config_sha256: str) -> Path:
    """JSON with sorted keys and a provenance object."""
    path = Path(path)
    ensure_output_dir(path.parent)
    payload = dict(document)
    payload["provenance"] = {**provenance(config_sha256), **document.get("provenance", {})}
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise
    logger.info(f"JSON saved: {path}")
    return path


def read_csv_rows(path) -> List[List[str]]:
    """Rows of a result CSV with the provenance lines skipped; the header is the first row."""
    with open(path, newline="", encoding="utf-8") as handle:
        return [row for row in csv.reader(line for line in handle if not line.startswith("#"))]


def safe_remove_file(file_path) -> bool:
    """Safely remove a file with error handling."""
    try:
        if os.path.exists(file_path):
            os.remove(file_path)
            return True
    except Exception as e:
        logger.error(f"Error removing file {file_path}: {e}")
    return False
