"""
VertiShuttle - launcher: logging first, then the command-line front end
"""
import sys
import logging

from config import APP_NAME, setup_logging


def main(argv=None):
    """Application entry point."""
    # Set up logging first so import-time problems are recorded
    setup_logging()
    logger = logging.getLogger(__name__)

    # Fix console encoding for Windows
    if sys.platform == "win32":
        try:
            sys.stdout.reconfigure(encoding="utf-8")
        except (AttributeError, OSError):
            pass

    try:
        logger.info(f"Starting {APP_NAME}...")
        from main import main as app_main
        return app_main(argv)

    except Exception as e:
        logger.critical(f"Failed to start {APP_NAME}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
