#!/usr/bin/env python3
"""
Flow Lab Settings
Environment defaults (read from .env when present) and logging setup
"""

import logging
import os

from dotenv import load_dotenv

load_dotenv()

DEFAULT_WORKERS = int(os.environ.get("FLOWLAB_WORKERS", os.cpu_count() or 1))
DEFAULT_OUTPUT_DIR = os.environ.get("FLOWLAB_OUT", "results")
LOG_LEVEL = os.environ.get("FLOWLAB_LOG_LEVEL", "INFO").upper()

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def configure_logging(level: str = None) -> None:
    """Configure root logging once for CLI runs"""
    logging.basicConfig(level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
                        format=LOG_FORMAT)
