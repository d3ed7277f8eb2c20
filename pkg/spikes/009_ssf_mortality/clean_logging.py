"""
Harmonized logging for the SSF mortality CLI and MCP server.

Copyright (c) 2025 LAB271
SPDX-License-Identifier: Apache-2.0
"""

import logging
import os
import sys
from typing import TextIO

from uvicorn.config import LOGGING_CONFIG

DEFAULT_FORMAT = "%(asctime)s [%(levelname)8s] %(name)s: %(message)s"


def setup_clean_logging(
    level: str | None = None,
    app_name: str = "ssf_mortality",
    show_mcp_internals: bool = False,
    stream: TextIO | None = None,
) -> logging.Logger:
    """Set up clean, minimal logging.

    ``level`` falls back to ``SSF_LOG_LEVEL`` and then INFO. The stdio MCP
    transport owns stdout, so callers running it pass ``stream=sys.stderr``.
    """
    level = (level or os.environ.get("SSF_LOG_LEVEL") or "INFO").upper()

    formatter = logging.Formatter(fmt=DEFAULT_FORMAT, datefmt="%H:%M:%S")
    try:
        formatter = logging.Formatter(
            LOGGING_CONFIG["formatters"]["default"]["fmt"], LOGGING_CONFIG["formatters"]["default"]["datefmt"]
        )
    except KeyError:  # pragma: no cover
        pass

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level))
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(stream or sys.stdout)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(getattr(logging, level))
    root_logger.addHandler(console_handler)

    # SILENCE NOISY COMPONENTS
    noise_loggers = {
        "uvicorn": logging.WARNING,
        "uvicorn.access": logging.WARNING,
        "uvicorn.error": logging.WARNING,
        "mcp.server.lowlevel.server": logging.INFO if show_mcp_internals else logging.WARNING,
        "mcp.server.streamable_http": logging.INFO if show_mcp_internals else logging.WARNING,
        "mcp.server.streamable_http_manager": logging.INFO if show_mcp_internals else logging.WARNING,
        "anyio": logging.WARNING,
        "numexpr": logging.WARNING,
    }
    for logger_name, log_level in noise_loggers.items():
        logging.getLogger(logger_name).setLevel(log_level)

    app_logger = logging.getLogger(app_name)
    app_logger.setLevel(getattr(logging, level))
    return app_logger
