import logging
import os
import sys
from typing import Optional, Union

# Flag to ensure setup only runs once
_logging_configured = False

DEFAULT_LOG_FILE = "longformer.log"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class UvicornAccessFormatter(logging.Formatter):
    """Custom formatter that mimics uvicorn's original access log format"""
    def format(self, record):
        if record.name == "uvicorn.access":
            return f"INFO:     {record.getMessage()}"
        return super().format(record)


def resolve_level(level: Union[int, str, None]) -> int:
    """Accepts logging constants or names ("DEBUG", "info"); falls back to INFO"""
    if isinstance(level, int):
        return level
    if not level:
        return logging.INFO
    resolved = logging.getLevelName(str(level).upper())
    return resolved if isinstance(resolved, int) else logging.INFO


def setup_logging(
    log_file: Optional[str] = None,
    log_level: Union[int, str, None] = None,
    force_reset: bool = False,
) -> None:
    """
    Configure centralized logging for the CLI and the HTTP service.

    Args:
        log_file: Path to the log file; LF_LOG_FILE or longformer.log when omitted,
            an empty string disables the file handler
        log_level: Logging level; LF_LOG_LEVEL or INFO when omitted
        force_reset: Whether to force reset existing configuration
    """
    global _logging_configured

    if _logging_configured and not force_reset:
        return

    if log_file is None:
        log_file = os.environ.get("LF_LOG_FILE", DEFAULT_LOG_FILE)
    level = resolve_level(log_level if log_level is not None else os.environ.get("LF_LOG_LEVEL"))

    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        if getattr(handler, "_longformer_handler", False):
            handler.close()
            root_logger.removeHandler(handler)

    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)
    handlers = []

    # stdout carries command results, so diagnostics go to stderr
    console_handler = logging.StreamHandler(sys.stderr)
    handlers.append(console_handler)

    if log_file:
        try:
            handlers.append(logging.FileHandler(log_file, mode="a", encoding="utf-8"))
        except OSError as exc:
            print(f"Warning: Could not open log file '{log_file}': {exc}", file=sys.stderr)

    for handler in handlers:
        handler.setLevel(level)
        handler.setFormatter(formatter)
        handler._longformer_handler = True
        root_logger.addHandler(handler)
    root_logger.setLevel(level)

    # Configure console handler for UTF-8 (mainly for Windows)
    try:
        if hasattr(console_handler.stream, "reconfigure"):
            console_handler.stream.reconfigure(encoding="utf-8", errors="replace")
    except Exception:
        pass

    _logging_configured = True
    logging.getLogger(__name__).debug("Logging configured (level=%s, file=%r)", logging.getLevelName(level), log_file)


def setup_uvicorn_logging(log_file: Optional[str] = None) -> None:
    """
    Route uvicorn access logs into the centralized log file.
    Call this after the uvicorn server is configured but before it starts.
    """
    if log_file is None:
        log_file = os.environ.get("LF_LOG_FILE", DEFAULT_LOG_FILE)
    if not log_file:
        return
    access_logger = logging.getLogger("uvicorn.access")
    file_handler = logging.FileHandler(log_file, mode="a", encoding="utf-8")
    file_handler.setLevel(logging.INFO)
    file_handler.setFormatter(UvicornAccessFormatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    access_logger.addHandler(file_handler)


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Get a named logger for a module.

    Args:
        name: Logger name (typically __name__ from the calling module)

    Returns:
        Logger instance for the specified name
    """
    if not _logging_configured:
        setup_logging()

    return logging.getLogger(name)


# Auto-configure logging when this module is imported
setup_logging()
