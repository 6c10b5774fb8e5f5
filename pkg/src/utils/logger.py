"""
Logging system for interactive and background training runs
Coloured terminal output, buffered daemon output and per-run log files
"""

import logging
import sys
from contextlib import contextmanager
from datetime import datetime
from logging.handlers import RotatingFileHandler
from pathlib import Path

import colorama
from colorama import Fore, Back, Style

from config.settings import LabSettings

colorama.init(autoreset=True)

LAB_COMPONENTS = ("Trainer", "Learners", "ParticleEnv", "BiasProbe", "Harness", "Checkpoint", "MATD3Lab")
CONSOLE_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
FILE_FORMAT = '%(asctime)s [%(levelname)-8s] %(name)-20s: %(message)s'
RUN_LOG_NAME = "run.log"


class LoggerMode:
    """
    TERMINAL writes through to stderr; DAEMON buffers and forwards to the root file log
    """
    TERMINAL = "terminal"
    DAEMON = "daemon"

    _current_mode = TERMINAL

    @classmethod
    def set_mode(cls, mode: str):
        cls._current_mode = mode

    @classmethod
    def is_terminal(cls) -> bool:
        return cls._current_mode == cls.TERMINAL


class ColoredFormatter(logging.Formatter):
    """
    Colours level and component name when writing to a terminal
    """

    COLORS = {
        'DEBUG': Fore.CYAN,
        'INFO': Fore.GREEN,
        'WARNING': Fore.YELLOW,
        'ERROR': Fore.RED,
        'CRITICAL': Fore.RED + Back.WHITE + Style.BRIGHT
    }

    COMPONENT_COLORS = dict(zip(LAB_COMPONENTS, (
        Fore.BLUE, Fore.MAGENTA, Fore.YELLOW, Fore.CYAN, Fore.WHITE, Fore.GREEN, Fore.BLUE,
    )))

    def format(self, record):
        if not (LoggerMode.is_terminal() and sys.stderr.isatty()):
            return super().format(record)
        # colour a copy so file handlers on the same logger see plain text
        record = logging.makeLogRecord(record.__dict__)
        is_error = record.levelno >= logging.ERROR
        record.levelname = f"{self.COLORS.get(record.levelname, '')}{record.levelname:<8}{Style.RESET_ALL}"
        component = record.name.split('.')[-1]
        record.name = f"{self.COMPONENT_COLORS.get(component, Fore.BLUE)}{component:<12}{Style.RESET_ALL}"
        if is_error:
            record.msg = f"{Fore.RED}{record.msg}{Style.RESET_ALL}"
        return super().format(record)


class BufferedStreamHandler(logging.Handler):
    """
    Writes straight through in terminal mode.
    In daemon mode lines are held until the buffer fills or an error arrives.
    """

    def __init__(self, stream=None, buffer_size: int = 100):
        super().__init__()
        self.stream = stream or sys.stderr
        self.buffer = []
        self.buffer_size = buffer_size
        self.last_flush = datetime.now()

    def emit(self, record):
        try:
            msg = self.format(record)
            if LoggerMode.is_terminal():
                self.stream.write(msg + '\n')
                if record.levelno >= logging.WARNING:
                    self.stream.flush()
                return
            self.buffer.append(msg)
            if len(self.buffer) >= self.buffer_size or record.levelno >= logging.ERROR:
                self.flush()
        except Exception:
            self.handleError(record)

    def flush(self):
        if not self.buffer:
            return
        self.stream.write('\n'.join(self.buffer) + '\n')
        self.stream.flush()
        self.buffer.clear()
        self.last_flush = datetime.now()


def _level() -> int:
    return getattr(logging, LabSettings.LOGGING.level.upper(), logging.INFO)


def _console_handler(level: int) -> logging.Handler:
    handler = BufferedStreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(ColoredFormatter(CONSOLE_FORMAT, datefmt='%H:%M:%S'))
    return handler


def _file_handler(path: Path, level: int, max_bytes: int, backups: int) -> logging.Handler:
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(path, maxBytes=max_bytes, backupCount=backups, encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
    return handler


def setup_logger(name: str) -> logging.Logger:
    """
    Configure a component logger once from LabSettings.LOGGING
    """
    logger = logging.getLogger(name)
    if getattr(logger, "_lab_configured", False):
        return logger

    level = _level()
    logger.setLevel(level)
    if LabSettings.LOGGING.console_output:
        logger.addHandler(_console_handler(level))
    if LabSettings.LOGGING.file_output:
        try:
            logger.addHandler(_file_handler(
                Path(LabSettings.LOGGING.log_directory) / "matd3_lab.log", level,
                LabSettings.LOGGING.max_file_size_mb * 1024 * 1024, LabSettings.LOGGING.max_log_files))
        except OSError as e:
            print(f"Warning: Could not setup file logging: {e}", file=sys.stderr)

    # daemon loggers hand records to the root file handler
    logger.propagate = not LoggerMode.is_terminal()
    logger._lab_configured = True
    return logger


def set_level(level: str):
    """Apply a new level to the settings and every configured lab logger"""
    LabSettings.set_log_level(level)
    numeric = _level()
    for existing in logging.Logger.manager.loggerDict.values():
        if isinstance(existing, logging.Logger) and getattr(existing, "_lab_configured", False):
            existing.setLevel(numeric)
            for handler in existing.handlers:
                handler.setLevel(numeric)


class ComponentLogger:
    """
    Named logger for one lab component
    """

    def __init__(self, component_name: str):
        self.logger = setup_logger(component_name)
        self.component_name = component_name

    def info(self, message: str, *args, **kwargs):
        self.logger.info(message, *args, **kwargs)

    def debug(self, message: str, *args, **kwargs):
        self.logger.debug(message, *args, **kwargs)

    def warning(self, message: str, *args, **kwargs):
        self.logger.warning(message, *args, **kwargs)

    def error(self, message: str, *args, **kwargs):
        self.logger.error(message, *args, **kwargs)


@contextmanager
def run_log(run_dir):
    """
    Copy every lab component's records into <run_dir>/run.log while the block runs.
    Seeds trained in worker processes log only to their own process.
    """
    handler = logging.FileHandler(Path(run_dir) / RUN_LOG_NAME, encoding="utf-8")
    handler.setLevel(_level())
    handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
    loggers = [setup_logger(name) for name in LAB_COMPONENTS]
    for logger in loggers:
        logger.addHandler(handler)
    try:
        yield handler
    finally:
        for logger in loggers:
            logger.removeHandler(handler)
        handler.close()


def setup_background_logging(log_file: str = "matd3_lab_daemon.log"):
    """Route logging to a rotating file for runs left unattended (long grid searches)"""
    LoggerMode.set_mode(LoggerMode.DAEMON)

    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
    root_logger.addHandler(_file_handler(Path(log_file), logging.INFO, 100 * 1024 * 1024, 5))
    root_logger.setLevel(logging.INFO)
