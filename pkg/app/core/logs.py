import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from app.core.config import get_settings

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    settings = get_settings()
    log_level = (level or settings.LOG_LEVEL).upper()
    if settings.DEBUG:
        log_level = "DEBUG"

    logging.basicConfig(
        level=log_level,
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler()],
        force=True,
    )


@contextmanager
def run_log(run_dir: Path, name: str = "run.log") -> Iterator[Path]:
    """Пишет все логи на время прогона в <run_dir>/<name>."""
    run_dir.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / name
    handler = logging.FileHandler(log_path, encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root_logger = logging.getLogger()
    root_logger.addHandler(handler)
    try:
        yield log_path
    finally:
        root_logger.removeHandler(handler)
        handler.close()
