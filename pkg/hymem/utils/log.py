import sys
import json
import typing as T
from pathlib import Path

from loguru import logger  # noqa: F401


def set_sinks(level: str = 'INFO', log_file: T.Optional[str] = None):
    """Replace the logger sinks with stderr and an optional file."""
    logger.remove()
    logger.add(sys.stderr, level=level)
    if log_file is not None:
        logger.info(f'Logging to {log_file}')
        logger.add(log_file, level=level)


class JsonlWriter():
    """Append one JSON object per line to a file.

    With ``path=None`` the records are only kept in memory.
    """
    def __init__(self, path: T.Optional[T.Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.records: T.List[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text('')

    def write(self, record: dict):
        self.records.append(record)
        if self.path is not None:
            with open(self.path, 'a') as f:
                f.write(json.dumps(record, sort_keys=True) + '\n')
