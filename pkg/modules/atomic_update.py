import csv
import io
import os

import orjson
from atomicwrites import atomic_write

from logging_config import get_logger

logger = get_logger(__name__)


def _ensure_parent(file_path):
    parent = os.path.dirname(os.path.abspath(file_path))
    os.makedirs(parent, exist_ok=True)
    return parent


def atomic_write_json(data, file_path):
    try:
        parent = _ensure_parent(file_path)
        with atomic_write(file_path, overwrite=True, mode="wb", dir=parent) as f:
            f.write(orjson.dumps(data, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY))
        logger.debug(f"Wrote JSON data to file: {file_path}")
    except Exception as e:
        logger.exception(f"Error writing JSON data to file {file_path}: {e}")
        raise


def atomic_write_text(data, file_path):
    try:
        parent = _ensure_parent(file_path)
        with atomic_write(file_path, overwrite=True, mode="w", encoding="utf-8", dir=parent) as f:
            f.write(data)
        logger.debug(f"Wrote text data to file: {file_path}")
    except Exception as e:
        logger.exception(f"Error writing text data to file {file_path}: {e}")
        raise


def atomic_write_bytes(data, file_path):
    try:
        parent = _ensure_parent(file_path)
        with atomic_write(file_path, overwrite=True, mode="wb", dir=parent) as f:
            f.write(data)
        logger.debug(f"Wrote {len(data)} bytes to file: {file_path}")
    except Exception as e:
        logger.exception(f"Error writing binary data to file {file_path}: {e}")
        raise


def read_json(file_path):
    """Load a JSON file written by atomic_write_json."""
    with open(file_path, "rb") as f:
        return orjson.loads(f.read())


def atomic_write_csv(header, rows, file_path):
    """Write dict rows under a fixed header; missing keys become empty cells."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(header), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    atomic_write_text(buffer.getvalue(), file_path)
