import os
import sys
import json
import shutil
import logging
import tempfile
from typing import Any, Iterable

from ggmotion.errors import UsageError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = "INFO"):
    """
    Route human-readable logs to stderr so stdout stays machine-readable

    Args:
        level: Logging level name (DEBUG, INFO, WARNING, ...)
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))


def write_bytes_atomic(path: str, payload: bytes) -> str:
    """
    Write a file so that readers only ever see the old or the complete new content

    Args:
        path: Destination path
        payload: Bytes to store

    Returns:
        str: The destination path
    """
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)

    temp_file_path = None
    try:
        # Stage in the destination folder so the final move stays on one filesystem
        with tempfile.NamedTemporaryFile(dir=folder, delete=False) as temp_file:
            temp_file.write(payload)
            temp_file_path = temp_file.name
        shutil.move(temp_file_path, path)
        return path
    except Exception:
        if temp_file_path and os.path.exists(temp_file_path):
            os.remove(temp_file_path)
        raise


def write_json_atomic(path: str, obj: Any) -> str:
    return write_bytes_atomic(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def write_jsonl(path: str, rows: Iterable[dict]) -> str:
    lines = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    return write_bytes_atomic(path, lines.encode("utf-8"))


def read_json(path: str) -> Any:
    """
    Read a JSON document, turning I/O and syntax failures into usage errors

    Args:
        path: Path to the JSON file

    Returns:
        The decoded document
    """
    if not os.path.exists(path):
        raise UsageError(f"File not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"Invalid JSON in {path}: {e}")


def emit_json(obj: Any):
    """Print one JSON document on stdout"""
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()
