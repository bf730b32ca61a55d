"""
File utility functions.
"""

import os
from pathlib import Path
import logging


logger = logging.getLogger(__name__)


def validate_file_path(file_path: Path) -> bool:
    """
    Validate if a file path exists and is readable.

    Args:
        file_path: Path to validate

    Returns:
        True if valid, False otherwise
    """
    try:
        return file_path.exists() and file_path.is_file() and os.access(file_path, os.R_OK)
    except OSError:
        return False


def create_directory_if_not_exists(dir_path: Path) -> bool:
    """
    Create an output directory, parents included.

    Returns:
        True if it exists afterwards, False otherwise
    """
    try:
        dir_path.mkdir(parents=True, exist_ok=True)
        return True
    except OSError as e:
        logger.error(f"Failed to create directory {dir_path}: {e}")
        return False


def get_file_extension(file_path: Path) -> str:
    """Lowercase extension without the dot."""
    return file_path.suffix.lower().lstrip('.')


def clear_outputs(dir_path: Path, extensions=("csv", "json", "xlsx")) -> int:
    """
    Delete previous result files in ``dir_path`` with the given extensions.

    Returns:
        Number of files removed
    """
    removed = 0
    if not dir_path.exists():
        return removed
    for file_path in dir_path.glob("*"):
        if file_path.is_file() and get_file_extension(file_path) in extensions:
            file_path.unlink()
            removed += 1
    return removed
