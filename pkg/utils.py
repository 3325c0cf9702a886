#!/usr/bin/env python3
"""
Utility functions for the mcalib calibration toolkit

Shared error types, environment-backed configuration readers, seed mixing,
file hashing and the metadata block written into report JSON.
"""

import os
import sys
import json
import hashlib
import logging
import subprocess
from pathlib import Path
from typing import Dict, Optional, Any, Union

import numpy as np

TOOL_VERSION = "0.2.0"


class McalibError(ValueError):
    """Base class for every data, schema and hyperparameter error raised by mcalib."""


class NonRectangular(McalibError):
    pass


class RowSumZero(McalibError):
    pass


class OutOfRange(McalibError):
    pass


class KOutOfRange(McalibError):
    pass


class EmptyInput(McalibError):
    pass


class BinsExceedPoints(McalibError):
    pass


class ClassCountMismatch(McalibError):
    pass


class InvalidHyperparameters(McalibError):
    pass


class NotOnSimplex(McalibError):
    pass


class NoBinFound(McalibError):
    pass


class TooFewPoints(McalibError):
    pass


class NonUnitDirection(McalibError):
    pass


class UnsupportedPredictor(McalibError):
    pass


class NonFinite(McalibError):
    pass


class MalformedHeader(McalibError):
    pass


class LabelOutOfRange(McalibError):
    pass


class RaggedRow(McalibError):
    pass


class SchemaViolation(McalibError):
    pass


class VersionMismatch(McalibError):
    pass


def env_int(name: str, default: int) -> int:
    """
    Read an integer setting from the environment.

    Args:
        name: Environment variable name (MCALIB_*)
        default: Value used when the variable is unset or blank

    Returns:
        int: Parsed value

    Raises:
        InvalidHyperparameters: If the variable is set but not an integer
    """
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise InvalidHyperparameters(f"{name} must be an integer, got {raw!r}")


def env_float(name: str, default: float) -> float:
    """Read a float setting from the environment (same rules as env_int)."""
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise InvalidHyperparameters(f"{name} must be a number, got {raw!r}")


def default_seed() -> int:
    """Default RNG seed; MCALIB_SEED overrides it."""
    return env_int("MCALIB_SEED", 0)


def mix_seed(seed: int, *parts: int) -> int:
    """
    Derive an independent child seed from a parent seed and integer coordinates.

    The same (seed, parts) always yields the same child, and children for
    different coordinates are statistically independent, so per-class and
    per-replication fits do not depend on evaluation order.

    Args:
        seed: Parent seed (non-negative)
        *parts: Integer coordinates such as class index, rank or replication

    Returns:
        int: Child seed in [0, 2**32)
    """
    entropy = [int(seed)] + [int(p) for p in parts]
    if any(value < 0 for value in entropy):
        raise InvalidHyperparameters(f"Seeds and seed coordinates must be non-negative, got {entropy}")
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)
    return int(state[0])


class SHA256Cache:
    """Simple file hash cache to avoid duplicate calculations."""

    def __init__(self):
        self._cache = {}

    def get_file_hash(self, file_path: Path) -> str:
        """
        Get SHA256 hash of file, using cache if available.

        Args:
            file_path: Path to file to hash

        Returns:
            str: SHA256 hash in hexadecimal
        """
        resolved = Path(file_path).resolve()
        stat = resolved.stat()
        key = (str(resolved), stat.st_size, stat.st_mtime_ns)

        if key in self._cache:
            return self._cache[key]

        sha256_hash = hashlib.sha256()
        with open(resolved, "rb") as f:
            for chunk in iter(lambda: f.read(65536), b""):
                sha256_hash.update(chunk)

        file_hash = sha256_hash.hexdigest()
        self._cache[key] = file_hash
        return file_hash


_sha_cache = SHA256Cache()


def get_file_sha256(file_path: Path) -> str:
    """Get SHA256 hash of a file (cached on path, size and mtime)."""
    return _sha_cache.get_file_hash(file_path)


def get_git_commit() -> str:
    """Return the current git commit, or 'unknown' outside a checkout."""
    try:
        return subprocess.check_output(
            ["git", "rev-parse", "HEAD"],
            stderr=subprocess.DEVNULL,
            cwd=str(Path(__file__).resolve().parent),
        ).decode().strip()
    except (subprocess.CalledProcessError, FileNotFoundError, OSError):
        return "unknown"


REQUIRED_METADATA_KEYS = {"tool_version", "python_version", "git_commit", "input_sha256"}


def generate_metadata(inputs: Dict[str, Optional[Path]]) -> Dict[str, Any]:
    """
    Build the metadata block attached to report JSON.

    No wall-clock timestamp is recorded so that identical inputs give
    byte-identical outputs.

    Args:
        inputs: Mapping of role name (e.g. 'calibration') to input file path

    Returns:
        dict: tool_version, python_version, git_commit and per-input SHA256
    """
    hashes = {}
    for role, path in sorted(inputs.items()):
        if path is not None and Path(path).exists():
            hashes[role] = get_file_sha256(Path(path))
        else:
            hashes[role] = "unknown"

    metadata = {
        "tool_version": TOOL_VERSION,
        "python_version": f"{sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}",
        "git_commit": get_git_commit(),
        "input_sha256": hashes,
    }
    if not validate_metadata(metadata):
        logging.warning("Metadata validation failed - some keys may be missing")
    return metadata


def validate_metadata(metadata: Dict) -> bool:
    """
    Validate that metadata contains all required keys.

    Args:
        metadata: Dictionary to validate

    Returns:
        bool: True if all required keys present
    """
    missing_keys = REQUIRED_METADATA_KEYS - set(metadata.keys())
    if missing_keys:
        logging.error(f"Missing required metadata keys: {sorted(missing_keys)}")
        return False
    return True


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def to_json(payload: Any) -> str:
    """Serialize with sorted keys and a trailing newline (stable byte output)."""
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default, allow_nan=False) + "\n"


def write_json(payload: Any, output_path: Optional[Union[str, Path]] = None) -> str:
    """
    Write JSON to a file, or to stdout when no path is given.

    Args:
        payload: JSON-serializable structure (numpy scalars and arrays allowed)
        output_path: Destination file; None means stdout

    Returns:
        str: The serialized text
    """
    text = to_json(payload)
    if output_path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        path = Path(output_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        logging.info(f"Wrote {path}")
    return text
