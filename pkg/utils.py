import hashlib
import json
import math
import os
import sys


def resource_path(relative_path):
    """Get absolute path to resource, works for dev and for cx_Freeze"""
    if getattr(sys, "frozen", False):
        # If the application is run as a bundle (cx_Freeze)
        base_path = os.path.dirname(sys.executable)
    else:
        base_path = os.path.abspath(".")

    return os.path.join(base_path, relative_path)


def format_real(value):
    """Full double precision (17 significant digits), as used in every CSV."""
    return f"{float(value):.17g}"


def json_real(value):
    """JSON-safe real: infinities become the strings "inf"/"-inf"."""
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return value


def dump_json(data, path):
    """Write `data` deterministically (sorted keys, fixed indent)."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, sort_keys=True, indent=2, allow_nan=False)
        f.write("\n")


def config_digest(data):
    """SHA-256 of the canonical JSON form of a config mapping."""
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def format_duration(seconds):
    """Convert wall-clock seconds to a short string.

    Args:
        seconds (float): Elapsed time in seconds

    Returns:
        str: Formatted duration string (e.g., "1h 2m 3.4s" or "0.25s")
    """
    if seconds < 60:
        return f"{seconds:.2f}s"

    hours = int(seconds // 3600)
    minutes = int((seconds % 3600) // 60)
    rest = seconds % 60

    parts = []
    if hours > 0:
        parts.append(f"{hours}h")
    if minutes > 0:
        parts.append(f"{minutes}m")
    parts.append(f"{rest:.1f}s")

    return " ".join(parts)
