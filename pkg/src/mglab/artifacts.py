"""Delimited outputs and run manifests.

Every CSV is written with comma separator, header row, '.' decimal point and
LF line endings, and floats are formatted with shortest round-trip repr so a
rerun with identical config and seeds is byte-identical.  Next to each CSV
sits a JSON manifest with the same basename carrying everything needed to
regenerate the file: resolved config, seeds, derived constants and the code
version.  Manifests contain no timestamps.
"""

from __future__ import annotations

import json
import subprocess
from pathlib import Path


def fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    try:
        import numpy as np

        if isinstance(v, np.floating):
            return repr(float(v))
        if isinstance(v, np.integer):
            return str(int(v))
    except ImportError:  # pragma: no cover
        pass
    return str(v)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def code_version() -> str:
    try:
        from importlib.metadata import version

        base = version("mglab")
    except Exception:  # pragma: no cover
        base = "unknown"
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{base}+g{rev.stdout.strip()}"
    except Exception:
        pass
    return base


def _json_default(obj):
    try:
        import numpy as np

        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
    except ImportError:  # pragma: no cover
        pass
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, payload: dict) -> Path:
    """Plain JSON report, deterministic layout, no timestamps."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n",
        encoding="utf-8",
    )
    return path


def manifest_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_manifest(csv_path, payload: dict) -> Path:
    """Write the JSON sidecar for one artifact; returns the manifest path."""
    out = manifest_path(csv_path)
    body = dict(payload)
    body.setdefault("artifact", Path(csv_path).name)
    body.setdefault("code_version", code_version())
    out.write_text(
        json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n",
        encoding="utf-8",
    )
    return out
