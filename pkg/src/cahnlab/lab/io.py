"""CSV and manifest writers shared by the CLI and the sweep."""

from __future__ import annotations

import csv
import io
import subprocess
from pathlib import Path

from .. import __version__


def fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path: str | Path, header, rows) -> None:
    Path(path).write_text(csv_text(header, rows), encoding="utf-8")


def version_string() -> str:
    """git-describe of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(path: str | Path, command: str, argv, config_echo: str, defaulted, wall_time: float) -> None:
    lines = [
        f"command: {command}",
        f"argv: {' '.join(argv)}",
        f"version: {version_string()}",
        f"wall_time_seconds: {wall_time:.3f}",
        "conventions: experimental defaults (initial data, horizon, cadence, solver choices) are",
        "  artifact conventions, not values prescribed by the underlying theory",
        "defaulted_keys: " + (", ".join(defaulted) if defaulted else "(none)"),
        "config:",
    ]
    lines += ["  " + ln for ln in config_echo.splitlines()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
