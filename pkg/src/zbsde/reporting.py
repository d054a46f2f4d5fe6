"""Writers for run artifacts: per-experiment CSV tables, SVG figures and
summary.json.

Floats are written with 17 significant digits so reruns with the same seed
reproduce the CSV payloads byte for byte. SVG output fixes the hash salt and
drops the date so figures are reproducible too.
"""
from __future__ import annotations

import csv
import io
import json
import math
import platform
from pathlib import Path

import numpy as np

__all__ = ["format_value", "table_to_csv", "write_csv", "write_svg", "write_summary",
           "versions", "clean_json"]


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _columns(rows) -> list:
    cols: list = []
    seen = set()
    for r in rows:
        for k in r:
            if k not in seen:
                seen.add(k)
                cols.append(k)
    return cols


def table_to_csv(rows) -> str:
    """CSV text with a header row of the union of keys in first-seen order."""
    rows = list(rows)
    buf = io.StringIO()
    cols = _columns(rows)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([format_value(r.get(c)) for c in cols])
    return buf.getvalue()


def write_csv(path, rows) -> Path:
    path = Path(path)
    path.write_text(table_to_csv(rows))
    return path


def write_svg(path, figure) -> Path:
    """Render a runner Figure (title, axis labels, series) as an SVG line plot."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "zbsde", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for s in figure.series:
            ax.plot(s.x, s.y, s.style, label=s.label)
            if s.yerr is not None:
                y = np.asarray(s.y, float)
                e = np.asarray(s.yerr, float)
                ax.fill_between(s.x, y - e, y + e, alpha=0.2)
        ax.set_title(figure.title)
        ax.set_xlabel(figure.xlabel)
        ax.set_ylabel(figure.ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def clean_json(v):
    """Replace numpy scalars/arrays and non-finite floats by plain JSON values."""
    if isinstance(v, dict):
        return {str(k): clean_json(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [clean_json(x) for x in v]
    if isinstance(v, np.ndarray):
        return clean_json(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def versions() -> dict:
    import scipy

    from . import __version__, _backend
    return {"zbsde": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "kernel_backend": _backend.backend_name()}


def write_summary(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(clean_json(payload), indent=2, sort_keys=False) + "\n")
    return path
