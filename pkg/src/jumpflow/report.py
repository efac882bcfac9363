"""Result containers and writers for CSV tables, long-format series and the run manifest."""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Table:
    columns: list
    rows: list


@dataclass
class Results:
    kind: str
    tables: dict = field(default_factory=dict)
    series: list = field(default_factory=list)  # (series, x, y)
    assertions: list = field(default_factory=list)  # (name, passed, detail)
    summary: dict = field(default_factory=dict)

    def add_table(self, name, columns, rows):
        self.tables[name] = Table(list(columns), [tuple(r) for r in rows])

    def add_series(self, name, xs, ys):
        self.series.extend((name, float(x), float(y)) for x, y in zip(xs, ys))

    def check(self, name, passed, detail=""):
        self.assertions.append((name, bool(passed), detail))

    @property
    def passed(self):
        return all(ok for _, ok, _ in self.assertions)

    def failures(self):
        return [(n, d) for n, ok, d in self.assertions if not ok]


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def versions():
    import scipy
    import yaml

    from . import __version__
    return {"jumpflow": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def emit_report(results, out_dir, config=None, figures=False):
    """Write tables, series, assertions and manifest to ``out_dir``; returns written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    written = []
    for name, table in results.tables.items():
        p = out / f"{name}.csv"
        _write_csv(p, table.columns, table.rows)
        written.append(p)
    if results.series:
        p = out / "series.csv"
        _write_csv(p, ["series", "x", "y"], results.series)
        written.append(p)
    p = out / "assertions.csv"
    _write_csv(p, ["assertion", "pass", "detail"], results.assertions)
    written.append(p)
    manifest = {
        "kind": results.kind,
        "seed": None if config is None else config.seed,
        "config_file": None if config is None else config.source,
        "config": None if config is None else config.data,
        "versions": versions(),
        "summary": {k: _jsonable(v) for k, v in results.summary.items()},
        "assertions": [{"name": n, "pass": ok, "detail": d} for n, ok, d in results.assertions],
        "status": "pass" if results.passed else "fail",
        "files": sorted(x.name for x in written),
    }
    p = out / "manifest.json"
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(p)
    if figures and results.series:
        written.extend(_figures(results, out / "figures"))
    return written


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def _figures(results, fig_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for name, _, _ in results.series:
        if name not in names:
            names.append(name)
    out = []
    for name in names:
        xs = [x for n, x, _ in results.series if n == name]
        ys = [y for n, _, y in results.series if n == name]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(xs, ys, lw=1.2)
        ax.set_title(name)
        ax.set_xlabel("t")
        fig.tight_layout()
        p = fig_dir / f"{name}.png"
        fig.savefig(p, dpi=110)
        plt.close(fig)
        out.append(p)
    return out
