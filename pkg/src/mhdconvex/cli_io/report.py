"""Machine-readable verification reports (JSON and CSV)."""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLUMNS = ("check", "status", "measured", "reference", "tolerance", "tag")


def _num(x):
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


@dataclass
class Report:
    command: str
    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def add(self, check, status, measured=None, reference=None, tolerance=None, tag="DERIVED"):
        if any(r["check"] == check for r in self.rows):
            raise ValueError(f"duplicate report row {check}")
        if status not in ("pass", "fail", "info"):
            raise ValueError(f"bad status {status}")
        self.rows.append({"check": check, "status": status, "measured": _num(measured),
                          "reference": _num(reference), "tolerance": _num(tolerance), "tag": tag})

    def bound(self, check, measured, tolerance, reference=0.0, tag="DERIVED"):
        """Pass iff |measured - reference| <= tolerance."""
        ok = bool(np.isfinite(measured) and abs(measured - reference) <= tolerance)
        self.add(check, "pass" if ok else "fail", measured, reference, tolerance, tag)
        return ok

    def flag(self, check, ok, measured=None, reference=None, tolerance=None, tag="TRIVIAL"):
        self.add(check, "pass" if ok else "fail", measured, reference, tolerance, tag)
        return bool(ok)

    def info(self, check, measured, reference=None, tag="DERIVED"):
        self.add(check, "info", measured, reference, None, tag)

    @property
    def passed(self) -> bool:
        return all(r["status"] != "fail" for r in self.rows)

    def failures(self):
        return [r["check"] for r in self.rows if r["status"] == "fail"]

    def to_json(self):
        return {"command": self.command, "passed": self.passed, "meta": self.meta, "rows": self.rows}

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jp = out / f"{self.command}_report.json"
        cp = out / f"{self.command}_report.csv"
        jp.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        with cp.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: ("" if r[k] is None else r[k]) for k in COLUMNS})
        return jp, cp


def environment(grid=None, params=None, seed=None):
    import scipy

    from .. import __version__
    return {"grid": grid, "params": params, "seed": seed, "versions": {
        "mhdconvex": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
        "python": platform.python_version()}}
