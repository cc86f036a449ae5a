"""Run artifacts: cost log, boundary samples, field dumps, SVG contour plots
and the summary JSON."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

ITERATION_COLUMNS = ("k", "sub_step", "t1", "t2", "t3", "J", "lambda", "accepted")


def fmt(x):
    return "%.6g" % x


def write_boundary(path, comp):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "z1", "z2", "dz1", "dz2"))
        for row in comp.to_rows():
            w.writerow([repr(float(v)) for v in row])


def read_boundary(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def svg_contours(bounds, polylines, E=None, title=""):
    """SVG of the box D, closed polylines and optionally the disk E."""
    xmin, xmax, ymin, ymax = bounds
    w, h = xmax - xmin, ymax - ymin
    sw = 0.004 * max(w, h)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{xmin!r} {-ymax!r} {w!r} {h!r}" '
        f'width="480" height="{480 * h / w:.0f}">',
        f"<title>{title}</title>",
        '<g transform="scale(1,-1)">',
        f'<rect class="frame" x="{xmin!r}" y="{ymin!r}" width="{w!r}" height="{h!r}" '
        f'fill="none" stroke="black" stroke-width="{sw!r}"/>',
    ]
    if E is not None:
        out.append(f'<circle class="E" cx="{E.center[0]!r}" cy="{E.center[1]!r}" r="{E.radius!r}" '
                   f'fill="none" stroke="red" stroke-dasharray="{3 * sw!r}" stroke-width="{sw!r}"/>')
    for pts in polylines:
        coords = " ".join(f"{x:.5f},{y:.5f}" for x, y in pts)
        out.append(f'<polyline class="contour" points="{coords}" fill="none" stroke="blue" '
                   f'stroke-width="{sw!r}"/>')
    out += ["</g>", "</svg>"]
    return "\n".join(out) + "\n"


class RunWriter:
    """Streams artifacts of an optimization run into a directory."""

    def __init__(self, directory, config, space, problem):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "candidates").mkdir(exist_ok=True)
        self.space = space
        self.problem = problem
        self.failed = []
        (self.dir / "config.ini").write_text(config.to_ini())
        space.mesh.export_csv(self.dir / "mesh")
        self._log = open(self.dir / "iterations.csv", "w", newline="")
        self._csv = csv.writer(self._log)
        self._csv.writerow(ITERATION_COLUMNS)
        self.catalog = []   # (label, k, sub_step, lambda, accepted, file)

    def _row(self, k, sub, cost, lam, accepted):
        self._csv.writerow([k, sub, fmt(cost.t1), fmt(cost.t2), fmt(cost.t3), fmt(cost.total),
                            fmt(lam), int(accepted)])
        self._log.flush()

    def __call__(self, kind, obj):
        if kind == "state":
            self.write_state(obj)
        elif kind == "candidates":
            self.write_candidates(obj)

    def write_state(self, st):
        k = st.k
        if k == 0:
            self._row(0, -1, st.cost, 0.0, True)
        for c, comp in enumerate(st.trace):
            write_boundary(self.dir / f"boundary_{k}_{c}.csv", comp)
        for name, fld in (("g", st.g.field), ("u", st.u), ("y", st.y)):
            fld.export_csv(self.dir / f"{name}_{k}.csv")
        svg = svg_contours(self.space.mesh.bounds.as_tuple(), [c.z for c in st.trace],
                           self.problem.E, title=f"k={k} J={fmt(st.cost.total)}")
        (self.dir / f"iter_{k}.svg").write_text(svg)
        self.catalog.append({"label": f"k={k}", "k": k, "sub_step": -1, "lambda": st.lam,
                             "accepted": True, "file": f"g_{k}.csv"})

    def write_candidates(self, cands):
        for c in cands:
            if c.cost is None:
                self.failed.append({"k": c.k + 1, "sub_step": c.sub_step, "lambda": c.lam, "error": c.error})
                continue
            self._row(c.k + 1, c.sub_step, c.cost, c.lam, c.accepted)
            if c.state is not None and not c.accepted:
                name = f"candidates/g_{c.k + 1}_{c.sub_step}.csv"
                c.state.g.field.export_csv(self.dir / name)
                self.catalog.append({"label": f"k={c.k + 1} i={c.sub_step}", "k": c.k + 1,
                                     "sub_step": c.sub_step, "lambda": c.lam, "accepted": False,
                                     "file": name})

    def finish(self, history=None, error=None):
        self._log.close()
        summary = history.summary() if history is not None else {"iterations": None,
                                                                  "final_cost": None,
                                                                  "stop_reason": "error",
                                                                  "per_iteration": []}
        summary["failed_candidates"] = self.failed
        summary["configurations"] = self._ordered_catalog()
        if error is not None:
            summary["error"] = error
        (self.dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        return summary

    def _ordered_catalog(self):
        # chronological: state k, then the improving candidates leading to k+1
        def key(e):
            return (e["k"] - (0 if e["accepted"] else 1), 0 if e["accepted"] else 1, e["sub_step"])

        return sorted(self.catalog, key=key)
