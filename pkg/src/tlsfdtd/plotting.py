"""SVG figures from run CSVs.

Output is byte-reproducible: the SVG id salt is fixed and the date stamp
omitted, so the same CSV always yields the same file.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .runner import find_dips, read_csv  # noqa: E402

KINDS = ("timeseries", "spectrum", "sweep")
_STYLE = {"svg.hashsalt": "tlsfdtd", "svg.fonttype": "path", "figure.figsize": (6.0, 4.0),
          "axes.grid": True, "grid.alpha": 0.3}


class PlotError(ValueError):
    pass


def _need(header, names, kind):
    missing = [n for n in names if n not in header]
    if missing:
        raise PlotError(f"{kind} plot needs column(s) {missing}; CSV has {header}")


def _timeseries(ax, header, data, log):
    _need(header, ["t"], "timeseries")
    t = data[:, header.index("t")]
    cols = [h for h in header if h == "n_exc" or (h.startswith("P") and h[1:].isdigit())]
    if not cols:
        raise PlotError("timeseries plot needs n_exc or P<i> columns")
    for h in cols:
        y = data[:, header.index(h)]
        if log:
            y = np.where(y > 0, y, np.nan)
        ax.plot(t, y, label=h, lw=1.2)
    if log:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("excited population")
    ax.legend(fontsize=8)


def _spectrum(ax, header, data, log):
    if "omega" not in header:
        raise PlotError(f"spectrum plot needs an omega column; CSV has {header}")
    w = data[:, header.index("omega")]
    ycol = next((h for h in ("T", "sigma", "flux", "value") if h in header), None)
    if ycol is None:
        raise PlotError(f"spectrum plot needs one of T, sigma, flux; CSV has {header}")
    y = data[:, header.index(ycol)]
    ax.plot(w, y, lw=1.2, label=ycol)
    if w.size >= 3:
        dips = find_dips(w, y, prominence=0.05 * (np.nanmax(y) - np.nanmin(y) or 1.0))
        if dips.size:
            ax.plot(dips, np.interp(dips, w, y), "v", color="C3", label="dips")
    if log:
        ax.set_yscale("log")
    ax.set_xlabel("omega")
    ax.set_ylabel(ycol)
    ax.legend(fontsize=8)


def _sweep(ax, header, data, log):
    if len(header) < 2:
        raise PlotError("sweep plot needs a parameter column and at least one result column")
    x = data[:, 0]
    order = np.argsort(x)
    results = [h for h in header[1:] if not h.startswith("oracle_") and h != "passed"]
    if not results:
        raise PlotError("sweep plot found no result columns")
    for i, h in enumerate(results[:6]):
        ax.plot(x[order], data[order, header.index(h)], "o", color=f"C{i}", label=h)
        ref = "oracle_" + h
        if ref in header:
            ax.plot(x[order], data[order, header.index(ref)], "-", color=f"C{i}", lw=1.0,
                    label=f"{h} (oracle)")
    if log:
        ax.set_yscale("log")
    ax.set_xlabel(header[0])
    ax.legend(fontsize=7)


def plot_csv(csv_path, kind: str, out=None, log: bool = False, columns: list[str] | None = None) -> Path:
    """Render ``csv_path`` as ``kind`` and write an SVG (default: next to the CSV)."""
    if kind not in KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; choose from {KINDS}")
    header, data = read_csv(csv_path)
    if columns:
        _need(header, columns, kind)
        keep = [header[0]] + [c for c in columns if c != header[0]]
        if kind == "timeseries" and "t" not in keep:
            keep.insert(0, "t")
        idx = [header.index(c) for c in keep]
        header, data = keep, data[:, idx]
    out = Path(out) if out else Path(csv_path).with_suffix(".svg")
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        try:
            {"timeseries": _timeseries, "spectrum": _spectrum, "sweep": _sweep}[kind](ax, header, data, log)
            ax.set_title(Path(csv_path).stem, fontsize=9)
            fig.tight_layout()
            out.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return out
