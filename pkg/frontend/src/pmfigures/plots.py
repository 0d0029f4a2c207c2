"""Figure renderers.

Read-only consumers of the sweep artifacts: slopes shown on the scaling plot
are re-rendered from summary.json, never refitted here.  Rendering is pinned
for byte-identical regeneration: fixed style, Agg backend, stripped metadata.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import TooFewRows, read_field_slice, read_phase, read_report, read_summary

matplotlib.rcParams.update({
    "figure.figsize": (7.0, 4.6),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "pmfigures",
})

_SAVE_META = {"png": {"Software": "pmfigures"}, "svg": {"Date": None}}


def _save(fig, path: str, fmt: str):
    fig.savefig(path, format=fmt, metadata=_SAVE_META.get(fmt, {}))
    plt.close(fig)
    return path


def plot_norm_scaling(report_path: str, summary_path: str, out_path: str,
                      fmt: str = "png") -> dict:
    """Log-log norms and ratio with the fitted slope and both bracket lines."""
    rep = read_report(report_path)
    if len(rep["lambda"]) < 3:
        raise TooFewRows(f"{report_path}: need at least 3 sweep rows, "
                         f"got {len(rep['lambda'])}")
    summary = read_summary(summary_path)
    lam = rep["lambda"]
    fig, ax = plt.subplots()
    series = [("norm_u_minusN", "o-", "|u| at order -N"),
              ("norm_Pu_nu", "s-", "|P*u| at order nu"),
              ("norm_u_minusNn", "d-", "|u| at order -N-n"),
              ("norm_Au0", "^-", "|Au| at order 0"),
              ("ratio", "k*-", "stress ratio")]
    for col, style, label in series:
        ax.loglog(lam, np.maximum(rep[col], 1e-300), style, label=label, ms=4)

    params = summary["params"]
    N, n = params["N"], params["n"]
    anchor = rep["norm_u_minusN"][0]
    ax.loglog(lam, anchor * (lam / lam[0]) ** (-N), "--", color="gray", lw=1,
              label=f"slope {-N:g} bracket")
    ax.loglog(lam, anchor * (lam / lam[0]) ** (-N - n / 2), ":", color="gray", lw=1,
              label=f"slope {-N - n / 2:g} bracket")
    slope = summary.get("slope")
    annotated = None
    if slope is not None:
        annotated = float(slope)
        ax.annotate(f"ratio slope {annotated:.6g}\nverdict {summary['verdict']}",
                    xy=(lam[-1], rep["ratio"][-1]), xytext=(0.55, 0.9),
                    textcoords="axes fraction", fontsize=9,
                    arrowprops={"arrowstyle": "->", "lw": 0.8})
    ax.set_xlabel("lambda")
    ax.set_ylabel("norm value")
    ax.set_title(f"norm scaling: {summary['model']}")
    ax.legend(fontsize=7, loc="lower left")
    _save(fig, out_path, fmt)
    return {"path": out_path, "annotated_slope": annotated}


def plot_phase(phase_path: str, out_path: str, fmt: str = "png",
               anchor: float | None = None, usable: tuple | None = None) -> dict:
    """Im w0 profile with anchor/usable overlay plus Hessian positivity bands."""
    cols = read_phase(phase_path)
    t = cols["t"]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7.0, 5.4))
    ax1.plot(t, cols["im_w0"], "b-", lw=1.2, label="Im w0")
    ax1.axhline(0.0, color="k", lw=0.6)
    if anchor is not None:
        ax1.axvline(anchor, color="r", ls="--", lw=0.8, label="anchor")
    if usable is not None:
        ax1.axvspan(usable[0], usable[1], color="green", alpha=0.12,
                    label="usable window")
    ax1.set_ylabel("Im w0")
    ax1.legend(fontsize=7)
    ax2.semilogy(t, np.maximum(cols["eigmin_im_w20"], 1e-300), label="min eig Im W[2,0]")
    ax2.semilogy(t, np.maximum(cols["eigmin_im_w02"], 1e-300), label="min eig Im W[0,2]")
    ax2.set_xlabel("t")
    ax2.set_ylabel("positivity")
    ax2.legend(fontsize=7)
    fig.suptitle("phase profile")
    _save(fig, out_path, fmt)
    return {"path": out_path,
            "min_im_w0": float(np.min(cols["im_w0"])),
            "positivity_ok": bool(np.all(cols["eigmin_im_w20"] > 0)
                                  and np.all(cols["eigmin_im_w02"] > 0))}


def plot_field_slice(slice_path: str, out_path: str, fmt: str = "png",
                     phase_path: str | None = None) -> dict:
    """|u| heat map on the (t, x) plane at the y-center with the base-curve spine."""
    t, x, grid = read_field_slice(slice_path)
    fig, ax = plt.subplots()
    mesh = ax.pcolormesh(x, t, grid, shading="auto", cmap="viridis", rasterized=False)
    fig.colorbar(mesh, ax=ax, label="|u|")
    if phase_path is not None:
        cols = read_phase(phase_path)
        name = cols["_x0_names"][0]
        ax.plot(cols[name], cols["t"], "w--", lw=0.9, label="base curve x0(t)")
        ax.legend(fontsize=7, loc="upper right")
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title("field magnitude slice at the y-center")
    ax.set_xlim(x[0], x[-1])
    ax.set_ylim(t[0], t[-1])
    _save(fig, out_path, fmt)
    return {"path": out_path, "peak": float(grid.max())}
