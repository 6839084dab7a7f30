import logging
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import seaborn as sns  # noqa: E402

logger = logging.getLogger(__name__)

PLOT_KINDS = {
    "risk_vs_n": ("n", "risk_post", ["d", "s"]),
    "m_vs_n": ("n", "abs_m", ["d", "s"]),
    "landscape_scan": ("m", "loss", ["lam"]),
    "trace": ("step", "m", ["seed"])
}
LABELS = {
    "n": "sample size n",
    "risk_post": "excess risk (fine-tuned)",
    "abs_m": "|m|",
    "m": "m",
    "loss": "projected population loss",
    "step": "step"
}
SVG_RC = {
    "svg.fonttype": "none",
    "svg.hashsalt": "sindex",
    "path.simplify": False
}


def _curves(table, group_by):
    """(label, rows) pairs, one per distinct value of the grouping columns
    present in `table`."""
    present = [name for name in group_by if name in table.columns]
    if not present:
        return [("all", table)]
    curves = []
    for key, rows in table.groupby(present, sort=True):
        key = key if isinstance(key, tuple) else (key,)
        label = "-".join(f"{name}{value}" for name, value in zip(present,
                                                                   key))
        curves.append((label, rows))
    return curves


def _summarize(rows, x, y):
    """Aggregate rows when present, otherwise the mean over raw rows."""
    if "kind" in rows.columns:
        if (rows["kind"] == "aggregate").any():
            rows = rows[rows["kind"] == "aggregate"]
        else:
            rows = rows[rows["kind"] == "raw"]
    if "status" in rows.columns:
        rows = rows[rows["status"] == "ok"]
    spread = f"{y}_std"
    columns = [y, spread] if spread in rows.columns else [y]
    summary = rows.groupby(x, sort=True)[columns].mean()
    band = summary[spread] if spread in summary.columns else None
    return summary.index.to_numpy(), summary[y].to_numpy(), band


def emit_plots(table, kind, out_dir):
    """Write `<kind>.svg` to `out_dir` and return the written paths.

    An empty table writes nothing and returns an empty list.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"Unknown plot kind {kind!r}")
    x, y, group_by = PLOT_KINDS[kind]
    missing = [name for name in (x, y) if name not in table.columns]
    if missing:
        raise ValueError(f"{kind} plot needs columns {missing}")
    if table.empty:
        logger.info("nothing to plot for %s", kind)
        return []
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{kind}.svg")
    curves = _curves(table, group_by)
    palette = sns.color_palette("colorblind", len(curves))
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        for (label, rows), color in zip(curves, palette):
            xs, ys, band = _summarize(rows, x, y)
            ax.plot(xs, ys, marker="o", markersize=3, color=color,
                    label=label, gid=f"curve-{label}")
            if band is not None and band.notna().any():
                fill = ax.fill_between(xs, ys - band.to_numpy(),
                                       ys + band.to_numpy(), color=color,
                                       alpha=0.2)
                fill.set_gid(f"band-{label}")
        if x == "n":
            ax.set_xscale("log", base=2)
        if y == "risk_post" and np.all(table[y].dropna() > 0):
            ax.set_yscale("log")
        ax.set_xlabel(LABELS[x])
        ax.set_ylabel(LABELS[y])
        ax.legend(frameon=False)
        fig.savefig(path, format="svg", bbox_inches="tight",
                    metadata={"Date": None})
        plt.close(fig)
    return [path]
