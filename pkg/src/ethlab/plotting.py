"""Static SVG figures built from report payloads.

Every function takes the parsed JSON of a report and returns a matplotlib
Figure; :func:`save_svg` writes it with a fixed hash salt and no date so
identical inputs give identical bytes.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "svg.hashsalt": "ethlab",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (5.0, 3.4),
})


class MalformedReport(ValueError):
    pass


def _require(report, *keys):
    missing = [k for k in keys if k not in report]
    if missing:
        raise MalformedReport(f"report lacks {missing}")


def _no_data(ax):
    ax.text(0.5, 0.5, "no data", transform=ax.transAxes, ha="center", va="center",
            color="0.4", gid="no-data")


def save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches=None)
    plt.close(fig)
    return path


def bound_line(record):
    """``8 ||H_C||^2 / delta_B^2 + 4 d_S eps`` from a record's stored inputs."""
    inp = record["inputs"]
    return (8 * inp["norm_HC"] ** 2 / inp["delta_B"] ** 2
            + 4 * inp["d_S"] * inp["eps_product"])


def eigenstate_scatter(report):
    """``||tau_n - omega||_1`` against ``E_n``, one point per eigenstate record,
    with the per-cell bound drawn over that cell's window."""
    _require(report, "records")
    recs = [r for r in report["records"] if r.get("name") == "eq8"]
    fig, ax = plt.subplots()
    ax.set_xlabel("$E_n$")
    ax.set_ylabel(r"$\|\tau_n - \omega\|_1$")
    if not recs:
        _no_data(ax)
        return fig
    try:
        x = np.array([r["inputs"]["E_n"] for r in recs], dtype=float)
        y = np.array([r["lhs"] for r in recs], dtype=float)
        lines = {}
        for r in recs:
            inp = r["inputs"]
            lines[(inp["E"], inp["delta_B"])] = bound_line(r)
    except (KeyError, TypeError) as exc:
        raise MalformedReport(f"bad eigenstate record: {exc}") from exc
    ax.scatter(x, y, s=6, color="C0", label="eigenstates", gid="eigenstates", zorder=3)
    for k, ((E, dB), rhs) in enumerate(sorted(lines.items())):
        ax.hlines(rhs, E - dB / 2, E + dB / 2, color="C3", lw=1,
                  label="bound" if k == 0 else None, gid=f"bound-{k}")
    ax.set_yscale("log")
    ax.legend(loc="best", fontsize=7)
    return fig


def eth_curve(report):
    """Measured ETH precision against the scale, with the prediction if present."""
    _require(report, "curve")
    fig, ax = plt.subplots()
    ax.set_xlabel(r"$\Delta$")
    ax.set_ylabel(r"$\epsilon_{\rm ETH}$")
    pts = [p for p in report["curve"] if p[1] is not None]
    if not pts:
        _no_data(ax)
        return fig
    d, e = np.array(pts, dtype=float).T
    ax.plot(d, e, "o-", ms=3, label="measured", gid="measured")
    pred = report.get("eth_pred")
    if pred is not None:
        ax.axhline(float(pred), color="C3", ls="--", lw=1, label="predicted", gid="predicted")
    if report.get("delta") is not None:
        ax.axvline(float(report["delta"]), color="0.5", lw=0.8)
    ax.set_ylim(bottom=0)
    ax.legend(loc="best", fontsize=7)
    return fig


def thermo_figure(report):
    """``beta(E)`` and ``C(E)`` with the valid range shaded."""
    _require(report, "profile")
    rows = report["profile"]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 4.6))
    ax1.set_ylabel(r"$\beta$")
    ax2.set_ylabel("$C$")
    ax2.set_xlabel("$E$")
    if not rows:
        _no_data(ax1)
        _no_data(ax2)
        return fig
    try:
        E = np.array([r["E"] for r in rows], dtype=float)
        beta = np.array([r["beta"] for r in rows], dtype=float)
        C = np.array([r["C"] for r in rows], dtype=float)
        ok = np.array([r["in_valid_range"] for r in rows], dtype=bool)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedReport(f"bad profile row: {exc}") from exc
    ax1.plot(E, beta, lw=1, gid="beta")
    C_shown = np.where(ok, C, np.nan)
    ax2.plot(E, C_shown, lw=1, color="C1", gid="heat-capacity")
    if ok.any():
        for ax in (ax1, ax2):
            ax.axvspan(E[ok][0], E[ok][-1], color="C2", alpha=0.08, lw=0)
    else:
        _no_data(ax2)
    fig.tight_layout()
    return fig
