"""Per-iteration variance series and report figures.

Figures are rendered with the non-interactive Agg backend and written to
files; nothing here opens a window.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SERIES_COLUMNS = ("iteration", "action", "doe_size", "population_size", "pf",
                  "v_x", "v_x_lower", "v_x_upper", "v_gn", "v_gn_lower", "v_gn_upper", "n_t")


def variance_series(record) -> list[dict]:
    """Rows of the V_X / V_Gn history for every entry that carries variances."""
    rows = []
    for e in record.entries:
        v = e.variances
        if not v or "v_x" not in v or "v_gn" not in v:
            continue
        rows.append({
            "iteration": e.iteration, "action": e.action, "doe_size": e.doe_size,
            "population_size": e.population_size, "pf": e.pf,
            "v_x": v["v_x"]["point"], "v_x_lower": v["v_x"]["lower"], "v_x_upper": v["v_x"]["upper"],
            "v_gn": v["v_gn"]["point"], "v_gn_lower": v["v_gn"]["lower"], "v_gn_upper": v["v_gn"]["upper"],
            "n_t": v.get("n_t", ""),
        })
    return rows


def write_series_csv(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SERIES_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def _positive(a):
    a = np.asarray(a, dtype=float)
    return np.where(a > 0, a, np.nan)


def plot_variance_series(rows, path, title: str = "") -> Path | None:
    """Log-scale V_X and V_Gn with their interval bands against the DoE size.

    Returns None when there is nothing to draw.
    """
    if not rows:
        return None
    it = np.arange(len(rows))
    fig, (ax, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for key, label, color in (("v_x", "V_X (population)", "tab:blue"), ("v_gn", "V_Gn (GP)", "tab:red")):
        point = _positive([r[key] for r in rows])
        ax.plot(it, point, marker=".", color=color, label=label)
        ax.fill_between(it, _positive([r[key + "_lower"] for r in rows]),
                        _positive([r[key + "_upper"] for r in rows]), color=color, alpha=0.2)
    ax.set_yscale("log")
    ax.set_ylabel("variance")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    ax2.plot(it, [r["pf"] for r in rows], color="k", marker=".")
    ax2.set_ylabel("estimated Pf")
    ax2.set_xlabel("iteration")
    ax2.grid(True, alpha=0.3)
    ticks = it[:: max(1, len(it) // 10)]
    ax2.set_xticks(ticks)
    ax2.set_xticklabels([f"{i}\n(n={rows[i]['doe_size']})" for i in ticks], fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_report(report, directory) -> list[Path]:
    """Histograms of the per-run estimates and evaluation counts."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    recs = [r for r in report.records if r.converged and r.failure is None]
    if not recs:
        return []
    pf = np.array([r.pf for r in recs], dtype=float)
    calls = np.array([r.n_call for r in recs], dtype=float)
    name = f"{report.config.problem} / {report.config.method}"
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    a1.hist(pf, bins=min(20, max(5, len(pf) // 2)), color="tab:blue", alpha=0.8)
    if report.reference:
        a1.axvline(report.reference["pf"], color="k", ls="--", label="reference")
        a1.legend()
    a1.axvline(pf.mean(), color="tab:red", label="mean")
    a1.set_xlabel("estimated Pf")
    a1.set_ylabel("runs")
    a2.hist(calls, bins=min(20, max(5, len(calls) // 2)), color="tab:green", alpha=0.8)
    a2.set_xlabel("N_call")
    fig.suptitle(name)
    fig.tight_layout()
    out = directory / "summary.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]
