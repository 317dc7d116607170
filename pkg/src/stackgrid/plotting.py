"""Optional PNG rendering of report series and sweep tables.

matplotlib is imported lazily with the non-interactive Agg backend, so the
rest of the package works without it.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import atomic_write


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("--plot needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> Path:
    import io

    buf = io.BytesIO()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(buf, format="png", dpi=120, metadata={"Software": None})
    atomic_write(path, buf.getvalue())
    return Path(path)


def plot_report(doc: dict, path, trace_path=None) -> list[Path]:
    """Supply/demand/price panels for a solve or predict report.

    A second figure with the leader-cost trace is written when the report
    carries one (numeric solves) and ``trace_path`` is given.
    """
    plt = _pyplot()
    w = np.array(doc["inputs"]["scenario"]["w"])
    r = np.array(doc["inputs"]["scenario"]["r"])
    agg = np.array(doc["aggregate"])
    c = np.array(doc["controllable"])
    price = np.array(doc["prices"])
    t = np.arange(1, w.size + 1)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.step(t, w, where="mid", label="renewable w")
    ax1.step(t, r, where="mid", label="regular load r")
    ax1.step(t, agg, where="mid", label="flexible demand")
    ax1.step(t, c, where="mid", label="controllable c", linestyle="--")
    ax1.set_ylabel("energy per slot")
    ax1.legend(loc="best", fontsize="small")
    ax1.set_title(f"method: {doc['method']}, leader cost {doc['leader_cost']:.4g}")
    ax2.step(t, price, where="mid", color="k")
    ax2.set_ylabel("price")
    ax2.set_xlabel("slot")
    fig.tight_layout()
    out = [_save(fig, path)]
    plt.close(fig)

    costs = doc.get("extra", {}).get("trace_costs")
    if trace_path is not None and costs:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(np.arange(len(costs)), costs, label="leader cost")
        target = doc["extra"].get("target_cost")
        if target is not None:
            ax.axhline(target, color="k", linestyle=":", label="optimum")
        ax.set_xlabel("outer iteration")
        ax.set_ylabel("leader cost")
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        out.append(_save(fig, trace_path))
        plt.close(fig)
    return out


def plot_sweep(rows, path) -> Path:
    """Variance and leader cost against the slot count."""
    plt = _pyplot()
    T = [row.T for row in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(T, [row.var for row in rows], marker="o", label="Var(w - r)")
    ax.plot(T, [row.cost for row in rows], marker="s", label="leader cost")
    ax.set_xlabel("slots per day T")
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    out = _save(fig, path)
    plt.close(fig)
    return out
