"""Figures for a run, rendered to PNG files with the Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .junction import crossing_pairs, occupancy_window  # noqa: E402
from .metrics import DelaySample  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _series_plot(log, values, ylabel, path, hlines=()):
    fig, ax = plt.subplots(figsize=(7, 3.6))
    for i, vid in enumerate(log.ids):
        col = values[:, i]
        if np.all(np.isnan(col)):
            continue
        ax.plot(log.t, col, label=vid)
    for y in hlines:
        ax.axhline(y, color="red", lw=0.8, ls="--")
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def collision_figure(log, scenario, path: Path, reference=None) -> Path:
    """p_follow against p_lead for each pair, with the co-occupancy box shaded."""
    specs = dict(zip(scenario.ids, scenario.vehicles))
    pairs = list(crossing_pairs(scenario.crossing_order()))
    fig, axes = plt.subplots(1, len(pairs), figsize=(4 * len(pairs), 4), squeeze=False)
    for ax, (lead, follow) in zip(axes[0], pairs):
        xlo, xhi = occupancy_window(specs[lead], scenario.junction)
        ylo, yhi = occupancy_window(specs[follow], scenario.junction)
        ax.add_patch(plt.Rectangle((xlo, ylo), xhi - xlo, yhi - ylo, color="red", alpha=0.35))
        ax.plot(log.p[:, log.column(lead)], log.p[:, log.column(follow)], label="controlled")
        if reference is not None:
            ax.plot(reference.p[:, reference.column(lead)], reference.p[:, reference.column(follow)],
                    ls="-.", label="uncontrolled")
        ax.set_xlim(xlo - 40, xhi + 40)
        ax.set_ylim(ylo - 40, yhi + 40)
        ax.set_xlabel(f"p_{lead} [m]")
        ax.set_ylabel(f"p_{follow} [m]")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
    return _save(fig, path)


def delay_histograms(samples: Iterable[DelaySample], path: Path) -> Path | None:
    by_kind: dict[str, list[float]] = {}
    for s in samples:
        by_kind.setdefault(s.kind.value, []).append(s.value_ms)
    if not by_kind:
        return None
    kinds = sorted(by_kind)
    fig, axes = plt.subplots(1, len(kinds), figsize=(4 * len(kinds), 3.4), squeeze=False)
    for ax, kind in zip(axes[0], kinds):
        ax.hist(by_kind[kind], bins=40)
        ax.set_title(kind)
        ax.set_xlabel("ms")
    return _save(fig, path)


def render_run(out_dir: Path, log, scenario, delays=(), reference=None, lyapunov=None) -> list[Path]:
    """Write the standard figure set into ``out_dir/figures``; returns the files written."""
    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    ca = scenario.junction.ca_half_length_m
    written = [
        _series_plot(log, log.p, "p [m]", fig_dir / "positions.png", hlines=(-ca, ca)),
        _series_plot(log, log.v, "v [m/s]", fig_dir / "speeds.png"),
        _series_plot(log, log.u, "u [m/s^2]", fig_dir / "inputs.png"),
        _series_plot(log, log.e_pred, "e_pred [m]", fig_dir / "errors.png"),
        collision_figure(log, scenario, fig_dir / "collision.png", reference),
    ]
    if lyapunov is not None:
        t, v = lyapunov
        fig, ax = plt.subplots(figsize=(7, 3.6))
        ax.semilogy(t, np.maximum(v, 1e-12))
        ax.set_xlabel("t [s]")
        ax.set_ylabel("V")
        ax.grid(alpha=0.3)
        written.append(_save(fig, fig_dir / "lyapunov.png"))
    hist = delay_histograms(delays, fig_dir / "delays.png")
    if hist is not None:
        written.append(hist)
    return written
