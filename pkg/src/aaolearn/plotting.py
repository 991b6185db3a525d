"""
Figures for a finished run, rendered from its ``plotdata/`` and
``trace.csv`` files into ``figures/`` (PNG, non-interactive backend).
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _read_table(path: Path) -> tuple[list, np.ndarray]:
    with open(path) as fh:
        header = next(csv.reader(fh))
    data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    return header, data


def plot_nonlinearity(path: Path, out: Path) -> None:
    _, d = _read_table(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(d[:, 0], d[:, 1], label="ground truth")
    ax.plot(d[:, 0], d[:, 3], "--", label="recovered (offset corrected)")
    ax.set_xlabel("u")
    ax.set_ylabel("f(u)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_state_slices(path: Path, out: Path) -> None:
    header, d = _read_table(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for j in range(1, len(header), 2):
        line, = ax.plot(d[:, 0], d[:, j], lw=1)
        ax.plot(d[:, 0], d[:, j + 1], "--", color=line.get_color(), lw=1)
    ax.set_xlabel("x")
    ax.set_ylabel("u (solid: truth, dashed: recovered)")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_parameter(path: Path, out: Path) -> None:
    header, d = _read_table(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for j in range(1, len(header), 2):
        line, = ax.plot(d[:, 0], d[:, j], label=header[j])
        ax.plot(d[:, 0], d[:, j + 1], "--", color=line.get_color(), label=header[j + 1])
    ax.set_xlabel("x")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_trace(path: Path, out: Path) -> None:
    header, d = _read_table(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in ("objective", "pde_residual_W", "data_misfit_Y"):
        j = header.index(name)
        ax.semilogy(d[:, 0], np.maximum(d[:, j], 1e-300), label=name)
    ax.set_xlabel("iteration")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def render_figures(run_dir) -> list:
    """Render every figure whose source table exists; returns the PNG paths."""
    run_dir = Path(run_dir)
    pdir = run_dir / "plotdata"
    fdir = run_dir / "figures"
    fdir.mkdir(exist_ok=True)
    written = []
    jobs = [(pdir / "nonlinearity.csv", plot_nonlinearity, "nonlinearity.png"),
            (pdir / "parameter.csv", plot_parameter, "parameter.png"),
            (run_dir / "trace.csv", plot_trace, "trace.png")]
    jobs += [(p, plot_state_slices, p.stem + ".png") for p in sorted(pdir.glob("state_slices_*.csv"))]
    for src, fn, name in jobs:
        if src.exists():
            fn(src, fdir / name)
            written.append(fdir / name)
    return written
