"""Figure rendering for the CLI report path.

Reads the delimited outputs a run produced and drops PNG figures next to
them. Everything goes through the Agg backend so report generation works in
headless environments.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

CHANCE = 0.10
_FIGSIZE = (6.0, 3.8)
_DPI = 150


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            rows.append(next(csv.reader([line])))
    return rows[0], rows[1:]


def render_effectiveness(csv_path: Path, out_path: Path) -> None:
    header, rows = _read_csv(csv_path)
    trials = [int(r[0]) for r in rows]
    accs = [float(r[1]) for r in rows]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(trials, accs, marker="o", ms=3, lw=0.8, label="extracted accuracy")
    ax.axhline(CHANCE, color="crimson", ls="--", lw=1, label="chance (10 classes)")
    mean = sum(accs) / len(accs)
    ax.axhline(mean, color="gray", ls=":", lw=1, label=f"mean = {mean:.3f}")
    ax.set_xlabel("trial")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)


def render_dnc_steps(csv_path: Path, out_path: Path) -> None:
    header, rows = _read_csv(csv_path)
    steps = [float(r[0]) for r in rows]
    correct = [float(r[1]) for r in rows]
    wrong = [float(r[2]) for r in rows]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(steps, correct, marker="o", ms=3, label="correct guess")
    ax.plot(steps, wrong, marker="s", ms=3, label="wrong guess")
    ax.axhline(CHANCE, color="crimson", ls="--", lw=1)
    ax.set_xlabel("attack step")
    ax.set_ylabel("extracted accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)


def render_overhead(csv_path: Path, out_path: Path, x_column: str = "x=16") -> None:
    """Ratio versus tile count for every scheme, at one activated-lines column."""
    header, rows = _read_csv(csv_path)
    col = header.index(x_column)
    precisions = sorted({int(r[0]) for r in rows})
    p = precisions[0]
    series: dict[str, list[tuple[int, float]]] = {}
    for r in rows:
        if int(r[0]) != p or r[col] == "-":
            continue
        series.setdefault(r[2], []).append((int(r[1]), float(r[col])))
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for scheme, points in series.items():
        points.sort()
        ax.plot([t for t, _ in points], [v for _, v in points], marker="o", ms=3,
                label=scheme)
    ax.set_xlabel("tiles")
    ax.set_ylabel(f"ratio vs config1 ({x_column}, p={p})")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(out_path, dpi=_DPI)
    plt.close(fig)


def render_all(out_dir: Path) -> list[Path]:
    """Render every known artifact present in ``out_dir``; returns the PNGs."""
    produced = []
    jobs = [
        ("effectiveness.csv", "effectiveness.png", render_effectiveness),
        ("attack_steps.csv", "attack_steps.png", render_dnc_steps),
        ("overhead_area.csv", "overhead_area.png", render_overhead),
        ("overhead_power.csv", "overhead_power.png", render_overhead),
    ]
    for src, dst, renderer in jobs:
        src_path = out_dir / src
        if src_path.exists():
            dst_path = out_dir / dst
            renderer(src_path, dst_path)
            produced.append(dst_path)
    return produced
