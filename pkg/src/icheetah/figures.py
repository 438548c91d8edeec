"""Benchmark figures, rendered headlessly to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_STYLE = {
    "none": dict(color="#777777", marker="o", linestyle="--"),
    "radix": dict(color="#1f77b4", marker="s", linestyle="-"),
    "scan": dict(color="#2ca02c", marker="^", linestyle="-"),
    "full": dict(color="#d62728", marker="D", linestyle="-"),
}


def _by_strategy(rows):
    groups: dict[str, list] = {}
    for r in rows:
        groups.setdefault(r.strategy, []).append(r)
    for rs in groups.values():
        rs.sort(key=lambda r: r.size)
    return groups


def render_bench_figures(rows, out_dir: str | Path) -> dict[str, Path]:
    """Encryption-time and speedup plots; returns {name: path}."""
    out = Path(out_dir)
    groups = _by_strategy(rows)
    paths = {}

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for strategy, rs in groups.items():
        ax.plot(
            [r.size for r in rs],
            [r.median_ms for r in rs],
            label=strategy,
            **_STYLE.get(strategy, {}),
        )
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("image side (pixels)")
    ax.set_ylabel("median encryption time (ms)")
    ax.set_title("Image encryption time by caching strategy")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    p = out / "bench_times.png"
    fig.tight_layout()
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths["times_figure"] = p

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for strategy, rs in groups.items():
        if strategy == "none":
            continue
        ax.plot(
            [r.size for r in rs],
            [r.speedup for r in rs],
            label=strategy,
            **_STYLE.get(strategy, {}),
        )
    ax.axhline(1.0, color="black", linewidth=0.8, alpha=0.5)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("image side (pixels)")
    ax.set_ylabel("speedup over fresh encryption")
    ax.set_title("Caching speedup by image size")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    p = out / "bench_speedup.png"
    fig.tight_layout()
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths["speedup_figure"] = p
    return paths
