"""Report figures written next to the CLI's CSV output (Agg backend, no display)."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def figure_path(csv_path):
    return Path(csv_path).with_suffix(".png")


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_curve(metrics, path):
    """Training cross-entropy and heldout frame accuracy against step."""
    steps = [m.step for m in metrics]
    fig, ax_ce = plt.subplots(figsize=(6.4, 4.0))
    ax_ce.plot(steps, [m.train_ce for m in metrics], color="tab:blue", marker="o", ms=3)
    ax_ce.set_xlabel("step")
    ax_ce.set_ylabel("train cross-entropy", color="tab:blue")
    ax_acc = ax_ce.twinx()
    ax_acc.plot(steps, [m.heldout_frame_acc for m in metrics], color="tab:orange", marker="s", ms=3)
    ax_acc.set_ylabel("heldout frame accuracy", color="tab:orange")
    ax_acc.set_ylim(0, 1)
    ax_ce.grid(alpha=0.3)
    return _save(fig, path)


def plot_param_counts(rows, total, dense_total, path, title=None):
    """Horizontal bars of per-matrix parameter counts, coloured by kind."""
    colours = {"dense": "tab:gray", "lowrank": "tab:green", "hashed": "tab:purple",
               "toeplitz": "tab:blue", "bias": "tab:orange", "peephole": "tab:red"}
    names = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, max(3.0, 0.16 * len(rows) + 1.2)))
    ax.barh(range(len(rows)), [r[3] for r in rows], color=[colours.get(r[1], "black") for r in rows])
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(names, fontsize=6)
    ax.invert_yaxis()
    ax.set_xscale("log")
    ax.set_xlabel("parameters")
    heading = f"total {total:,} ({total / dense_total:.3f} of dense {dense_total:,})"
    ax.set_title(heading if title is None else f"{title}\n{heading}", fontsize=9)
    return _save(fig, path)


def plot_bench(rows, path):
    """Median time against displacement rank, one panel per size; dense shown flat."""
    sizes = sorted({r["n"] for r in rows})
    fig, axes = plt.subplots(1, len(sizes), figsize=(4.8 * len(sizes), 3.8), squeeze=False)
    for ax, n in zip(axes[0], sizes):
        for op, marker in (("matvec", "o"), ("step", "s")):
            toep = sorted((r["rank"], r["median_s"]) for r in rows
                          if r["n"] == n and r["op"] == op and r["kind"] == "toeplitz")
            if toep:
                ax.plot(*zip(*toep), marker=marker, label=f"toeplitz {op}")
            for r in rows:
                if r["n"] == n and r["op"] == op and r["kind"] == "dense":
                    ax.axhline(r["median_s"], ls="--", color="gray" if op == "matvec" else "black",
                               label=f"dense {op}")
        ax.set_yscale("log")
        ax.set_xlabel("displacement rank")
        ax.set_ylabel("median seconds")
        ax.set_title(f"n = {n}")
        ax.legend(fontsize=7)
    return _save(fig, path)
