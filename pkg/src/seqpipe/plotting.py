"""Static SVG of the cumulative metric curves."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PANELS = (
    ("cum_net_reward", "cumulative net reward"),
    ("cum_cost", "cumulative cost ($)"),
    ("cum_regret", "cumulative regret"),
)


def write_curves(summaries, path):
    """One panel per metric, mean +/- std band per policy."""
    plt.rcParams["svg.hashsalt"] = "seqpipe"
    fig, axes = plt.subplots(1, len(PANELS), figsize=(5 * len(PANELS), 3.6))
    for ax, (key, label) in zip(axes, PANELS):
        for policy, summary in summaries.items():
            mean = np.asarray(summary["per_round"][key]["mean"])
            std = np.asarray(summary["per_round"][key]["std"])
            t = np.arange(1, len(mean) + 1)
            (line,) = ax.plot(t, mean, label=policy, lw=1.4)
            ax.fill_between(t, mean - std, mean + std, color=line.get_color(), alpha=0.2, lw=0)
        ax.set_xlabel("round")
        ax.set_title(label)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
