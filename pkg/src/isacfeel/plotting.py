"""Figures rendered next to sweep CSVs and training logs."""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_sweep", "plot_training"]

_PANELS = (
    ("mean_size", "se_size", "mean |S|"),
    ("mean_crb", "se_crb", "CRB"),
    ("mean_agg_error", "se_agg_error", "aggregation error"),
    ("final_accuracy", "se_accuracy", "test accuracy"),
)


def plot_sweep(rows, sweep, path):
    """One panel per metric that has at least one finite value, one line per policy."""
    panels = [p for p in _PANELS if any(math.isfinite(getattr(r, p[0])) for r in rows)]
    if not panels:
        return None
    fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.4), squeeze=False)
    policies = list(dict.fromkeys(r.policy for r in rows))
    for ax, (key, se_key, label) in zip(axes[0], panels):
        for policy in policies:
            sub = [r for r in rows if r.policy == policy]
            ax.errorbar([r.sweep_value for r in sub], [getattr(r, key) for r in sub],
                        yerr=[getattr(r, se_key) for r in sub], marker="o", capsize=3, label=policy)
        ax.set_xlabel(sweep)
        ax.set_ylabel(label)
        if key == "mean_crb":
            ax.set_yscale("log")
        if sweep in ("eps0", "Gamma0", "d_target"):
            ax.set_xscale("log")
        ax.grid(alpha=0.3)
    axes[0][0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training(state, path):
    """Loss, accuracy and optimality gap per round."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    rounds = range(len(state.loss_history))
    for ax, values, label in zip(axes, (state.loss_history, state.acc_history, state.gap_history),
                                 ("train loss", "test accuracy", "optimality gap")):
        ax.plot(rounds, values)
        ax.set_xlabel("round")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[2].set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
