"""PNG figures next to the CSV/JSON outputs (needs matplotlib, the ``plot`` extra)."""

from __future__ import annotations

import numpy as np


def _plt():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RuntimeError("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    fig.clf()


def plot_trajectory(traj, reference, dt, path):
    plt = _plt()
    traj = np.asarray(traj)
    t = np.arange(traj.shape[0]) * (dt or 1.0)
    fig, axes = plt.subplots(traj.shape[1], 1, sharex=True, figsize=(7, 1.8 * traj.shape[1]))
    axes = np.atleast_1d(axes)
    for i, ax in enumerate(axes):
        ax.plot(t, traj[:, i], lw=0.8, label="model")
        if reference is not None:
            ax.plot(t, np.asarray(reference)[:, i], lw=0.8, ls="--", label="reference")
        ax.set_ylabel(f"x{i}")
    axes[-1].set_xlabel("t" if dt else "step")
    if reference is not None:
        axes[0].legend(loc="upper right", fontsize=8)
    _save(fig, path)
    plt.close(fig)


def plot_spectra(dists, posterior, path):
    """ELT quantiles per size and the degree CDFs ``F(d | h)``."""
    plt = _plt()
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    hs = np.array([dd.h for dd in dists])
    q = np.array([np.quantile(dd.samples, [0.05, 0.5, 0.95]) for dd in dists])
    a.fill_between(hs, q[:, 0], q[:, 2], alpha=0.3)
    a.plot(hs, q[:, 1], label="median")
    a.plot(hs, [dd.elt_star for dd in dists], "k--", label="fitted max")
    a.plot(hs, [(2 * dd.n + 1) * dd.h + dd.n for dd in dists], ":", label="linear reference")
    a.set_xlabel("hidden nodes h")
    a.set_ylabel("trace")
    a.legend(fontsize=8)
    for d in range(1, posterior.d_max + 1):
        col = posterior.F_d_given_h[:, d - 1]
        if np.all(col >= 1.0):
            break
        b.step(posterior.h_grid, 1.0 - col, where="mid", label=f"d >= {d}")
    b.set_xlabel("hidden nodes h")
    b.set_ylabel("P(degree >= d | h)")
    b.legend(fontsize=8)
    _save(fig, path)
    plt.close(fig)


def plot_posterior(posterior, d: int, h_star: int, p0: float, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(posterior.h_grid, posterior.P_h_given_d[:, d], alpha=0.5, label="P(h | d)")
    ax.step(posterior.h_grid, posterior.F_h_given_d[:, d], where="post", label="F(h | d)")
    ax.axhline(p0, color="gray", ls=":")
    ax.axvline(h_star, color="k", ls="--", label=f"h* = {h_star}")
    ax.set_xlabel("hidden nodes h")
    ax.set_title(f"degree {d}")
    ax.legend(fontsize=8)
    _save(fig, path)
    plt.close(fig)


def plot_validation(report: dict, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    hs = [s["h"] for s in report["sizes"]]
    for key, lab in (("rmse_train", "train"), ("rmse_holdout", "holdout")):
        ax.plot(hs, [np.median(s[key]) for s in report["sizes"]], "o-", label=lab)
        for h, s in zip(hs, report["sizes"]):
            ax.plot([h] * len(s[key]), s[key], ".", color="gray", alpha=0.5)
    ax.set_yscale("log")
    ax.set_xlabel("hidden nodes h")
    ax.set_ylabel("one-step RMSE (normalized)")
    ax.legend(fontsize=8)
    _save(fig, path)
    plt.close(fig)
