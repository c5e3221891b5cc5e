"""Figure rendering for harness results.

Every renderer takes the result dict of its harness runner plus an output
directory and writes PNG files next to the CSVs. Rendering is strictly a
view over already-computed data; nothing here re-runs experiments.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

METHOD_COLORS = {"FIRL": "tab:blue", "PPO": "tab:orange", "BC": "tab:green"}
MODE_COLORS = {"null": "tab:gray", "R": "tab:green", "O": "tab:orange",
               "O+R": "tab:blue"}
MODE_LABELS = {"null": "FIRL(Ø)", "R": "FIRL(R)", "O": "FIRL(O)", "O+R": "FIRL(O+R)"}


def _save(fig, out: Path, name: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_benchmark(result: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    paths = []
    rows = result["rows"]

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    methods = list(rows)
    rewards = [rows[m]["mean_reward"] for m in methods]
    reward_err = [rows[m]["mean_reward_std"] for m in methods]
    succ = [100 * rows[m]["success_rate"] for m in methods]
    succ_err = [100 * rows[m]["success_rate_std"] for m in methods]
    colors = [METHOD_COLORS.get(m, "tab:gray") for m in methods]
    axes[0].bar(methods, rewards, yerr=reward_err, color=colors, capsize=4)
    axes[0].set_ylabel("average episode reward")
    axes[0].axhline(3.0, ls=":", c="k", lw=0.8)
    axes[1].bar(methods, succ, yerr=succ_err, color=colors, capsize=4)
    axes[1].set_ylabel("success rate (%)")
    axes[1].set_ylim(0, 105)
    paths.append(_save(fig, out, "benchmark_bars.png"))

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for curve in result["curves"]["firl"]:
        axes[0].plot([e for e, _ in curve], [l for _, l in curve],
                     color=METHOD_COLORS["FIRL"], alpha=0.6, lw=1)
    axes[0].set_xlabel("controller training epoch")
    axes[0].set_ylabel("imitation loss")
    axes[0].set_title("FIRL controller (per seed)")
    for curve in result["curves"]["ppo"]:
        axes[1].plot([s for s, _ in curve], [r for _, r in curve],
                     color=METHOD_COLORS["PPO"], alpha=0.8, lw=1)
    axes[1].set_xlabel("environment steps")
    axes[1].set_ylabel("mean episode reward")
    axes[1].set_title("flat PPO baseline")
    paths.append(_save(fig, out, "learning_curves.png"))
    return paths


def render_ablation(result: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    paths = []
    modes = result["modes"]
    demo_counts = result["demo_counts"]
    cells = result["cells"]

    width = 0.8 / len(modes)
    fig, ax = plt.subplots(figsize=(7, 3.8))
    for j, mode in enumerate(modes):
        xs, ys, es = [], [], []
        for i, n in enumerate(demo_counts):
            key = f"{mode}|{n}"
            if key in cells:
                xs.append(i + (j - (len(modes) - 1) / 2) * width)
                ys.append(cells[key]["mean_reward"])
                es.append(cells[key]["mean_reward_std"])
        ax.bar(xs, ys, width=width, yerr=es, capsize=3,
               color=MODE_COLORS.get(mode), label=MODE_LABELS.get(mode, mode))
    ax.set_xticks(range(len(demo_counts)))
    ax.set_xticklabels([str(n) for n in demo_counts])
    ax.set_xlabel("number of demonstrations")
    ax.set_ylabel("average reward")
    ax.axhline(3.0, ls=":", c="k", lw=0.8)
    ax.legend(fontsize=8)
    paths.append(_save(fig, out, "ablation_rewards.png"))

    fig, ax = plt.subplots(figsize=(7, 3.8))
    for j, mode in enumerate(modes):
        xs, ys = [], []
        for i, n in enumerate(demo_counts):
            key = f"{mode}|{n}"
            if key in cells:
                xs.append(i + (j - (len(modes) - 1) / 2) * width)
                ys.append(cells[key]["epochs_to_plateau"])
        ax.bar(xs, ys, width=width, color=MODE_COLORS.get(mode),
               label=MODE_LABELS.get(mode, mode))
    ax.set_xticks(range(len(demo_counts)))
    ax.set_xticklabels([str(n) for n in demo_counts])
    ax.set_xlabel("number of demonstrations")
    ax.set_ylabel("epochs to plateau")
    ax.legend(fontsize=8)
    paths.append(_save(fig, out, "ablation_epochs.png"))

    fig, ax = plt.subplots(figsize=(7, 3.8))
    for key, curve in result["curves"].items():
        mode, n = key.split("|")
        if mode != "O+R":
            continue
        ax.plot([e for e, _ in curve], [l for _, l in curve], lw=1,
                label=f"{n} demo{'s' if int(n) > 1 else ''}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("FIRL(O+R) training curves by demo count")
    ax.legend(fontsize=8)
    paths.append(_save(fig, out, "demo_count_curves.png"))
    return paths


def render_lifelong(result: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.4))
    phases = ["before", "after"]
    stages = [result[p]["stages"] for p in phases]
    rewards = [result[p]["mean_reward"] for p in phases]
    succ = [100 * result[p]["success_rate"] for p in phases]
    labels = [f"{p}\n({s} doors)" for p, s in zip(phases, stages)]
    axes[0].bar(labels, rewards, color=["tab:blue", "tab:purple"])
    axes[0].set_ylabel("average reward")
    for i, s in enumerate(stages):
        axes[0].axhline(s, ls=":", c="k", lw=0.6)
    axes[1].bar(labels, succ, color=["tab:blue", "tab:purple"])
    axes[1].set_ylabel("success rate (%)")
    axes[1].set_ylim(0, 105)
    return [_save(fig, out, "lifelong.png")]


def render_skill_history(history: list[dict], label: str, out_dir) -> Path:
    out = Path(out_dir)
    fig, ax = plt.subplots(figsize=(6, 3.4))
    steps = [h["steps"] for h in history]
    ax.plot(steps, [h["mean_reward"] for h in history], label="mean episode reward")
    ax.plot(steps, [h["success_rate"] for h in history], label="success rate", alpha=0.7)
    ax.set_xlabel("environment steps")
    ax.set_title(label)
    ax.legend(fontsize=8)
    return _save(fig, out, f"training_{label}.png")
