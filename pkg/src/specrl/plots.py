"""Matplotlib figure rendering for the report paths.

Every figure is written next to its delimited data file; PNG metadata dates
are suppressed so reruns stay byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = {"dpi": 120, "metadata": {"Date": None}}


def render_cache_sweep(rows, path):
    ns = [r["N"] for r in rows]
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(ns, [r["latency_s"] for r in rows], "o-", color="tab:blue",
             label="latency")
    ax1.set_xlabel("cache interval N")
    ax1.set_ylabel("total simulated latency (s)", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(ns, [r["tokens_per_s"] for r in rows], "s--", color="tab:red",
             label="tokens/s")
    ax2.set_ylabel("tokens per second", color="tab:red")
    ax1.set_title("Cache interval vs. simulated latency and speed")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_training_curve(report, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    curve = report.get("reward_curve", [])
    ax.plot(range(1, len(curve) + 1), curve, "o-")
    ax.set_xlabel("update")
    ax.set_ylabel("mean interval reward (tokens/s)")
    ax.set_title("Training reward curve")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_profile(breakdown, path):
    cats = list(breakdown.percentages)
    vals = [breakdown.percentages[c] for c in cats]
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.barh(cats, vals, color="tab:gray")
    for i, v in enumerate(vals):
        ax.text(v, i, f" {v:.2f}%", va="center")
    ax.set_xlabel("share of attributed simulated time (%)")
    ax.set_title("Consolidated component breakdown")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_eval_speeds(rows, path, baseline_rows=None):
    qids = [r.qid for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(qids, [r.tokens_per_s for r in rows], "o-", label="policy")
    if baseline_rows is not None:
        ax.plot(qids, [r.tokens_per_s for r in baseline_rows], "s--",
                label="static baseline")
    ax.set_xlabel("question")
    ax.set_ylabel("simulated tokens per second")
    ax.set_title("Per-question generation speed")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
