"""Measurement surface: paired Wilcoxon significance, cache-interval sweeps,
the four-category consolidated profiler, and the ablation grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .engine import (PolicyController, FixedActionController, RunConfig,
                     evaluate, train)
from .models import CostModel, FeatureSpec, StateEncoder
from .policy import Action, PPOConfig

PROFILE_CATEGORIES = ("Drafting", "Tree Structure Management",
                      "Verification", "RL Policy Prediction")

# Closed mapping of sub-event tags to consolidated categories.  The finer
# tree bookkeeping tags all collapse into Tree Structure Management.
_TAG_TO_CATEGORY = {
    "drafting": "Drafting",
    "tree_mgmt": "Tree Structure Management",
    "tree_construction": "Tree Structure Management",
    "tree_initialization": "Tree Structure Management",
    "tree_update": "Tree Structure Management",
    "input_update": "Tree Structure Management",
    "verification": "Verification",
    "policy": "RL Policy Prediction",
}


class UnknownEventTagError(KeyError):
    pass


# Candidate grid for the "best single static action" baseline.  Spans the
# budget/depth/width extremes plus the measured per-regime optima; with k=8
# the tree caps at d*8 nodes, so many larger-TT triples build identical
# trees and add nothing to the search.
STATIC_CANDIDATES = (
    (32, 3, 8), (32, 4, 8), (48, 4, 8), (48, 5, 8), (48, 6, 8),
    (64, 5, 8), (64, 6, 8), (64, 8, 8), (80, 7, 8), (80, 8, 8),
    (96, 8, 8), (128, 8, 8), (64, 6, 16), (128, 8, 32), (96, 5, 12),
)


def best_static(lm, encoder, suite, cost, eval_cfg,
                candidates=STATIC_CANDIDATES):
    """Evaluate each fixed-action candidate on the shared suite; return
    (action_triple, mean_tokens_per_s, rows) for the fastest one."""
    from .policy import action_by_triple
    best = None
    for triple in candidates:
        rows = evaluate(lm, encoder, FixedActionController(
            action_by_triple(*triple)), suite, cost, eval_cfg)
        mean = float(np.mean([r.tokens_per_s for r in rows]))
        if best is None or mean > best[1]:
            best = (triple, mean, rows)
    return best


# -- Wilcoxon signed-rank test ---------------------------------------------


def _midranks(values) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    sorted_v = np.asarray(values)[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(x, y=None, exact_threshold: int = 12) -> dict:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped (Wilcoxon's original treatment); ties get
    midranks.  For n <= exact_threshold the null distribution is enumerated
    over all 2^n sign assignments; otherwise the normal approximation with
    continuity and tie corrections is used.  All-zero differences give
    p = 1.0 by convention.
    """
    d = np.asarray(x, dtype=float)
    if y is not None:
        d = d - np.asarray(y, dtype=float)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return {"p_value": 1.0, "statistic": 0.0, "n": 0, "method": "degenerate"}
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= exact_threshold:
        totals = np.zeros(1)
        for r in ranks:
            totals = np.concatenate([totals, totals + r])
        lo = np.sum(totals <= w_plus + 1e-12) / len(totals)
        hi = np.sum(totals >= w_plus - 1e-12) / len(totals)
        p = min(1.0, 2.0 * min(lo, hi))
        method = "exact"
    else:
        mu = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        # tie correction
        _, counts = np.unique(ranks, return_counts=True)
        var -= np.sum(counts ** 3 - counts) / 48.0
        if var <= 0:
            return {"p_value": 1.0, "statistic": w_plus, "n": n,
                    "method": "degenerate"}
        z = (w_plus - mu - 0.5 * np.sign(w_plus - mu)) / math.sqrt(var)
        p = min(1.0, 2.0 * 0.5 * math.erfc(abs(z) / math.sqrt(2.0)))
        method = "normal"
    return {"p_value": float(p), "statistic": w_plus, "n": n, "method": method}


# -- profiler --------------------------------------------------------------


@dataclass(frozen=True)
class ProfileBreakdown:
    seconds: dict
    percentages: dict
    total: float

    def check(self):
        s = sum(self.percentages.values())
        if abs(s - 100.0) > 0.1:
            raise AssertionError(f"profile percentages sum to {s}")


def consolidate_events(events: dict) -> dict:
    """Aggregate tagged sub-event seconds into the four closed categories."""
    out = {c: 0.0 for c in PROFILE_CATEGORIES}
    for tag, seconds in events.items():
        cat = _TAG_TO_CATEGORY.get(tag)
        if cat is None:
            raise UnknownEventTagError(tag)
        out[cat] += float(seconds)
    return out


def profile(records) -> ProfileBreakdown:
    """Consolidated breakdown of a run log's attributed simulated time."""
    events = {
        "drafting": sum(r.t_drafting for r in records),
        "tree_mgmt": sum(r.t_tree_mgmt for r in records),
        "verification": sum(r.t_verification for r in records),
        "policy": sum(r.t_policy for r in records),
    }
    seconds = consolidate_events(events)
    total = sum(seconds.values())
    if total <= 0:
        raise ValueError("no attributed time in run log")
    pct = {c: 100.0 * seconds[c] / total for c in PROFILE_CATEGORIES}
    breakdown = ProfileBreakdown(seconds=seconds, percentages=pct, total=total)
    breakdown.check()
    return breakdown


# -- paired comparison -----------------------------------------------------


def paired_comparison(adaptive_rows, baseline_rows) -> dict:
    """Speed ratio and Wilcoxon significance between two evaluations run on
    identical suites and seeds."""
    if len(adaptive_rows) != len(baseline_rows):
        raise ValueError("paired runs differ in length")
    a = np.array([r.tokens_per_s for r in adaptive_rows])
    b = np.array([r.tokens_per_s for r in baseline_rows])
    wil = wilcoxon_signed_rank(a, b)
    return {
        "mean_tokens_per_s": float(a.mean()),
        "baseline_mean_tokens_per_s": float(b.mean()),
        "speed_ratio": float(a.mean() / b.mean()),
        "per_question_ratio_mean": float((a / b).mean()),
        "wilcoxon_p": wil["p_value"],
        "wilcoxon_n": wil["n"],
        "n_questions": len(adaptive_rows),
    }


# -- cache sweep -----------------------------------------------------------


def cache_sweep(lm, encoder, controller, suite, cost: CostModel,
                n_values, run_cfg: RunConfig) -> list:
    """Total simulated latency and speed over the suite for each cache
    interval N, with identical seeds everywhere."""
    rows = []
    for n in n_values:
        if n < 1:
            raise ValueError("cache interval must be >= 1")
        cfg = replace(run_cfg, cache_interval=int(n))
        evals = evaluate(lm, encoder, controller, suite, cost, cfg)
        records = [r for q in evals for r in q.records]
        latency = sum(r.elapsed for r in records)
        tokens = sum(q.tokens for q in evals)
        rows.append({
            "N": int(n),
            "latency_s": latency,
            "tokens": tokens,
            "tokens_per_s": tokens / max(latency, 1e-12),
            "policy_calls": sum(1 for r in records if r.policy_invoked),
            "policy_time_s": sum(r.t_policy for r in records),
        })
    return rows


def sweep_to_csv(rows) -> str:
    lines = ["N,latency_s,tokens,tokens_per_s,policy_calls,policy_time_s"]
    for r in rows:
        lines.append(f"{r['N']},{r['latency_s']!r},{r['tokens']},"
                     f"{r['tokens_per_s']!r},{r['policy_calls']},"
                     f"{r['policy_time_s']!r}")
    return "\n".join(lines) + "\n"


# -- ablation grid ---------------------------------------------------------


def compare_ablations(lm, corpus, suite, cost: CostModel,
                      train_cfg: RunConfig, eval_cfg: RunConfig,
                      baseline_action: Action, feature_spec: FeatureSpec,
                      policy_seed: int = 0,
                      variants=("standard", "max_entropy"),
                      encoders=("feature_vector", "context_embedding"),
                      widths=(64, 128)) -> list:
    """Train/evaluate every (variant, encoder, width) cell against the static
    baseline on shared seeds; reports speedup and unique-action counts."""
    rows = []
    baseline_cache: dict = {}
    for kind in encoders:
        spec = replace(feature_spec, encoder_kind=kind)
        encoder = StateEncoder(lm.config, spec)
        if kind not in baseline_cache:
            base = evaluate(lm, encoder, FixedActionController(baseline_action),
                            suite, cost, eval_cfg)
            baseline_cache[kind] = base
        for variant in variants:
            for width in widths:
                ppo = PPOConfig.variant(variant)
                net, _ = train(lm, encoder, corpus, ppo, train_cfg, cost=cost,
                               policy_seed=policy_seed, hidden=width)
                rows.append(_ablation_row(lm, encoder, net, suite, cost,
                                          eval_cfg, baseline_cache[kind],
                                          variant, kind, width))
    return rows


def _ablation_row(lm, encoder, net, suite, cost, eval_cfg, baseline_rows,
                  variant, kind, width) -> dict:
    evals = evaluate(lm, encoder, PolicyController(net, greedy=True),
                     suite, cost, eval_cfg)
    cmp = paired_comparison(evals, baseline_rows)
    used = {r.action.index for q in evals for r in q.records}
    return {
        "variant": variant,
        "encoder": kind,
        "hidden": width,
        "speedup_vs_baseline": cmp["speed_ratio"],
        "wilcoxon_p": cmp["wilcoxon_p"],
        "unique_actions": len(used),
    }


def ablation_table(rows) -> str:
    header = f"{'Variant':<14}{'Encoder':<20}{'Hidden':<8}" \
             f"{'Speedup':<10}{'Uniq.':<7}{'p-value'}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['variant']:<14}{r['encoder']:<20}{r['hidden']:<8}"
                     f"{r['speedup_vs_baseline']:<10.4f}"
                     f"{r['unique_actions']:<7}{r['wilcoxon_p']:.4g}")
    return "\n".join(lines) + "\n"
