"""Lossless verification: greedy tree walk (temperature-0 evaluation path)
and stochastic chain rejection sampling with residual resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import SyntheticLM
from .tree import ROOT, DraftTree


@dataclass(frozen=True)
class VerifyResult:
    accepted: tuple            # the consecutively accepted draft tokens
    correction: int            # bonus token, or the target token at rejection
    accept_len: int
    candidates_checked: int

    @property
    def tokens(self) -> list:
        return list(self.accepted) + [self.correction]


def verify_greedy_tree(model: SyntheticLM, context, tree: DraftTree,
                       candidates) -> VerifyResult:
    """Walk the tree along the target argmax path.

    At each node, accept the candidate child carrying the target's argmax
    token (if present) and descend; otherwise stop.  The correction token is
    the target argmax at the stopping point, so the step output is always a
    prefix of pure greedy target decoding.
    """
    cand = set(candidates)
    for i in cand:
        p = tree.nodes[i].parent
        if p != ROOT and p not in cand:
            raise ValueError("candidate set is not ancestor-closed")
    children: dict[int, list] = {}
    for i in sorted(cand):
        children.setdefault(tree.nodes[i].parent, []).append(i)

    ctx = list(context)
    accepted = []
    cur = ROOT
    while True:
        argmax = int(np.argmax(model.target_next_dist(ctx)))
        nxt = None
        for i in children.get(cur, ()):
            if tree.nodes[i].token == argmax:
                nxt = i
                break
        if nxt is None:
            return VerifyResult(tuple(accepted), argmax, len(accepted),
                                len(candidates))
        accepted.append(argmax)
        ctx.append(argmax)
        cur = nxt


def acceptance_prob(p_target: np.ndarray, p_draft: np.ndarray,
                    token: int) -> float:
    """alpha(token) = min(1, P_T(token) / P_d(token))."""
    if p_draft[token] <= 0.0:
        raise ValueError("draft assigned zero probability to an offered token")
    return float(min(1.0, p_target[token] / p_draft[token]))


def residual_dist(p_target: np.ndarray, p_draft: np.ndarray) -> np.ndarray:
    """norm(max(0, P_T - P_d)); falls back to P_T if the residual vanishes."""
    r = np.maximum(p_target - p_draft, 0.0)
    s = r.sum()
    if s <= 0.0:
        return np.array(p_target, copy=True)
    return r / s


def verify_stochastic_chain(model: SyntheticLM, context, chain,
                            rng: np.random.Generator,
                            eps: float | None = None) -> VerifyResult:
    """Chain rejection sampling: accept each draft token with probability
    alpha, resample from the residual on first rejection, and draw a bonus
    token from the target on full acceptance."""
    ctx = list(context)
    accepted = []
    for y in chain:
        p_t = model.target_next_dist(ctx)
        p_d = model.draft_next_dist(ctx, eps=eps)
        if rng.random() < acceptance_prob(p_t, p_d, int(y)):
            accepted.append(int(y))
            ctx.append(int(y))
            continue
        res = residual_dist(p_t, p_d)
        corr = int(rng.choice(len(res), p=res))
        return VerifyResult(tuple(accepted), corr, len(accepted), len(chain))
    p_t = model.target_next_dist(ctx)
    bonus = int(rng.choice(len(p_t), p=p_t))
    return VerifyResult(tuple(accepted), bonus, len(accepted), len(chain))


def accept_stats(results, elapsed) -> dict:
    """Mean/sd acceptance rate and acceptance-length totals over a run.

    `results` and `elapsed` are equal-length streams of VerifyResult and
    per-step seconds.
    """
    results = list(results)
    elapsed = list(elapsed)
    if not results:
        raise ValueError("empty result stream")
    if len(results) != len(elapsed):
        raise ValueError("result and elapsed streams differ in length")
    rates = np.array([
        r.accept_len / r.candidates_checked if r.candidates_checked else 0.0
        for r in results
    ])
    lens = np.array([r.accept_len for r in results], dtype=float)
    return {
        "steps": len(results),
        "acceptance_rate_mean": float(rates.mean()),
        "acceptance_rate_sd": float(rates.std()),
        "acceptance_length_mean": float(lens.mean()),
        "acceptance_length_sd": float(lens.std()),
        "acceptance_length_total": float(lens.sum()),
        "elapsed_total": float(np.sum(elapsed)),
    }
