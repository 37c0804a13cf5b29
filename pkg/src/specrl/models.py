"""Seeded synthetic target/draft language models, state encoders, and the latency cost model.

The target model is an order-m categorical (Markov) model whose conditional
rows are materialized from a counter-based PRNG (Philox), so identical
(seed, config) pairs yield bit-identical tables on every platform.  The draft
model is the target mixed toward the uniform distribution with weight eps,
which makes draft fidelity a single controllable knob.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

BOS_TOKEN = 0

# Philox key stream tags; keep disjoint so tables, projections, and
# embeddings never share random bits.
_PURPOSE_ROW = 1
_PURPOSE_SLICE_PROJ = 2
_PURPOSE_EMBED_COL = 3

_MASK48 = (1 << 48) - 1


def _philox(seed: int, purpose: int, index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & (2**64 - 1)),
                    np.uint64((purpose << 48) | (index & _MASK48))],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class InvalidTokenError(ValueError):
    """A token id outside [0, vocab_size) was supplied."""


@dataclass(frozen=True)
class ModelConfig:
    seed: int = 7
    vocab_size: int = 32
    context_order: int = 2
    draft_noise: float = 0.3
    regime_schedule: tuple = ()          # ((class_id, eps_override), ...)
    row_alpha: float = 0.4               # Dirichlet concentration of target rows
    blocks: int = 1                      # token-range blocks (one per prompt class)
    block_alphas: tuple = ()             # per-block row concentration override
    block_coupling: float = 0.0          # in-block transition mass boost
    eos_token: int | None = 1
    eos_prob: float = 0.02

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.context_order < 1:
            raise ValueError("context_order must be >= 1")
        if not 0.0 <= self.draft_noise <= 1.0:
            raise ValueError("draft_noise must lie in [0, 1]")
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")

    def eps_for_class(self, class_id) -> float:
        for cid, eps in self.regime_schedule:
            if cid == class_id:
                return float(eps)
        return self.draft_noise

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True, default=list).encode()
        ).hexdigest()


@dataclass(frozen=True)
class FeatureSpec:
    slice_dims: tuple = (16, 16, 16)
    encoder_kind: str = "feature_vector"   # or "context_embedding"
    embedding_dim: int = 384

    @property
    def state_dim(self) -> int:
        if self.encoder_kind == "context_embedding":
            return self.embedding_dim
        return int(sum(self.slice_dims))


@dataclass(frozen=True)
class CostModel:
    """Additive per-step latency constants, all in seconds."""
    t_target_base: float = 0.020
    t_target_per_token: float = 0.00005
    t_draft_base: float = 0.0015
    t_draft_per_node: float = 0.00002
    t_policy: float = 0.0005
    t_tree_mgmt_per_node: float = 0.00001
    mode: str = "simulated"

    def __post_init__(self):
        for name in ("t_target_base", "t_target_per_token", "t_draft_base",
                     "t_draft_per_node", "t_policy", "t_tree_mgmt_per_node"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class TreeStats:
    """Shape counts of one draft/verify step, used for latency attribution."""
    layers_built: int = 0
    nodes_expanded: int = 0      # draft forward passes (parents queried)
    total_nodes: int = 0         # non-root nodes in the tree
    candidates_verified: int = 0

    def __post_init__(self):
        for name in ("layers_built", "nodes_expanded", "total_nodes",
                     "candidates_verified"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def step_latency_components(cost: CostModel, stats: TreeStats,
                            policy_invoked: bool) -> dict:
    """Per-category seconds for one step; keys are the profiler's closed tag set."""
    return {
        "drafting": stats.layers_built * cost.t_draft_base
        + stats.nodes_expanded * cost.t_draft_per_node,
        "tree_mgmt": stats.total_nodes * cost.t_tree_mgmt_per_node,
        "verification": cost.t_target_base
        + stats.candidates_verified * cost.t_target_per_token,
        "policy": cost.t_policy if policy_invoked else 0.0,
    }


def simulate_step_latency(cost: CostModel, action, stats: TreeStats,
                          policy_invoked: bool) -> float:
    if cost.mode != "simulated":
        raise ValueError("simulate_step_latency requires simulated mode")
    return float(sum(step_latency_components(cost, stats, policy_invoked).values()))


class SyntheticLM:
    """Order-m categorical model over a small vocabulary.

    Conditional rows are derived independently per context bucket from a
    Philox stream keyed by (seed, bucket), so any single row can be re-derived
    without materializing the table.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self._rows: dict[int, np.ndarray] = {}
        self._orders: dict[int, np.ndarray] = {}
        v = config.vocab_size
        special = [BOS_TOKEN]
        if config.eos_token is not None and config.eos_token < v:
            special.append(config.eos_token)
        self._special = sorted(set(special))
        self._plain = np.array([t for t in range(v) if t not in self._special],
                               dtype=np.int64)

    # -- token-range blocks ------------------------------------------------

    def block_of(self, token: int) -> int:
        cfg = self.config
        if cfg.blocks <= 1 or len(self._plain) == 0:
            return 0
        pos = np.searchsorted(self._plain, token)
        if pos >= len(self._plain) or self._plain[pos] != token:
            return 0
        width = -(-len(self._plain) // cfg.blocks)
        return min(int(pos) // width, cfg.blocks - 1)

    def block_tokens(self, block: int) -> np.ndarray:
        cfg = self.config
        if cfg.blocks <= 1:
            return self._plain
        width = -(-len(self._plain) // cfg.blocks)
        return self._plain[block * width:(block + 1) * width]

    # -- conditional table -------------------------------------------------

    def bucket_of(self, context) -> int:
        cfg = self.config
        ctx = list(context)[-cfg.context_order:]
        while len(ctx) < cfg.context_order:
            ctx.insert(0, BOS_TOKEN)
        b = 0
        for t in ctx:
            b = b * cfg.vocab_size + int(t)
        return b

    def row_for_bucket(self, bucket: int) -> np.ndarray:
        row = self._rows.get(bucket)
        if row is None:
            row = self._derive_row(bucket)
            self._rows[bucket] = row
        return row

    def row_order_for_bucket(self, bucket: int) -> np.ndarray:
        """Tokens of a row sorted by probability descending (stable).  The
        order is shared by the draft model for eps < 1: uniform mixing is a
        strictly monotone transform of the row."""
        order = self._orders.get(bucket)
        if order is None:
            order = np.argsort(-self.row_for_bucket(bucket), kind="stable")
            self._orders[bucket] = order
        return order

    def _derive_row(self, bucket: int) -> np.ndarray:
        cfg = self.config
        v = cfg.vocab_size
        last = bucket % v
        blk = self.block_of(last)
        alpha = cfg.row_alpha
        if cfg.block_alphas and blk < len(cfg.block_alphas):
            alpha = float(cfg.block_alphas[blk])
        rng = _philox(cfg.seed, _PURPOSE_ROW, bucket)
        g = rng.gamma(alpha, 1.0, size=v)
        row = np.zeros(v)
        if len(self._plain):
            row[self._plain] = g[self._plain]
        else:
            row[:] = g
        s = row.sum()
        row = row / s if s > 0 else np.full(v, 1.0 / v)
        if cfg.blocks > 1 and cfg.block_coupling > 0 and len(self._plain):
            mask = np.zeros(v)
            mask[self.block_tokens(blk)] = 1.0
            inblk = row * mask
            if inblk.sum() > 0:
                row = cfg.block_coupling * inblk / inblk.sum() \
                    + (1.0 - cfg.block_coupling) * row
        eos = cfg.eos_token
        if eos is not None and eos < v and cfg.eos_prob > 0 and len(self._plain):
            row = row * (1.0 - cfg.eos_prob)
            row[eos] += cfg.eos_prob
        return row / row.sum()

    # -- public distribution interface ------------------------------------

    def _check(self, context):
        if len(context) == 0:
            raise ValueError("context must be non-empty")
        for t in context:
            if not 0 <= int(t) < self.config.vocab_size:
                raise InvalidTokenError(f"token {t} out of range")

    def target_next_dist(self, context) -> np.ndarray:
        """P_T(. | context); depends only on the last context_order tokens."""
        self._check(context)
        return self.row_for_bucket(self.bucket_of(context))

    def draft_next_dist(self, context, eps: float | None = None) -> np.ndarray:
        """P_d = (1 - eps) * P_T + eps * Uniform(vocab)."""
        if eps is None:
            eps = self.config.draft_noise
        if not 0.0 <= eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")
        p_t = self.target_next_dist(context)
        return (1.0 - eps) * p_t + eps / self.config.vocab_size

    def greedy_next(self, context) -> int:
        self._check(context)
        return int(self.row_order_for_bucket(self.bucket_of(context))[0])

    def greedy_decode(self, context, max_new_tokens: int) -> list:
        """Pure target argmax decoding; stops at EOS or the token budget."""
        ctx = list(context)
        out = []
        eos = self.config.eos_token
        while len(out) < max_new_tokens:
            t = self.greedy_next(ctx)
            ctx.append(t)
            out.append(t)
            if eos is not None and t == eos:
                break
        return out


class StateEncoder:
    """Deterministic context-to-state featurizer.

    feature_vector: three seeded random projections of the token-count vector
    over the last context_order tokens, concatenated (the high/mid/low slices).
    context_embedding: seeded random projection of a bag-of-bigrams over the
    whole context (the external-encoder stand-in for the ablation).
    """

    def __init__(self, model_config: ModelConfig, spec: FeatureSpec):
        self.config = model_config
        self.spec = spec
        v = model_config.vocab_size
        if spec.encoder_kind == "feature_vector":
            self._projs = [
                _philox(model_config.seed, _PURPOSE_SLICE_PROJ, i)
                .normal(0.0, 1.0, size=(dim, v)) / np.sqrt(v)
                for i, dim in enumerate(spec.slice_dims)
            ]
        elif spec.encoder_kind == "context_embedding":
            self._cols: dict[int, np.ndarray] = {}
        else:
            raise ValueError(f"unknown encoder_kind {spec.encoder_kind!r}")

    @property
    def state_dim(self) -> int:
        return self.spec.state_dim

    def encode(self, context) -> np.ndarray:
        if len(context) == 0:
            raise ValueError("context must be non-empty")
        v = self.config.vocab_size
        for t in context:
            if not 0 <= int(t) < v:
                raise InvalidTokenError(f"token {t} out of range")
        if self.spec.encoder_kind == "feature_vector":
            counts = np.zeros(v)
            for t in list(context)[-self.config.context_order:]:
                counts[int(t)] += 1.0
            return np.concatenate([p @ counts for p in self._projs])
        # bag of bigrams over the entire context
        emb = np.zeros(self.spec.embedding_dim)
        ctx = list(context)
        n = 0
        for a, b in zip(ctx[:-1], ctx[1:]):
            j = int(a) * v + int(b)
            col = self._cols.get(j)
            if col is None:
                col = _philox(self.config.seed, _PURPOSE_EMBED_COL, j) \
                    .normal(0.0, 1.0, size=self.spec.embedding_dim)
                self._cols[j] = col
            emb += col
            n += 1
        return emb / max(n, 1)
