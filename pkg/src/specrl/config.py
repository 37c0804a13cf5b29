"""YAML configuration schema: one human-editable file describes the model
pair, state encoder, cost constants, PPO variant, run shapes, and corpora."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import yaml

from .engine import CorpusConfig, RunConfig
from .models import CostModel, FeatureSpec, ModelConfig
from .policy import PPOConfig, action_by_triple


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AppConfig:
    model: ModelConfig
    features: FeatureSpec
    cost: CostModel
    ppo: PPOConfig
    ppo_variant: str
    train_run: RunConfig
    eval_run: RunConfig
    train_corpus: CorpusConfig
    eval_corpus: CorpusConfig
    policy_hidden: int
    policy_seed: int
    baseline_action: tuple

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()


def _tupled(value, inner=tuple):
    if value is None:
        return ()
    return tuple(inner(v) if isinstance(v, (list, tuple)) else v for v in value)


def default_config_dict() -> dict:
    """The shipped defaults: a two-regime corpus (low/high draft noise with
    peaked/flat target rows) at desk scale."""
    return {
        "model": {
            "seed": 7, "vocab_size": 32, "context_order": 2,
            "draft_noise": 0.3,
            "regime_schedule": [[0, 0.05], [1, 0.7]],
            "row_alpha": 0.4, "blocks": 2,
            "block_alphas": [0.05, 6.0], "block_coupling": 1.0,
            "eos_token": 1, "eos_prob": 0.004,
        },
        "features": {"slice_dims": [16, 16, 16],
                     "encoder_kind": "feature_vector", "embedding_dim": 384},
        "cost": {"t_target_base": 0.020, "t_target_per_token": 0.00005,
                 "t_draft_base": 0.003, "t_draft_per_node": 0.00002,
                 "t_policy": 0.0005, "t_tree_mgmt_per_node": 0.00001,
                 "mode": "simulated"},
        "ppo": {"variant": "standard", "gamma": 0.05, "gae_lambda": 0.9,
                "entropy_coef": 0.03, "reward_scale": 100.0},
        "run": {"max_new_tokens": 256, "train_cache_interval": 3,
                "eval_cache_interval": 30, "sampling_seed": 0},
        "corpus": {
            "train": {"n_questions": 300, "class_probs": [0.5, 0.5],
                      "prompt_len": [4, 8], "followup_turns": 5,
                      "mixed_turns": True, "seed": 42},
            "eval": {"n_questions": 24, "class_probs": [0.5, 0.5],
                     "prompt_len": [4, 8], "followup_turns": 0, "seed": 4242},
        },
        "policy": {"hidden": 128, "seed": 1},
        "baseline_action": [48, 5, 8],
    }


def config_from_dict(raw: dict) -> AppConfig:
    try:
        m = dict(raw.get("model", {}))
        if "regime_schedule" in m:
            m["regime_schedule"] = tuple(
                (int(c), float(e)) for c, e in m["regime_schedule"])
        if "block_alphas" in m:
            m["block_alphas"] = tuple(float(a) for a in m["block_alphas"])
        model = ModelConfig(**m)

        f = dict(raw.get("features", {}))
        if "slice_dims" in f:
            f["slice_dims"] = tuple(int(d) for d in f["slice_dims"])
        features = FeatureSpec(**f)

        cost = CostModel(**raw.get("cost", {}))

        p = dict(raw.get("ppo", {}))
        variant = p.pop("variant", "standard")
        ppo = PPOConfig.variant(variant)
        if p:
            from dataclasses import replace
            ppo = replace(ppo, **p)

        r = dict(raw.get("run", {}))
        train_run = RunConfig(max_new_tokens=int(r.get("max_new_tokens", 2048)),
                              cache_interval=int(r.get("train_cache_interval", 10)),
                              mode="train",
                              sampling_seed=int(r.get("sampling_seed", 0)))
        eval_run = RunConfig(max_new_tokens=int(r.get("max_new_tokens", 2048)),
                             cache_interval=int(r.get("eval_cache_interval", 30)),
                             mode="eval",
                             sampling_seed=int(r.get("sampling_seed", 0)))

        c = raw.get("corpus", {})

        def corpus_cfg(section, default_seed):
            s = dict(c.get(section, {}))
            if "class_probs" in s:
                s["class_probs"] = tuple(float(x) for x in s["class_probs"])
            if "prompt_len" in s:
                s["prompt_len"] = tuple(int(x) for x in s["prompt_len"])
            s.setdefault("seed", default_seed)
            return CorpusConfig(**s)

        train_corpus = corpus_cfg("train", 42)
        eval_corpus = corpus_cfg("eval", 4242)

        pol = raw.get("policy", {})
        ba = raw.get("baseline_action", [64, 6, 16])
        action_by_triple(*ba)   # validate feasibility
        return AppConfig(model=model, features=features, cost=cost, ppo=ppo,
                         ppo_variant=variant, train_run=train_run,
                         eval_run=eval_run, train_corpus=train_corpus,
                         eval_corpus=eval_corpus,
                         policy_hidden=int(pol.get("hidden", 128)),
                         policy_seed=int(pol.get("seed", 0)),
                         baseline_action=tuple(int(x) for x in ba))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> AppConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a mapping")
    return config_from_dict(raw)


def write_default_config(path):
    Path(path).write_text(yaml.safe_dump(default_config_dict(), sort_keys=False))
