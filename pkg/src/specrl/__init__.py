"""Adaptive speculative-sampling simulator: synthetic target/draft models,
dynamic draft trees, lossless verification, a PPO-controlled hyperparameter
policy with action caching, and a benchmark harness."""

from .models import (BOS_TOKEN, CostModel, FeatureSpec, InvalidTokenError,
                     ModelConfig, StateEncoder, SyntheticLM, TreeStats,
                     simulate_step_latency, step_latency_components)
from .tree import DraftTree, ROOT, TreeNode, build_tree, linearize, rerank
from .verify import (VerifyResult, accept_stats, acceptance_prob,
                     residual_dist, verify_greedy_tree,
                     verify_stochastic_chain)
from .policy import (Action, PPOConfig, PolicyNet, Transition, cached_action,
                     compute_gae, enumerate_actions, policy_forward,
                     ppo_objective, ppo_update)
from .engine import (CorpusConfig, FixedActionController, PolicyController,
                     Question, RandomActionController, RunConfig, StepRecord,
                     evaluate, generate_turn, interval_reward, make_corpus,
                     run_question, train)
from .bench import (ProfileBreakdown, cache_sweep, compare_ablations,
                    paired_comparison, profile, wilcoxon_signed_rank)

__version__ = "0.1.0"
