"""Generation engine: per-turn draft/verify cycles with action caching,
interval-averaged rewards, trajectory collection, PPO training, and
evaluation runs over a synthetic prompt corpus."""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

import numpy as np

from .models import (BOS_TOKEN, CostModel, StateEncoder, SyntheticLM,
                     TreeStats, step_latency_components)
from .policy import (Action, PPOConfig, PolicyNet, Transition,
                     enumerate_actions, policy_forward, ppo_update)
from .tree import build_tree, rerank
from .verify import verify_greedy_tree

MIN_ELAPSED = 1e-6   # division guard for zero-cost test configs


@dataclass(frozen=True)
class RunConfig:
    max_new_tokens: int = 2048
    cache_interval: int = 10
    mode: str = "train"            # train | eval
    sampling_seed: int = 0

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.cache_interval < 1:
            raise ValueError("cache_interval must be >= 1")


@dataclass(frozen=True)
class StepRecord:
    step: int
    action: Action
    accept_len: int
    tokens_advanced: int           # accepted draft tokens plus the correction
    candidates: int
    t_drafting: float
    t_tree_mgmt: float
    t_verification: float
    t_policy: float
    elapsed: float
    policy_invoked: bool
    cache_step: int


@dataclass(frozen=True)
class Question:
    tokens: tuple
    regime_class: int = 0
    followups: tuple = ()          # extra per-turn prompt continuations
    turn_classes: tuple = ()       # per-turn regime override (len = turns)

    def class_of_turn(self, turn: int) -> int:
        if turn < len(self.turn_classes):
            return self.turn_classes[turn]
        return self.regime_class


@dataclass(frozen=True)
class CorpusConfig:
    n_questions: int = 80
    class_probs: tuple = (0.5, 0.5)
    prompt_len: tuple = (4, 8)
    followup_turns: int = 0
    mixed_turns: bool = False      # redraw the regime class at each turn
    seed: int = 42


def make_corpus(lm: SyntheticLM, cfg: CorpusConfig) -> list:
    """Seeded random prompts, each tagged with a regime class and drawn from
    that class's token block (so the state stays informative about the
    regime throughout generation)."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(cfg.seed)))
    probs = np.asarray(cfg.class_probs, dtype=float)
    probs = probs / probs.sum()
    questions = []
    lo, hi = cfg.prompt_len
    for _ in range(cfg.n_questions):
        classes = [int(rng.choice(len(probs), p=probs))
                   for _ in range(1 + cfg.followup_turns)]
        if not cfg.mixed_turns:
            classes = [classes[0]] * len(classes)

        def draw(cls):
            pool = lm.block_tokens(cls if lm.config.blocks > 1 else 0)
            n = int(rng.integers(lo, hi + 1))
            return tuple(int(t) for t in rng.choice(pool, size=n))

        questions.append(Question(
            tokens=draw(classes[0]), regime_class=classes[0],
            followups=tuple(draw(c) for c in classes[1:]),
            turn_classes=tuple(classes)))
    return questions


# -- controllers -----------------------------------------------------------


class PolicyController:
    """Wraps a PolicyNet; sample mode for training, greedy for evaluation."""

    def __init__(self, net: PolicyNet, greedy: bool = False,
                 tau: float | None = None):
        self.net = net
        self.greedy = greedy
        self.tau = tau

    def select(self, state, rng):
        probs, action, logp = policy_forward(self.net, state, tau=self.tau,
                                             rng=rng, greedy=self.greedy)
        value = float(self.net.values(state[None, :])[0])
        return action, logp, value


class FixedActionController:
    def __init__(self, action: Action):
        self.action = action

    def select(self, state, rng):
        return self.action, 0.0, 0.0


class RandomActionController:
    """Uniform over the feasible grid; used for losslessness sweeps."""

    def __init__(self, actions=None):
        self.actions = list(actions) if actions is not None else enumerate_actions()

    def select(self, state, rng):
        idx = int(rng.integers(len(self.actions)))
        return self.actions[idx], float(-np.log(len(self.actions))), 0.0


# -- generation loop -------------------------------------------------------


def interval_reward(records) -> float:
    """Mean per-step generation speed (tokens advanced per second) over one
    cache interval; Partial terminal intervals average their actual length."""
    records = list(records)
    if not records:
        raise ValueError("empty interval")
    rates = [r.tokens_advanced / max(r.elapsed, MIN_ELAPSED) for r in records]
    return float(np.mean(rates))


@dataclass
class TurnResult:
    output: list
    records: list
    transitions: list


def generate_turn(lm: SyntheticLM, encoder: StateEncoder, controller,
                  context, cost: CostModel, run_cfg: RunConfig,
                  rng: np.random.Generator, eps: float | None = None,
                  step_offset: int = 0) -> TurnResult:
    """One turn of the draft/verify loop with action caching.

    Loops until EOS is accepted or max_new_tokens is reached; outputs are
    token-for-token identical to greedy target decoding of the same context.
    """
    if getattr(controller, "net", None) is not None:
        if controller.net.state_dim != encoder.state_dim:
            raise ValueError("policy and encoder state dimensions differ")
    N = run_cfg.cache_interval
    ctx = list(context)
    out: list = []
    records: list = []
    transitions: list = []
    eos = lm.config.eos_token

    cache_step = 0
    cached = None        # (action, log_prob, value, state)
    pending: list = []   # records of the open interval

    def close_interval(done=False):
        if cached is not None and pending:
            action, logp, value, state = cached
            transitions.append(Transition(state=state,
                                          action_index=action.index,
                                          log_prob=logp, value=value,
                                          reward=interval_reward(pending),
                                          done=done))
        pending.clear()

    step = step_offset
    while len(out) < run_cfg.max_new_tokens:
        state = encoder.encode(ctx)
        if cache_step == 0 or cached is None:
            close_interval()
            action, logp, value = controller.select(state, rng)
            cached = (action, logp, value, state)
            invoked = True
            cache_step = 1
        else:
            action = cached[0]
            invoked = False
            cache_step += 1

        tree = build_tree(lm, ctx, action, eps=eps)
        candidates = rerank(tree, action.tt) if len(tree) else []
        result = verify_greedy_tree(lm, ctx, tree, candidates)
        tokens = result.tokens
        if eos is not None and eos in tokens:
            tokens = tokens[:tokens.index(eos) + 1]
        room = run_cfg.max_new_tokens - len(out)
        tokens = tokens[:room]

        stats = TreeStats(layers_built=tree.stats.layers_built,
                          nodes_expanded=tree.stats.nodes_expanded,
                          total_nodes=tree.stats.total_nodes,
                          candidates_verified=len(candidates))
        comps = step_latency_components(cost, stats, invoked)
        elapsed = sum(comps.values())
        rec = StepRecord(step=step, action=action,
                         accept_len=result.accept_len,
                         tokens_advanced=len(tokens),
                         candidates=len(candidates),
                         t_drafting=comps["drafting"],
                         t_tree_mgmt=comps["tree_mgmt"],
                         t_verification=comps["verification"],
                         t_policy=comps["policy"],
                         elapsed=elapsed, policy_invoked=invoked,
                         cache_step=cache_step)
        records.append(rec)
        pending.append(rec)
        out.extend(tokens)
        ctx.extend(tokens)
        step += 1

        if cache_step >= N:
            cache_step = 0
        if (eos is not None and tokens and tokens[-1] == eos):
            break
    close_interval(done=True)
    return TurnResult(output=out, records=records, transitions=transitions)


def run_question(lm, encoder, controller, question: Question,
                 cost: CostModel, run_cfg: RunConfig,
                 rng: np.random.Generator) -> TurnResult:
    """All turns of one question; the cache resets at every turn boundary and
    prior output stays in the context."""
    ctx = [BOS_TOKEN] + list(question.tokens)
    output: list = []
    records: list = []
    transitions: list = []
    offset = 0
    turns = [()] + list(question.followups)
    for ti, followup in enumerate(turns):
        ctx.extend(followup)
        eps = lm.config.eps_for_class(question.class_of_turn(ti))
        res = generate_turn(lm, encoder, controller, ctx, cost, run_cfg, rng,
                            eps=eps, step_offset=offset)
        ctx.extend(res.output)
        output.extend(res.output)
        records.extend(res.records)
        transitions.extend(res.transitions)
        offset += len(res.records)
    return TurnResult(output=output, records=records, transitions=transitions)


# -- training --------------------------------------------------------------


def train(lm: SyntheticLM, encoder: StateEncoder, corpus,
          ppo_config: PPOConfig, run_cfg: RunConfig,
          cost: CostModel | None = None, policy_seed: int = 0,
          hidden: int = 128, net: PolicyNet | None = None) -> tuple:
    """Single pass over the corpus; one Transition per completed cache
    interval; PPO update whenever the buffer reaches n_steps; the buffer is
    cleared after every update and at question boundaries."""
    if not corpus:
        raise ValueError("empty corpus")
    if cost is None:
        cost = CostModel()
    if net is None:
        net = PolicyNet(encoder.state_dim, hidden=hidden, seed=policy_seed,
                        temperature=ppo_config.inference_temperature)
    controller = PolicyController(net, greedy=False, tau=1.0)
    update_rng = np.random.Generator(
        np.random.Philox(key=np.uint64(policy_seed + 1)))
    buffer: list = []
    report = {"updates": [], "reward_curve": [], "questions": [],
              "n_updates": 0, "n_transitions": 0}
    actions_used = set()

    for qid, question in enumerate(corpus):
        q_rng = np.random.Generator(np.random.Philox(
            key=np.array([np.uint64(run_cfg.sampling_seed),
                          np.uint64(qid)], dtype=np.uint64)))
        ctx = [BOS_TOKEN] + list(question.tokens)
        q_rewards = []
        offset = 0
        turns = [()] + list(question.followups)
        for ti, followup in enumerate(turns):
            ctx.extend(followup)
            eps = lm.config.eps_for_class(question.class_of_turn(ti))
            res = generate_turn(lm, encoder, controller, ctx, cost,
                                run_cfg, q_rng, eps=eps, step_offset=offset)
            ctx.extend(res.output)
            offset += len(res.records)
            for tr in res.transitions:
                actions_used.add(tr.action_index)
                q_rewards.append(tr.reward)
            buffer.extend(res.transitions)
            if len(buffer) >= ppo_config.n_steps:
                upd = ppo_update(net, buffer, ppo_config, update_rng)
                upd["mean_reward"] = float(np.mean([t.reward for t in buffer]))
                report["updates"].append(
                    {k: upd[k] for k in ("objective_before",
                                         "objective_after", "mean_entropy",
                                         "mean_reward")})
                report["reward_curve"].append(upd["mean_reward"])
                report["n_updates"] += 1
                buffer = []
        report["n_transitions"] += len(q_rewards)
        report["questions"].append({
            "qid": qid, "class": question.regime_class,
            "mean_reward": float(np.mean(q_rewards)) if q_rewards else 0.0,
        })
        buffer = []   # cleared at question boundaries
    report["unique_actions"] = len(actions_used)
    return net, report


# -- evaluation ------------------------------------------------------------


@dataclass
class QuestionEval:
    qid: int
    regime_class: int
    tokens: int
    seconds: float
    tokens_per_s: float
    speedup_vs_autoregressive: float
    output: list = field(repr=False, default_factory=list)
    records: list = field(repr=False, default_factory=list)


def evaluate(lm, encoder, controller, suite, cost: CostModel,
             run_cfg: RunConfig, keep_outputs: bool = False) -> list:
    """Per-question simulated speed; identical (seed, qid) rng streams make
    paired baseline comparisons exact."""
    rows = []
    for qid, question in enumerate(suite):
        rng = np.random.Generator(np.random.Philox(
            key=np.array([np.uint64(run_cfg.sampling_seed),
                          np.uint64(qid)], dtype=np.uint64)))
        res = run_question(lm, encoder, controller, question, cost, run_cfg, rng)
        total_tokens = len(res.output)
        seconds = max(sum(r.elapsed for r in res.records), MIN_ELAPSED)
        auto = total_tokens * cost.t_target_base
        rows.append(QuestionEval(
            qid=qid, regime_class=question.regime_class, tokens=total_tokens,
            seconds=seconds, tokens_per_s=total_tokens / seconds,
            speedup_vs_autoregressive=auto / seconds,
            output=res.output if keep_outputs else [],
            records=res.records))
    return rows


# -- run logs --------------------------------------------------------------

LOG_COLUMNS = ["step", "action_index", "tt", "d", "k", "accept_len",
               "tokens_advanced", "candidates", "t_drafting", "t_tree_mgmt",
               "t_verification", "t_policy", "elapsed", "policy_invoked",
               "cache_step"]


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in records:
        w.writerow([r.step, r.action.index, r.action.tt, r.action.d,
                    r.action.k, r.accept_len, r.tokens_advanced, r.candidates,
                    repr(r.t_drafting), repr(r.t_tree_mgmt),
                    repr(r.t_verification), repr(r.t_policy),
                    repr(r.elapsed), int(r.policy_invoked), r.cache_step])
    return buf.getvalue()


def records_from_csv(text: str) -> list:
    actions = enumerate_actions()
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        out.append(StepRecord(
            step=int(row["step"]), action=actions[int(row["action_index"])],
            accept_len=int(row["accept_len"]),
            tokens_advanced=int(row["tokens_advanced"]),
            candidates=int(row["candidates"]),
            t_drafting=float(row["t_drafting"]),
            t_tree_mgmt=float(row["t_tree_mgmt"]),
            t_verification=float(row["t_verification"]),
            t_policy=float(row["t_policy"]),
            elapsed=float(row["elapsed"]),
            policy_invoked=bool(int(row["policy_invoked"])),
            cache_step=int(row["cache_step"])))
    return out
