"""Constrained (TT, d, k) action space, actor/critic MLPs with manual
analytic gradients, PPO / max-entropy-PPO updates, GAE, action caching, and
checkpoint serialization.  No autodiff dependency."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

TT_VALUES = (32, 48, 64, 80, 96, 128)
DEPTH_VALUES = (3, 4, 5, 6, 7, 8)
TOPK_VALUES = (8, 12, 16, 20, 32)

CHECKPOINT_MAGIC = b"SPRLCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Action:
    tt: int
    d: int
    k: int
    index: int

    def feasible(self) -> bool:
        return self.tt <= self.k ** (self.d - 1)

    def __str__(self):
        return f"({self.tt},{self.d},{self.k})"


def enumerate_actions() -> list:
    """All feasible (tt, d, k) triples in lexicographic order, indices stable.

    The unfiltered grid has 6*6*5 = 180 combinations; the tt <= k^(d-1)
    feasibility constraint removes three of them.
    """
    out = []
    for tt in TT_VALUES:
        for d in DEPTH_VALUES:
            for k in TOPK_VALUES:
                if tt <= k ** (d - 1):
                    out.append(Action(tt, d, k, len(out)))
    return out


def action_by_triple(tt: int, d: int, k: int) -> Action:
    for a in enumerate_actions():
        if (a.tt, a.d, a.k) == (tt, d, k):
            return a
    raise ValueError(f"({tt},{d},{k}) is not a feasible action")


@dataclass(frozen=True)
class PPOConfig:
    learning_rate: float = 3e-4
    n_steps: int = 64
    batch_size: int = 32
    epochs: int = 4
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    inference_temperature: float = 1.0
    reward_scale: float = 1.0    # rewards are divided by this before GAE

    def __post_init__(self):
        if self.clip <= 0 or not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("invalid PPO configuration")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")

    @classmethod
    def standard(cls) -> "PPOConfig":
        return cls()

    @classmethod
    def max_entropy(cls) -> "PPOConfig":
        return cls(gamma=0.95, gae_lambda=0.9, entropy_coef=0.1,
                   inference_temperature=1.5)

    @classmethod
    def variant(cls, name: str) -> "PPOConfig":
        if name == "standard":
            return cls.standard()
        if name in ("max_entropy", "maxent"):
            return cls.max_entropy()
        raise ValueError(f"unknown PPO variant {name!r}")


@dataclass
class Transition:
    state: np.ndarray
    action_index: int
    log_prob: float
    value: float
    reward: float
    done: bool = False


class _MLP:
    """Two-hidden-layer tanh MLP with explicit backprop."""

    def __init__(self, sizes, rng, out_scale=0.01):
        self.sizes = tuple(sizes)
        self.params = {}
        for i in range(len(sizes) - 1):
            fan_in = sizes[i]
            scale = out_scale if i == len(sizes) - 2 else 1.0 / np.sqrt(fan_in)
            self.params[f"W{i}"] = rng.normal(0.0, 1.0, (sizes[i + 1], fan_in)) * scale
            self.params[f"b{i}"] = np.zeros(sizes[i + 1])

    def forward(self, x):
        x = np.atleast_2d(x)
        acts = [x]
        n = len(self.sizes) - 1
        for i in range(n):
            z = acts[-1] @ self.params[f"W{i}"].T + self.params[f"b{i}"]
            acts.append(np.tanh(z) if i < n - 1 else z)
        return acts[-1], acts

    def backward(self, acts, d_out):
        """Gradients of a scalar objective wrt params, given d_obj/d_output."""
        grads = {}
        n = len(self.sizes) - 1
        delta = d_out
        for i in range(n - 1, -1, -1):
            grads[f"W{i}"] = delta.T @ acts[i]
            grads[f"b{i}"] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[f"W{i}"]) * (1.0 - acts[i] ** 2)
        return grads


class PolicyNet:
    """Actor over the feasible action list plus a scalar critic."""

    def __init__(self, state_dim: int, hidden: int = 128, seed: int = 0,
                 temperature: float = 1.0, actions=None):
        if hidden not in (64, 128):
            raise ValueError("hidden width must be 64 or 128")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.state_dim = state_dim
        self.hidden = hidden
        self.seed = seed
        self.temperature = temperature
        self.actions = list(actions) if actions is not None else enumerate_actions()
        self.n_actions = len(self.actions)
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
        self.actor = _MLP((state_dim, hidden, hidden, self.n_actions), rng)
        self.critic = _MLP((state_dim, hidden, hidden, 1), rng)
        self._adam_m = None
        self._adam_v = None
        self._adam_t = 0

    # -- forward passes ----------------------------------------------------

    def action_probs(self, states, tau: float | None = None):
        logits, _ = self.actor.forward(states)
        if tau is None:
            tau = 1.0
        return _softmax(logits / tau)

    def values(self, states):
        out, _ = self.critic.forward(states)
        return out[:, 0]

    def param_items(self):
        for prefix, net in (("actor", self.actor), ("critic", self.critic)):
            for name in sorted(net.params):
                yield f"{prefix}.{name}", net.params[name]


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_forward(net: PolicyNet, state, tau: float | None = None,
                   rng: np.random.Generator | None = None,
                   greedy: bool = False):
    """Softmax over feasible actions at temperature tau; returns
    (probs, Action, log_prob).  Greedy mode takes the argmax; otherwise a
    caller-supplied rng samples."""
    state = np.asarray(state, dtype=float)
    if state.shape != (net.state_dim,):
        raise ValueError(f"state dimension {state.shape} != {net.state_dim}")
    if tau is None:
        tau = net.temperature
    probs = net.action_probs(state[None, :], tau=tau)[0]
    if greedy:
        idx = int(np.argmax(probs))
    else:
        if rng is None:
            raise ValueError("sampling requires an rng")
        idx = int(rng.choice(net.n_actions, p=probs))
    return probs, net.actions[idx], float(np.log(probs[idx]))


def compute_gae(rewards, values, gamma: float, lam: float,
                bootstrap_value: float = 0.0, dones=None):
    """Standard GAE recursion; returns (advantages, returns = adv + values)."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.size == 0:
        raise ValueError("empty reward sequence")
    if rewards.shape != values.shape:
        raise ValueError("reward/value length mismatch")
    n = rewards.size
    if dones is None:
        dones = np.zeros(n, dtype=bool)
    dones = np.asarray(dones, dtype=bool)
    adv = np.zeros(n)
    next_adv = 0.0
    next_value = float(bootstrap_value)
    for t in range(n - 1, -1, -1):
        cont = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * cont - values[t]
        adv[t] = delta + gamma * lam * cont * next_adv
        next_adv = adv[t]
        next_value = values[t]
    return adv, adv + values


# -- PPO objective and gradients ------------------------------------------


def _entropy(probs):
    logp = np.log(np.clip(probs, 1e-300, None))
    return -(probs * logp).sum(axis=-1)


def ppo_objective(net: PolicyNet, batch: dict, config: PPOConfig) -> float:
    """Total objective (to maximize): clipped surrogate - value_coef * value
    MSE + entropy_coef * entropy.  entropy_coef = 0 recovers standard PPO."""
    states = batch["states"]
    acts = batch["actions"]
    probs = net.action_probs(states)
    logp = np.log(probs[np.arange(len(acts)), acts])
    ratio = np.exp(logp - batch["old_log_probs"])
    adv = batch["advantages"]
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv
    surrogate = np.minimum(unclipped, clipped).mean()
    values = net.values(states)
    value_loss = ((values - batch["returns"]) ** 2).mean()
    entropy = _entropy(probs).mean()
    return float(surrogate - config.value_coef * value_loss
                 + config.entropy_coef * entropy)


def ppo_gradients(net: PolicyNet, batch: dict, config: PPOConfig):
    """Analytic gradients of ppo_objective wrt every parameter."""
    states = np.atleast_2d(batch["states"])
    acts = np.asarray(batch["actions"], dtype=int)
    adv = np.asarray(batch["advantages"], dtype=float)
    n = len(acts)

    logits, actor_acts = net.actor.forward(states)
    probs = _softmax(logits)
    logp = np.log(probs[np.arange(n), acts])
    ratio = np.exp(logp - batch["old_log_probs"])
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv
    # grad flows through the unclipped term only where it attains the min
    coeff = np.where(unclipped <= clipped, ratio * adv, 0.0)

    onehot = np.zeros_like(probs)
    onehot[np.arange(n), acts] = 1.0
    d_logits = coeff[:, None] * (onehot - probs) / n
    if config.entropy_coef:
        logp_all = np.log(np.clip(probs, 1e-300, None))
        ent = -(probs * logp_all).sum(axis=-1, keepdims=True)
        d_logits += config.entropy_coef * (-probs * (logp_all + ent)) / n
    actor_grads = net.actor.backward(actor_acts, d_logits)

    values, critic_acts = net.critic.forward(states)
    d_value = -config.value_coef * 2.0 * (values[:, 0] - batch["returns"]) / n
    critic_grads = net.critic.backward(critic_acts, d_value[:, None])

    return actor_grads, critic_grads


def _adam_step(net: PolicyNet, actor_grads, critic_grads, lr,
               beta1=0.9, beta2=0.999, eps=1e-8):
    if net._adam_m is None:
        net._adam_m = {k: np.zeros_like(v) for k, v in net.param_items()}
        net._adam_v = {k: np.zeros_like(v) for k, v in net.param_items()}
    net._adam_t += 1
    t = net._adam_t
    for prefix, mlp, grads in (("actor", net.actor, actor_grads),
                               ("critic", net.critic, critic_grads)):
        for name, g in grads.items():
            key = f"{prefix}.{name}"
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {key}")
            m = net._adam_m[key] = beta1 * net._adam_m[key] + (1 - beta1) * g
            v = net._adam_v[key] = beta2 * net._adam_v[key] + (1 - beta2) * g * g
            mh = m / (1 - beta1 ** t)
            vh = v / (1 - beta2 ** t)
            # ascent on the objective
            mlp.params[name] += lr * mh / (np.sqrt(vh) + eps)


def ppo_update(net: PolicyNet, transitions, config: PPOConfig,
               rng: np.random.Generator, advantages=None, returns=None) -> dict:
    """Run `epochs` minibatch passes of clipped-surrogate gradient ascent.

    Advantages are normalized (mean 0, sd 1) over the whole batch before the
    update, matching common on-policy defaults.
    """
    transitions = list(transitions)
    if not transitions:
        raise ValueError("empty batch")
    states = np.stack([t.state for t in transitions])
    acts = np.array([t.action_index for t in transitions], dtype=int)
    old_logp = np.array([t.log_prob for t in transitions])
    if advantages is None:
        values = np.array([t.value for t in transitions])
        # the value head learns returns in reward_scale units, so stored
        # values are already scaled; only the raw rewards need dividing
        rewards = np.array([t.reward for t in transitions]) / config.reward_scale
        dones = np.array([t.done for t in transitions])
        advantages, returns = compute_gae(rewards, values, config.gamma,
                                          config.gae_lambda, dones=dones)
    advantages = np.asarray(advantages, dtype=float)
    returns = np.asarray(returns, dtype=float)
    norm_adv = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    n = len(transitions)
    report = {"objective_before": None, "objective_after": None, "epochs": []}
    full = {"states": states, "actions": acts, "old_log_probs": old_logp,
            "advantages": norm_adv, "returns": returns}
    report["objective_before"] = ppo_objective(net, full, config)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = {"states": states[idx], "actions": acts[idx],
                     "old_log_probs": old_logp[idx],
                     "advantages": norm_adv[idx], "returns": returns[idx]}
            ag, cg = ppo_gradients(net, batch, config)
            _adam_step(net, ag, cg, config.learning_rate)
        report["epochs"].append(ppo_objective(net, full, config))
    report["objective_after"] = report["epochs"][-1]
    probs = net.action_probs(states)
    report["mean_entropy"] = float(_entropy(probs).mean())
    return report


# -- action caching --------------------------------------------------------


def cached_action(cache: dict, net: PolicyNet, state, cache_step: int, N: int,
                  rng=None, tau=None, greedy=False):
    """One cache lookup: query the policy when cache_step is 0 or the cache
    is empty, otherwise reuse.  The caller resets cache_step to 0 when it
    reaches N and at turn boundaries."""
    if not 0 <= cache_step <= N:
        raise ValueError("cache_step out of range")
    if cache_step == 0 or "action" not in cache:
        probs, action, logp = policy_forward(net, state, tau=tau, rng=rng,
                                             greedy=greedy)
        cache["action"] = action
        cache["log_prob"] = logp
        return action, True, 1
    return cache["action"], False, cache_step + 1


# -- checkpoint serialization ---------------------------------------------


def save_checkpoint(path, net: PolicyNet, config_digest: str = "", meta=None):
    """Versioned deterministic binary checkpoint (no timestamps)."""
    import json as _json
    meta = dict(meta or {})
    meta.update({"state_dim": net.state_dim, "hidden": net.hidden,
                 "seed": net.seed, "temperature": net.temperature,
                 "n_actions": net.n_actions})
    meta_b = _json.dumps(meta, sort_keys=True).encode()
    digest_b = config_digest.encode()
    arrays = list(net.param_items())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(digest_b)))
        fh.write(digest_b)
        fh.write(struct.pack("<I", len(meta_b)))
        fh.write(meta_b)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", len(arr.shape)))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            fh.write(struct.pack("<Q", len(data)))
            fh.write(data)


def load_checkpoint(path) -> tuple:
    """Returns (PolicyNet, config_digest, meta)."""
    import json as _json
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError("not a policy checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (dlen,) = struct.unpack("<I", fh.read(4))
        digest = fh.read(dlen).decode()
        (mlen,) = struct.unpack("<I", fh.read(4))
        meta = _json.loads(fh.read(mlen).decode())
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            (nbytes,) = struct.unpack("<Q", fh.read(8))
            arrays[name] = np.frombuffer(fh.read(nbytes), dtype="<f8").reshape(shape).copy()
    net = PolicyNet(meta["state_dim"], hidden=meta["hidden"], seed=meta["seed"],
                    temperature=meta["temperature"])
    for key, arr in arrays.items():
        prefix, name = key.split(".", 1)
        mlp = net.actor if prefix == "actor" else net.critic
        if mlp.params[name].shape != arr.shape:
            raise ValueError(f"shape mismatch for {key}")
        mlp.params[name] = arr
    return net, digest, meta


def export_policy_csv(net: PolicyNet) -> str:
    """Flat CSV of every weight for external inspection."""
    lines = ["array,row,col,value"]
    for name, arr in net.param_items():
        mat = np.atleast_2d(arr)
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                lines.append(f"{name},{i},{j},{mat[i, j]!r}")
    return "\n".join(lines) + "\n"
