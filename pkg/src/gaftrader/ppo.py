"""Proximal policy optimization with a clipped surrogate loss.

The agent keeps two parameter sets: theta_old drives action sampling during
rollouts, theta is optimized. Every transition records the sampling log
probability; after U recorded steps the buffer is turned into discounted
returns (backward recursion, never across episode boundaries), K epochs of
gradient steps run on

    L = mean(-min(q A, clip(q, 1-C, 1+C) A)) + c1 mean((V - R)^2) - c2 mean(H)

with q = exp(logp_new - logp_old) and A = R - V treated as a constant in the
policy term (the value head learns only through the c1 term), then theta_old
is synchronized to theta and the buffer cleared.

Gradients are computed analytically layer by layer; the test suite pins them
against central finite differences of this exact objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from gaftrader import neural
from gaftrader.neural import Dense, Network, Relu


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; carries the last finite statistics."""

    def __init__(self, message: str, last_stats: list[dict] | None = None):
        super().__init__(message)
        self.last_stats = last_stats or []


@dataclass
class PpoConfig:
    gamma: float = 0.99
    clip: float = 0.2
    epochs: int = 4              # K gradient passes per update
    update_timestep: int = 2048  # U transitions per update
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    learning_rate: float = 3e-4
    seed: int = 0
    normalize_returns: bool = True
    max_grad_norm: float = 5.0
    hidden: int = 64

    def __post_init__(self) -> None:
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.epochs < 1 or self.update_timestep < 1:
            raise ValueError("epochs and update_timestep must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")


@dataclass
class Transition:
    state: np.ndarray
    action: int
    log_prob_old: float
    reward: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.log_prob_old) or self.log_prob_old > 1e-9:
            raise ValueError(f"log probability must be finite and <= 0, got {self.log_prob_old}")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


class TrajectoryBuffer:
    """Ordered transitions with episode-boundary markers; cleared per update."""

    def __init__(self) -> None:
        self._transitions: list[Transition] = []
        self._episode_ends: list[bool] = []

    def add(self, transition: Transition, episode_end: bool = False) -> None:
        self._transitions.append(transition)
        self._episode_ends.append(episode_end)

    def __len__(self) -> int:
        return len(self._transitions)

    def clear(self) -> None:
        self._transitions.clear()
        self._episode_ends.clear()

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if not self._transitions:
            raise ValueError("empty trajectory buffer")
        states = np.stack([t.state for t in self._transitions])
        actions = np.array([t.action for t in self._transitions], dtype=np.int64)
        logp_old = np.array([t.log_prob_old for t in self._transitions])
        rewards = np.array([t.reward for t in self._transitions])
        ends = np.array(self._episode_ends, dtype=bool)
        return states, actions, logp_old, rewards, ends


def discounted_returns(buffer: TrajectoryBuffer, gamma: float) -> np.ndarray:
    """Backward-recursive discounted returns, reset at each episode end."""
    _, _, _, rewards, ends = buffer.arrays()
    return discounted_returns_from_arrays(rewards, ends, gamma)


def discounted_returns_from_arrays(rewards: np.ndarray, episode_ends: np.ndarray,
                                   gamma: float) -> np.ndarray:
    returns = np.empty_like(rewards, dtype=np.float64)
    running = 0.0
    for t in range(rewards.size - 1, -1, -1):
        if episode_ends[t]:
            running = 0.0
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


class ActorCritic:
    """Shared dense trunk with a 3-way action head and a scalar value head."""

    def __init__(self, state_dim: int, n_actions: int = 3, hidden: int = 64,
                 rng: np.random.Generator | None = None):
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.hidden = hidden
        self.trunk = Network([
            Dense(state_dim, hidden, rng), Relu(),
            Dense(hidden, hidden, rng), Relu(),
        ])
        self.pi_head = Dense(hidden, n_actions, rng)
        self.v_head = Dense(hidden, 1, rng)

    def forward(self, states: np.ndarray):
        h, trunk_caches = self.trunk.forward(states)
        logits, pi_cache = self.pi_head.forward(h)
        values, v_cache = self.v_head.forward(h)
        return logits, values[:, 0], (trunk_caches, pi_cache, v_cache)

    def backward(self, caches, dlogits: np.ndarray, dvalues: np.ndarray) -> list[dict]:
        trunk_caches, pi_cache, v_cache = caches
        dh_pi, g_pi = self.pi_head.backward(dlogits, pi_cache)
        dh_v, g_v = self.v_head.backward(dvalues[:, None], v_cache)
        _, g_trunk = self.trunk.backward(trunk_caches, dh_pi + dh_v)
        return g_trunk + [g_pi, g_v]

    def params(self) -> list[dict]:
        return self.trunk.params() + [self.pi_head.params, self.v_head.params]

    def state(self) -> list[dict]:
        return [{k: v.copy() for k, v in p.items()} for p in self.params()]

    def load_state(self, state: list[dict]) -> None:
        for p, saved in zip(self.params(), state, strict=True):
            for k in p:
                if p[k].shape != saved[k].shape:
                    raise neural.ShapeError(f"parameter {k} shape mismatch")
                p[k] = saved[k].copy()

    def clone(self) -> "ActorCritic":
        twin = ActorCritic(self.state_dim, self.n_actions, self.hidden)
        twin.load_state(self.state())
        return twin


def evaluate(model: ActorCritic, states: np.ndarray,
             actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log probabilities of the taken actions, state values, and entropies."""
    logits, values, _ = model.forward(states)
    logp_all = neural.log_softmax(logits)
    logp = logp_all[np.arange(actions.size), actions]
    probs = np.exp(logp_all)
    entropy = -np.sum(probs * logp_all, axis=1)
    return logp, values, entropy


def ppo_loss(logp_new: np.ndarray, logp_old: np.ndarray, returns: np.ndarray,
             values: np.ndarray, entropy: np.ndarray, config: PpoConfig) -> float:
    """Scalar clipped-surrogate objective (advantage frozen in the policy term)."""
    for name, v in (("logp_new", logp_new), ("logp_old", logp_old),
                    ("returns", returns), ("values", values), ("entropy", entropy)):
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"non-finite component: {name}")
    q = np.exp(logp_new - logp_old)
    advantage = returns - values
    surr1 = q * advantage
    surr2 = np.clip(q, 1.0 - config.clip, 1.0 + config.clip) * advantage
    policy = float(np.mean(-np.minimum(surr1, surr2)))
    value = float(np.mean((values - returns) ** 2))
    ent = float(np.mean(entropy))
    return policy + config.value_coef * value - config.entropy_coef * ent


def _loss_pieces(logits: np.ndarray, values: np.ndarray, actions: np.ndarray,
                 logp_old: np.ndarray, returns: np.ndarray, config: PpoConfig):
    """Loss components plus analytic gradients w.r.t. logits and values."""
    n = actions.size
    logp_all = neural.log_softmax(logits)
    probs = np.exp(logp_all)
    logp_new = logp_all[np.arange(n), actions]
    entropy = -np.sum(probs * logp_all, axis=1)

    q = np.exp(logp_new - logp_old)
    advantage = returns - values
    surr1 = q * advantage
    clipped = np.clip(q, 1.0 - config.clip, 1.0 + config.clip)
    surr2 = clipped * advantage

    policy_loss = float(np.mean(-np.minimum(surr1, surr2)))
    value_loss = float(np.mean((values - returns) ** 2))
    entropy_mean = float(np.mean(entropy))
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy_mean

    # Policy gradient flows only through the branch min() selects; on the
    # clipped branch the ratio is a constant, so the contribution is zero.
    active = surr1 <= surr2
    dlogp = np.where(active, -(q * advantage), 0.0) / n
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(n), actions] = 1.0
    dlogits = dlogp[:, None] * (one_hot - probs)
    # d(-c2 mean H)/dz, with dH/dz_j = -p_j (log p_j + H)
    dlogits += (config.entropy_coef / n) * probs * (logp_all + entropy[:, None])
    dvalues = 2.0 * config.value_coef * (values - returns) / n
    stats = {"loss": total, "policy_loss": policy_loss, "value_loss": value_loss,
             "entropy": entropy_mean,
             "clip_fraction": float(np.mean(~active))}
    return total, dlogits, dvalues, stats


@dataclass
class TrainResult:
    episode_returns: list[float]
    episode_stats: list[dict | None]
    update_stats: list[list[dict]] = field(default_factory=list)

    @property
    def n_updates(self) -> int:
        return len(self.update_stats)


class PpoAgent:
    """Actor-critic pair (theta, theta_old) plus the optimizer and RNG streams."""

    def __init__(self, state_dim: int, config: PpoConfig | None = None, n_actions: int = 3):
        self.config = config or PpoConfig()
        init_seq, action_seq = np.random.SeedSequence(self.config.seed).spawn(2)
        self.net = ActorCritic(state_dim, n_actions, self.config.hidden,
                               np.random.default_rng(init_seq))
        self.net_old = self.net.clone()
        self.optimizer = neural.Adam(self.net.params(),
                                     learning_rate=self.config.learning_rate)
        self._action_rng = np.random.default_rng(action_seq)

    def act(self, observation: np.ndarray) -> tuple[int, float]:
        """Sample an action from the rollout policy (theta_old)."""
        logits, _, _ = self.net_old.forward(observation[None])
        logp_all = neural.log_softmax(logits[0])
        probs = np.exp(logp_all)
        u = self._action_rng.random()
        action = int(np.searchsorted(np.cumsum(probs), u))
        action = min(action, probs.size - 1)
        return action, float(logp_all[action])

    def act_greedy(self, observation: np.ndarray) -> int:
        logits, _, _ = self.net.forward(observation[None])
        return int(np.argmax(logits[0]))

    def update(self, buffer: TrajectoryBuffer) -> list[dict]:
        """K epochs of gradient steps, then theta_old <- theta and a cleared buffer."""
        states, actions, logp_old, rewards, ends = buffer.arrays()
        returns = discounted_returns_from_arrays(rewards, ends, self.config.gamma)
        if self.config.normalize_returns:
            returns = (returns - returns.mean()) / (returns.std() + 1e-8)
        epoch_stats = []
        for _ in range(self.config.epochs):
            logits, values, caches = self.net.forward(states)
            total, dlogits, dvalues, stats = _loss_pieces(
                logits, values, actions, logp_old, returns, self.config
            )
            if not np.isfinite(total):
                raise DivergenceError("non-finite loss during update", epoch_stats)
            grads = self.net.backward(caches, dlogits, dvalues)
            neural.clip_grads_(grads, self.config.max_grad_norm)
            self.optimizer.step(grads)
            epoch_stats.append(stats)
        self.net_old.load_state(self.net.state())
        buffer.clear()
        return epoch_stats

    # -- checkpointing ------------------------------------------------------

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        arrays = {}
        for i, p in enumerate(self.net.params()):
            for k, v in p.items():
                arrays[f"p{i}_{k}"] = v
        meta = {
            "state_dim": self.net.state_dim,
            "n_actions": self.net.n_actions,
            "config": asdict(self.config),
            "extra": extra_meta or {},
        }
        neural.save_arrays(path, arrays, meta)
        sidecar = Path(f"{path}.config.txt")
        lines = [f"{k}={v}" for k, v in asdict(self.config).items()]
        lines += [f"{k}={v}" for k, v in (extra_meta or {}).items()]
        sidecar.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> tuple["PpoAgent", dict]:
        arrays, meta = neural.load_arrays(path)
        config = PpoConfig(**meta["config"])
        agent = cls(meta["state_dim"], config, n_actions=meta["n_actions"])
        state = []
        for i, p in enumerate(agent.net.params()):
            state.append({k: arrays[f"p{i}_{k}"] for k in p})
        agent.net.load_state(state)
        agent.net_old.load_state(state)
        return agent, meta.get("extra", {})


def train(env, agent: PpoAgent, *, episodes: int, max_steps: int | None = None) -> TrainResult:
    """Run the rollout/update loop for a number of episodes.

    ``env`` is an environment instance or a zero-argument factory. Steps per
    episode default to the environment's natural length. Updates fire every
    ``update_timestep`` recorded transitions; a tail shorter than one update
    window is discarded, so a single episode shorter than U performs no
    update at all.
    """
    if not hasattr(env, "reset"):
        env = env()
    buffer = TrajectoryBuffer()
    t = 0
    episode_returns: list[float] = []
    episode_stats: list[dict | None] = []
    update_stats: list[list[dict]] = []
    last_stats: dict | None = None
    for _ in range(episodes):
        state = env.reset()
        total = 0.0
        step_i = 0
        done = False
        while not done and (max_steps is None or step_i < max_steps):
            obs = state.observation
            action, logp = agent.act(obs)
            result = env.step(action)
            total += result.reward
            done = result.done
            episode_end = done or (max_steps is not None and step_i + 1 == max_steps)
            buffer.add(
                Transition(state=obs, action=action, log_prob_old=logp,
                           reward=result.reward),
                episode_end=episode_end,
            )
            t += 1
            if t == agent.config.update_timestep:
                stats = agent.update(buffer)
                update_stats.append(stats)
                last_stats = stats[-1]
                t = 0
            state = result.state
            step_i += 1
        episode_returns.append(total)
        episode_stats.append(dict(last_stats) if last_stats else None)
    return TrainResult(episode_returns=episode_returns, episode_stats=episode_stats,
                       update_stats=update_stats)
