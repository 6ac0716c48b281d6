"""Deterministic policy gradient actor-critic (DDPG) on flat-parameter MLPs.

Used twice: to pre-train the healthy policy whose snapshots form the behavior
ensemble, and as the from-scratch baseline after a fault.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import neural
from .curves import EpisodeRecord, LearningCurve, is_eval_episode
from .env import ArmConfig, ArmEnv, FaultSpec, HEALTHY
from .neural import AdamState, MlpSpec, ParamVector
from .streams import Streams, make_streams


class NotReady(RuntimeError):
    pass


@dataclass(frozen=True)
class DdpgConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 128
    buffer_capacity: int = 100_000
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)
    # exploration std in radians, annealed linearly to noise_final
    noise_std: float = 0.1
    noise_final: float = 0.02
    noise_anneal_episodes: int = 1500
    learning_starts: int = 1000
    eval_every: int = 10

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need buffer_capacity >= batch_size >= 1")
        if self.noise_std < 0 or self.noise_final < 0:
            raise ValueError("noise scales must be >= 0")

    def noise_at(self, episode: int) -> float:
        if self.noise_anneal_episodes <= 0:
            return self.noise_final
        frac = min(1.0, episode / self.noise_anneal_episodes)
        return self.noise_std + frac * (self.noise_final - self.noise_std)


@dataclass
class Agent:
    actor: ParamVector
    critic: ParamVector
    actor_target: ParamVector
    critic_target: ParamVector
    actor_opt: AdamState
    critic_opt: AdamState
    config: DdpgConfig
    max_delta: float

    @property
    def obs_dim(self) -> int:
        return self.actor.spec.n_in

    @property
    def n_actions(self) -> int:
        return self.actor.spec.n_out

    def copy(self) -> "Agent":
        return Agent(
            self.actor.copy(), self.critic.copy(), self.actor_target.copy(),
            self.critic_target.copy(), self.actor_opt.copy(), self.critic_opt.copy(),
            self.config, self.max_delta,
        )


def actor_spec(obs_dim: int, n_actions: int, hidden=(64, 64)) -> MlpSpec:
    return MlpSpec((obs_dim, *hidden, n_actions), output_activation="tanh")


def critic_spec(obs_dim: int, n_actions: int, hidden=(64, 64)) -> MlpSpec:
    return MlpSpec((obs_dim + n_actions, *hidden, 1), output_activation="linear")


def make_agent(obs_dim: int, n_actions: int, max_delta: float, config: DdpgConfig,
               rng: np.random.Generator) -> Agent:
    actor = neural.init_params(actor_spec(obs_dim, n_actions, config.hidden), rng)
    critic = neural.init_params(critic_spec(obs_dim, n_actions, config.hidden), rng)
    return Agent(
        actor, critic, actor.copy(), critic.copy(),
        AdamState.zeros(actor.spec.n_params), AdamState.zeros(critic.spec.n_params),
        config, float(max_delta),
    )


def critic_input(agent: Agent, obs, action) -> np.ndarray:
    """Observation concatenated with the action scaled to [-1, 1]."""
    obs = np.asarray(obs, dtype=np.float64)
    a = np.asarray(action, dtype=np.float64) / agent.max_delta
    return np.concatenate([obs, a], axis=-1)


def policy(actor: ParamVector, obs, max_delta: float) -> np.ndarray:
    return neural.forward(actor, obs) * max_delta


def act(agent: Agent, obs, explore: bool, rng: np.random.Generator | None = None,
        noise_std: float | None = None) -> np.ndarray:
    a = policy(agent.actor, obs, agent.max_delta)
    sigma = agent.config.noise_std if noise_std is None else noise_std
    if explore and sigma > 0:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    return np.clip(a, -agent.max_delta, agent.max_delta)


def critic_value(agent: Agent, obs, action) -> float | np.ndarray:
    q = neural.forward(agent.critic, critic_input(agent, obs, action))
    return float(q[0]) if q.ndim == 1 else q[:, 0]


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored column-wise."""

    def __init__(self, capacity: int, obs_dim: int, n_actions: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, n_actions))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminal = np.zeros(capacity)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward: float, next_obs, terminal: bool) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminal[i] = float(terminal)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < batch_size:
            raise NotReady(f"buffer holds {self.size} < {batch_size} transitions")
        return rng.integers(0, self.size, size=batch_size)

    def batch(self, idx: np.ndarray):
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminal[idx]


@dataclass(frozen=True)
class Losses:
    critic_loss: float
    actor_objective: float


def td_targets(agent: Agent, rewards, next_obs, terminal) -> np.ndarray:
    """r + gamma * (1 - terminal) * Q_target(s', actor_target(s')); target nets only."""
    a2 = policy(agent.actor_target, next_obs, agent.max_delta)
    q2 = neural.forward(agent.critic_target, critic_input(agent, next_obs, a2))[:, 0]
    return rewards + agent.config.gamma * (1.0 - terminal) * q2


def critic_update(agent: Agent, obs, actions, targets) -> float:
    x = critic_input(agent, obs, actions)
    acts = neural.forward_trace(agent.critic, x)
    err = acts[-1][:, 0] - targets
    loss = float(np.mean(err * err))
    grad, _ = neural.backward_trace(agent.critic, acts, (2.0 / len(err)) * err[:, None])
    agent.critic, agent.critic_opt = neural.adam_step(
        agent.critic, grad, agent.critic_opt, lr=agent.config.lr_critic
    )
    return loss


def actor_gradient(agent: Agent, obs) -> tuple[np.ndarray, float]:
    """Gradient of -mean Q(s, actor(s)) w.r.t. actor params, and mean Q itself.

    The chain rule runs through the critic's input gradient; the critic is
    only read.
    """
    n = obs.shape[0]
    a_acts = neural.forward_trace(agent.actor, obs)
    mu = a_acts[-1]
    c_acts = neural.forward_trace(agent.critic, np.concatenate([obs, mu], axis=1))
    objective = float(np.mean(c_acts[-1]))
    _, dx = neural.backward_trace(agent.critic, c_acts, np.full((n, 1), -1.0 / n))
    # critic sees action / max_delta == mu, so dQ/dmu is the action slice directly
    grad, _ = neural.backward_trace(agent.actor, a_acts, dx[:, agent.obs_dim:])
    return grad, objective


def actor_update(agent: Agent, obs) -> float:
    grad, objective = actor_gradient(agent, obs)
    agent.actor, agent.actor_opt = neural.adam_step(
        agent.actor, grad, agent.actor_opt, lr=agent.config.lr_actor
    )
    return objective


def soft_update(target: ParamVector, online: ParamVector, tau: float) -> ParamVector:
    return ParamVector(tau * online.values + (1.0 - tau) * target.values, target.spec)


def train_step(agent: Agent, buffer: ReplayBuffer, batch_size: int,
               rng: np.random.Generator) -> Losses:
    idx = buffer.sample_indices(batch_size, rng)
    obs, actions, rewards, next_obs, terminal = buffer.batch(idx)
    y = td_targets(agent, rewards, next_obs, terminal)
    closs = critic_update(agent, obs, actions, y)
    objective = actor_update(agent, obs)
    tau = agent.config.tau
    agent.actor_target = soft_update(agent.actor_target, agent.actor, tau)
    agent.critic_target = soft_update(agent.critic_target, agent.critic, tau)
    return Losses(closs, objective)


def ready_to_train(agent: Agent, buffer: ReplayBuffer) -> bool:
    return len(buffer) >= max(agent.config.batch_size, agent.config.learning_starts)


def train_run(
    env_config: ArmConfig,
    fault: FaultSpec = HEALTHY,
    episodes: int = 0,
    seed: int = 0,
    config: DdpgConfig | None = None,
    agent: Agent | None = None,
    streams: Streams | None = None,
    snapshot_episodes=(),
    on_snapshot=None,
) -> tuple[LearningCurve, Agent]:
    """Plain DDPG training loop.

    Starts from ``agent`` when given (e.g. a pre-trained checkpoint), otherwise
    from a fresh initialization drawn from the seed's ``init`` stream.
    ``on_snapshot(episode, agent)`` fires after each episode listed in
    ``snapshot_episodes``.
    """
    config = config or (agent.config if agent is not None else DdpgConfig())
    streams = streams or make_streams(seed, fault.rng_stream_id)
    if agent is None:
        agent = make_agent(env_config.obs_dim, env_config.n_joints, env_config.max_delta,
                           config, streams.init)
    else:
        agent = agent.copy()
        agent.config = config
    env = ArmEnv(env_config, fault, goal_rng=streams.goal, fault_rng=streams.jitter)
    buffer = ReplayBuffer(config.buffer_capacity, env_config.obs_dim, env_config.n_joints)
    snapshot_episodes = set(snapshot_episodes)
    curve = LearningCurve()
    for ep in range(episodes):
        evaluation = is_eval_episode(ep, config.eval_every)
        sigma = config.noise_at(ep)
        obs = env.reset()
        ret, steps, success = 0.0, 0, False
        while True:
            a = act(agent, obs, explore=not evaluation, rng=streams.explore, noise_std=sigma)
            tr = env.step(a)
            next_obs = env.observation()
            ret += tr.reward
            steps += 1
            if not evaluation:
                buffer.add(obs, tr.action, tr.reward, next_obs, tr.success)
                if ready_to_train(agent, buffer):
                    train_step(agent, buffer, config.batch_size, streams.replay)
            obs = next_obs
            if tr.done:
                success = tr.success
                break
        curve.append(EpisodeRecord(ep, ret, int(success), steps, evaluation=evaluation))
        if ep in snapshot_episodes and on_snapshot is not None:
            on_snapshot(ep, agent)
    return curve, agent


# -- checkpoints --------------------------------------------------------------

_NETS = ("actor", "critic", "actor_target", "critic_target")


def save_agent(agent: Agent, directory, prefix: str = "") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in _NETS:
        neural.save(getattr(agent, name), d / f"{prefix}{name}.bin")
    lines = [f"max_delta = {agent.max_delta!r}"]
    lines += [f"ddpg.{k} = {v!r}" for k, v in vars(agent.config).items()]
    (d / f"{prefix}agent.txt").write_text("\n".join(lines) + "\n")


def load_agent(directory, prefix: str = "", config: DdpgConfig | None = None) -> Agent:
    d = Path(directory)
    nets = {name: neural.load(d / f"{prefix}{name}.bin") for name in _NETS}
    max_delta = None
    for line in (d / f"{prefix}agent.txt").read_text().splitlines():
        key, _, value = line.partition(" = ")
        if key == "max_delta":
            max_delta = float(value)
    cfg = config or DdpgConfig()
    return Agent(
        nets["actor"], nets["critic"], nets["actor_target"], nets["critic_target"],
        AdamState.zeros(nets["actor"].spec.n_params), AdamState.zeros(nets["critic"].spec.n_params),
        cfg, max_delta,
    )
