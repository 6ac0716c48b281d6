"""Bayesian policy morphing on top of the DDPG learner.

A behavior ensemble (snapshots of the healthy actor/critic) is summarized by a
diagonal Gaussian over parameters. During post-fault training the learner keeps
a confidence that this prior still explains observed values, periodically draws
a candidate actor from the ensemble posterior (Thompson sampling), scores it
against the current actor with the online critic, and blends it into the
actor only when the accept/reject rule allows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import ddpg, neural
from .curves import EpisodeRecord, LearningCurve, is_eval_episode
from .ddpg import Agent, DdpgConfig, Losses, ReplayBuffer
from .env import ArmConfig, ArmEnv, FaultSpec, HEALTHY, Transition
from .neural import AdamState, ParamVector
from .streams import Streams, make_streams

STEP_LOG_COLUMNS = ("episode", "step", "reward", "beta", "likelihood", "proposal_flag", "rho",
                    "accepted_flag")

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class InvalidInput(ValueError):
    pass


def gaussian_density(x, mean, std: float):
    z = (np.asarray(x, dtype=np.float64) - mean) / std
    return np.exp(-0.5 * z * z) / (std * _SQRT_2PI)


@dataclass(frozen=True)
class BpmConfig:
    evidence_std: float = 1.0
    beta_prior: float = 0.5
    # bounds keep the log-odds finite so a rejected prior can be trusted again
    beta_min: float = 1e-6
    floor_std: float = 1e-3
    blend_rate: float = 0.2
    # 0: one proposal per episode; k > 0: every k training steps; inf: never
    proposal_every: float = 0
    use_filter: bool = True
    acceptance_batch: int = 128

    def __post_init__(self):
        if self.evidence_std <= 0 or self.floor_std <= 0:
            raise InvalidInput("evidence_std and floor_std must be positive")
        if not 0 <= self.beta_prior <= 1:
            raise InvalidInput("beta_prior must be a probability")
        if not 0 < self.blend_rate <= 1:
            raise InvalidInput("blend_rate must lie in (0, 1]")
        if self.proposal_every < 0:
            raise InvalidInput("proposal_every must be >= 0")

    @property
    def reference_likelihood(self) -> float:
        """Likelihood of the no-match hypothesis: Gaussian density two stds out."""
        return float(gaussian_density(2.0 * self.evidence_std, 0.0, self.evidence_std))

    @property
    def likelihood_floor(self) -> float:
        return float(gaussian_density(4.0 * self.evidence_std, 0.0, self.evidence_std))

    @property
    def proposals_enabled(self) -> bool:
        return math.isfinite(self.proposal_every)


# -- ensemble -----------------------------------------------------------------

@dataclass(frozen=True)
class BehaviorEnsemble:
    actors: tuple[ParamVector, ...]
    critics: tuple[ParamVector, ...]
    actor_mean: ParamVector
    actor_std: np.ndarray
    critic_mean: ParamVector
    critic_std: np.ndarray
    floor_std: float

    @property
    def size(self) -> int:
        return len(self.actors)


def _mean_std(vectors: Sequence[ParamVector], floor_std: float) -> tuple[ParamVector, np.ndarray]:
    spec = vectors[0].spec
    if any(v.spec != spec for v in vectors):
        raise InvalidInput("snapshots instantiate different network specs")
    stack = np.stack([v.values for v in vectors])
    mean = stack.mean(axis=0)
    std = np.maximum(stack.std(axis=0), floor_std)
    return ParamVector(mean, spec), std


def build_ensemble(snapshots: Sequence[tuple[ParamVector, ParamVector]],
                   floor_std: float = 1e-3) -> BehaviorEnsemble:
    """Diagonal Gaussian (population std, floored) over actor and critic snapshots."""
    if len(snapshots) < 2:
        raise InvalidInput("an ensemble needs at least two snapshots")
    if floor_std <= 0:
        raise InvalidInput("floor_std must be positive")
    actors = tuple(a for a, _ in snapshots)
    critics = tuple(c for _, c in snapshots)
    a_mean, a_std = _mean_std(actors, floor_std)
    c_mean, c_std = _mean_std(critics, floor_std)
    return BehaviorEnsemble(actors, critics, a_mean, a_std, c_mean, c_std, float(floor_std))


def thompson_sample(ensemble: BehaviorEnsemble, rng: np.random.Generator) -> ParamVector:
    values = rng.normal(ensemble.actor_mean.values, ensemble.actor_std)
    return ParamVector(values, ensemble.actor_mean.spec)


# -- confidence ---------------------------------------------------------------

@dataclass(frozen=True)
class Confidence:
    beta: float
    reference_likelihood: float
    likelihood_floor: float
    beta_min: float = 0.0
    # optional append-only (likelihood, beta) log shared along an update chain
    history: list | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0 or math.isnan(self.beta):
            raise InvalidInput(f"beta must lie in [0, 1], got {self.beta}")

    @classmethod
    def from_config(cls, config: BpmConfig, record: bool = False) -> "Confidence":
        return cls(config.beta_prior, config.reference_likelihood, config.likelihood_floor,
                   config.beta_min, [] if record else None)

    @property
    def threshold(self) -> float:
        return 1.0 - self.beta


def update_confidence(conf: Confidence, likelihood: float) -> Confidence:
    """Two-hypothesis Bayes update: prior matches vs. a fixed reference likelihood."""
    if likelihood < 0 or math.isnan(likelihood):
        raise InvalidInput("likelihood must be a non-negative number")
    lik = max(float(likelihood), conf.likelihood_floor)
    b = conf.beta
    num = lik * b
    den = num + conf.reference_likelihood * (1.0 - b)
    new = num / den if den > 0 else b
    new = min(max(new, conf.beta_min), 1.0 - conf.beta_min)
    if conf.history is not None:
        conf.history.append((lik, new))
    return replace(conf, beta=new)


def evidence_likelihood(ensemble: BehaviorEnsemble, agent: Agent, obs, action, reward: float,
                        next_obs, terminal: bool, evidence_std: float = 1.0) -> float:
    """Density of the observed bootstrapped value under the ensemble critic's prediction.

    The observed value is ``r + gamma * Q_target(s', actor_target(s'))``; the
    prediction is the ensemble-mean critic at ``(s, a)``.
    """
    y = ddpg.td_targets(agent, np.array([reward]), np.asarray(next_obs)[None, :],
                        np.array([float(terminal)]))[0]
    pred = neural.forward(ensemble.critic_mean, ddpg.critic_input(agent, obs, action))[0]
    return float(gaussian_density(y, pred, evidence_std))


def select_representation(confidences: Sequence[float], recent_returns: Sequence[Sequence[float]]) -> int:
    """Index maximizing confidence times mean recent return."""
    if len(confidences) == 0:
        raise InvalidInput("no representations to choose from")
    if len(confidences) != len(recent_returns):
        raise InvalidInput("confidences and returns are not aligned")
    scores = [b * float(np.mean(r)) if len(r) else 0.0 for b, r in zip(confidences, recent_returns)]
    return int(np.argmax(scores))


# -- proposals ----------------------------------------------------------------

@dataclass(frozen=True)
class BiasProposal:
    candidate_actor: ParamVector
    rho: float
    threshold: float
    accepted: bool
    blend_rate: float


def acceptance_statistic(agent: Agent, candidate_actor: ParamVector, obs_batch) -> float:
    """Fraction of states where the critic strictly prefers the candidate's action."""
    obs = np.asarray(obs_batch, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise InvalidInput("need a non-empty batch of observations")
    q_cand = ddpg.critic_value(agent, obs, ddpg.policy(candidate_actor, obs, agent.max_delta))
    q_cur = ddpg.critic_value(agent, obs, ddpg.policy(agent.actor, obs, agent.max_delta))
    return float(np.mean(q_cand > q_cur))


def accept_reject(rho: float, conf: Confidence | float) -> bool:
    """Accept when rho exceeds 1 - beta: a trusted prior clears a low bar."""
    beta = conf.beta if isinstance(conf, Confidence) else float(conf)
    return rho > 1.0 - beta


def apply_bias(agent: Agent, candidate_actor: ParamVector, blend_rate: float) -> Agent:
    """Convex blend of the candidate into the online actor; actor Adam moments reset."""
    if not 0 < blend_rate <= 1:
        raise InvalidInput("blend_rate must lie in (0, 1]")
    if candidate_actor.spec != agent.actor.spec:
        raise InvalidInput("candidate does not match the actor architecture")
    out = agent.copy()
    out.actor = ParamVector(
        (1.0 - blend_rate) * agent.actor.values + blend_rate * candidate_actor.values,
        agent.actor.spec,
    )
    out.actor_opt = AdamState.zeros(agent.actor.spec.n_params)
    return out


def propose(agent: Agent, ensemble: BehaviorEnsemble, conf: Confidence, buffer: ReplayBuffer,
            config: BpmConfig, streams: Streams) -> tuple[Agent, BiasProposal]:
    candidate = thompson_sample(ensemble, streams.thompson)
    n = min(config.acceptance_batch, len(buffer))
    idx = streams.proposal.integers(0, len(buffer), size=n)
    rho = acceptance_statistic(agent, candidate, buffer.obs[idx])
    accepted = accept_reject(rho, conf) if config.use_filter else True
    proposal = BiasProposal(candidate, rho, conf.threshold, accepted, config.blend_rate)
    if accepted:
        agent = apply_bias(agent, candidate, config.blend_rate)
    return agent, proposal


# -- the per-step loop body ---------------------------------------------------

@dataclass
class StepResult:
    transition: Transition
    obs: np.ndarray
    next_obs: np.ndarray
    confidence: Confidence
    likelihood: float
    proposal: BiasProposal | None
    losses: Losses | None


@dataclass
class BpmLoopState:
    """Mutable per-run state carried between :func:`bpm_step` calls."""
    agent: Agent
    confidence: Confidence
    buffer: ReplayBuffer
    train_steps: int = 0


def _proposal_due(config: BpmConfig, loop: BpmLoopState, episode_step: int) -> bool:
    if not config.proposals_enabled or len(loop.buffer) == 0:
        return False
    if config.proposal_every == 0:
        return episode_step == 0
    return loop.train_steps % int(config.proposal_every) == 0


def bpm_step(loop: BpmLoopState, ensemble: BehaviorEnsemble, env: ArmEnv, obs: np.ndarray,
             episode_step: int, noise_std: float, config: BpmConfig, streams: Streams,
             explore: bool = True) -> StepResult:
    """One interaction step: act, observe, update confidence, maybe propose, train."""
    agent = loop.agent
    a = ddpg.act(agent, obs, explore=explore, rng=streams.explore, noise_std=noise_std)
    tr = env.step(a)
    next_obs = env.observation()
    if not explore:
        return StepResult(tr, obs, next_obs, loop.confidence, float("nan"), None, None)
    loop.buffer.add(obs, tr.action, tr.reward, next_obs, tr.success)
    lik = float("nan")
    # without proposals the confidence has no consumer; the loop reduces to DDPG
    if config.proposals_enabled:
        lik = evidence_likelihood(ensemble, agent, obs, tr.action, tr.reward, next_obs,
                                  tr.success, config.evidence_std)
        loop.confidence = update_confidence(loop.confidence, lik)
    proposal = None
    if _proposal_due(config, loop, episode_step):
        loop.agent, proposal = propose(loop.agent, ensemble, loop.confidence, loop.buffer,
                                       config, streams)
    losses = None
    if ddpg.ready_to_train(loop.agent, loop.buffer):
        losses = ddpg.train_step(loop.agent, loop.buffer, loop.agent.config.batch_size,
                                 streams.replay)
    loop.train_steps += 1
    return StepResult(tr, obs, next_obs, loop.confidence, lik, proposal, losses)


def train_run(
    env_config: ArmConfig,
    ensemble: BehaviorEnsemble,
    agent: Agent,
    fault: FaultSpec = HEALTHY,
    episodes: int = 0,
    seed: int = 0,
    config: BpmConfig | None = None,
    ddpg_config: DdpgConfig | None = None,
    streams: Streams | None = None,
    step_log=None,
) -> tuple[LearningCurve, Agent]:
    """Post-fault training from a pre-trained agent with bias proposals.

    ``step_log``, when given, is called with one tuple per interaction step in
    :data:`STEP_LOG_COLUMNS` order.
    """
    config = config or BpmConfig()
    dcfg = ddpg_config or agent.config
    streams = streams or make_streams(seed, fault.rng_stream_id)
    agent = agent.copy()
    agent.config = dcfg
    env = ArmEnv(env_config, fault, goal_rng=streams.goal, fault_rng=streams.jitter)
    loop = BpmLoopState(agent, Confidence.from_config(config),
                        ReplayBuffer(dcfg.buffer_capacity, env_config.obs_dim, env_config.n_joints))
    curve = LearningCurve()
    for ep in range(episodes):
        evaluation = is_eval_episode(ep, dcfg.eval_every)
        sigma = dcfg.noise_at(ep)
        obs = env.reset()
        ret, steps, accepts = 0.0, 0, 0
        while True:
            res = bpm_step(loop, ensemble, env, obs, steps, sigma, config, streams,
                           explore=not evaluation)
            tr = res.transition
            ret += tr.reward
            steps += 1
            p = res.proposal
            if p is not None and p.accepted:
                accepts += 1
            if step_log is not None:
                step_log((ep, steps - 1, tr.reward, loop.confidence.beta, res.likelihood,
                          int(p is not None), p.rho if p is not None else float("nan"),
                          int(p is not None and p.accepted)))
            obs = res.next_obs
            if tr.done:
                break
        beta_end = loop.confidence.beta if config.proposals_enabled else float("nan")
        curve.append(EpisodeRecord(ep, ret, int(tr.success), steps, beta_end, accepts, evaluation))
    return curve, loop.agent
