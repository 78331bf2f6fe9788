"""Cascading actor-critic agents: head group, operation, tail group.

The two cluster agents score a variable number of candidates by running a
shared scalar-head network on concat(state prefix, candidate state) and
softmaxing the scores; the operation agent is a fixed softmax head over the
operation set.  Updates happen once per episode on that episode's transition
batch: the critic descends the squared TD error and the actor ascends
log pi(a|S) * advantage + beta * entropy (the update negates the returned
ascent objective).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import FeatureSet
from .info_metrics import PairwiseDistanceKind
from .neural_core import (
    HEAD_SCALAR,
    HEAD_SOFTMAX,
    DenseNet,
    Grads,
    OptimState,
    backward,
    forward,
    grads_add,
    grads_scale,
    grads_zero,
    init_dense,
    log_softmax,
    logits as net_logits,
    sgd_step,
    softmax,
)
from .state_repr import EncoderKind, StateVector, concat_states
from .transform import OperationSet

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Search and optimization knobs; defaults target desk-scale runs."""

    gamma: float = 0.9
    beta: float = 0.01
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    hidden: int = 64
    episodes: int = 30
    steps: int = 15
    encoder: EncoderKind = EncoderKind.SI
    k: int = 8
    d: int = 8
    encoder_epochs: int = 20
    delta: float = 1.0
    distance: PairwiseDistanceKind = PairwiseDistanceKind.EUCLIDEAN
    op_set: OperationSet = field(default_factory=OperationSet)
    max_size: int | None = None  # None: twice the original column count
    bins: int | None = None  # None: min(16, ceil(sqrt(M)))
    cross_cap: int = 64
    max_lineage_depth: int = 6
    clip_norm: float = 5.0
    seed: int = 0
    full_gradient_critic: bool = False
    skip_tail_on_unary: bool = False
    carry_features: bool = False
    si_raw_count: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.episodes < 1 or self.steps < 1:
            raise ValueError("episodes and steps must be >= 1")


@dataclass
class AgentBundle:
    actor: DenseNet
    critic: DenseNet
    actor_opt: OptimState
    critic_opt: OptimState


@dataclass
class Transition:
    """One agent step: critic state, sampled action, reward, bootstrap state.

    For the cluster agents ``candidate_inputs`` holds the actor's per-candidate
    input rows at selection time (the actor's effective state under a variable
    action space); the operation agent leaves it None and feeds ``state``
    straight into its softmax actor.
    """

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    log_prob: float
    candidate_inputs: np.ndarray | None = None


def make_bundles(state_len: int, n_ops: int, cfg: TrainConfig,
                 rng: np.random.Generator) -> tuple[AgentBundle, AgentBundle, AgentBundle]:
    """Build (head, operation, tail) agents for a given encoder length."""
    length = state_len

    def bundle(actor_in: int, actor_out: int, head: str, critic_in: int) -> AgentBundle:
        return AgentBundle(
            actor=init_dense(actor_in, cfg.hidden, actor_out, head, rng),
            critic=init_dense(critic_in, cfg.hidden, 1, HEAD_SCALAR, rng),
            actor_opt=OptimState(lr=cfg.actor_lr, clip_norm=cfg.clip_norm),
            critic_opt=OptimState(lr=cfg.critic_lr, clip_norm=cfg.clip_norm),
        )

    head_agent = bundle(2 * length, 1, HEAD_SCALAR, length)
    op_agent = bundle(2 * length, n_ops, HEAD_SOFTMAX, 2 * length)
    tail_agent = bundle(3 * length + n_ops, 1, HEAD_SCALAR, 2 * length + n_ops)
    return head_agent, op_agent, tail_agent


def _candidate_rows(prefix: np.ndarray, candidates: Sequence[StateVector]) -> np.ndarray:
    return np.stack([np.concatenate([prefix, c.values]) for c in candidates])


def _sample(logits: np.ndarray, rng: np.random.Generator | None,
            greedy: bool) -> tuple[int, float, np.ndarray]:
    probs = softmax(logits)
    if greedy or rng is None:
        action = int(np.argmax(probs))
    else:
        action = int(rng.choice(probs.size, p=probs / probs.sum()))
    log_prob = float(log_softmax(logits)[action])
    return action, log_prob, probs


def select_head(
    agent: AgentBundle,
    s_f: StateVector,
    cluster_states: Sequence[StateVector],
    rng: np.random.Generator | None,
    greedy: bool = False,
) -> tuple[int, float, np.ndarray]:
    """Score each candidate group given the space state; sample the softmax."""
    rows = _candidate_rows(s_f.values, cluster_states)
    logits = np.atleast_1d(forward(agent.actor, rows))
    return _sample(logits, rng, greedy)


def select_op(
    agent: AgentBundle,
    s_f: StateVector,
    s_head: StateVector,
    op_set: OperationSet,
    rng: np.random.Generator | None,
    greedy: bool = False,
) -> tuple[int, float, np.ndarray]:
    """Sample an operation from the softmax over the fixed set."""
    state = concat_states([s_f, s_head]).values
    return _sample(net_logits(agent.actor, state), rng, greedy)


def select_tail(
    agent: AgentBundle,
    s_f: StateVector,
    s_head: StateVector,
    s_op: StateVector,
    cluster_states: Sequence[StateVector],
    rng: np.random.Generator | None,
    greedy: bool = False,
) -> tuple[int, float, np.ndarray]:
    """Like select_head with the longer (space + head + op) state prefix."""
    prefix = concat_states([s_f, s_head, s_op]).values
    rows = _candidate_rows(prefix, cluster_states)
    logits = np.atleast_1d(forward(agent.actor, rows))
    return _sample(logits, rng, greedy)


def compute_rewards(
    fs_t: FeatureSet,
    fs_next: FeatureSet,
    head_view: FeatureSet,
    quality_fn: Callable[[FeatureSet], float],
    score_fn: Callable[[FeatureSet], float],
) -> tuple[float, float, float]:
    """(head-group quality, quality + downstream improvement, new-space quality)."""
    r_head = quality_fn(head_view)
    u_next = quality_fn(fs_next)
    r_op = u_next + score_fn(fs_next) - score_fn(fs_t)
    return r_head, r_op, u_next


def _actor_logit_grad(probs: np.ndarray, action: int, advantage: float,
                      beta: float) -> np.ndarray:
    """d/dlogits of log pi(a) * advantage + beta * H(pi) (ascent direction)."""
    onehot = np.zeros_like(probs)
    onehot[action] = 1.0
    with np.errstate(divide="ignore"):
        logp = np.where(probs > 0.0, np.log(probs), 0.0)
    entropy = -float(np.sum(probs * logp))
    return (onehot - probs) * advantage + beta * (-probs * (logp + entropy))


def _entropy(probs: np.ndarray) -> float:
    with np.errstate(divide="ignore"):
        logp = np.where(probs > 0.0, np.log(probs), 0.0)
    return -float(np.sum(probs * logp))


def advantage_and_losses(
    transitions: Sequence[Transition],
    bundle: AgentBundle,
    gamma: float,
    beta: float,
    full_gradient_critic: bool = False,
) -> tuple[float, float, Grads, Grads]:
    """Batch losses and gradients for one agent.

    Returns (critic loss, actor ascent objective, actor gradients of the
    ascent objective, critic gradients of the descent loss).  The TD target
    r + gamma * V(S') is gradient-stopped unless ``full_gradient_critic``.
    """
    n = len(transitions)
    if n < 1:
        raise ValueError("need at least one transition")
    critic_grads = grads_zero(bundle.critic)
    actor_grads = grads_zero(bundle.actor)
    critic_loss = 0.0
    actor_objective = 0.0
    for t in transitions:
        v_s = forward(bundle.critic, t.state)
        v_next = forward(bundle.critic, t.next_state)
        delta = t.reward + gamma * v_next - v_s
        critic_loss += delta * delta / n
        g_s, _ = backward(bundle.critic, t.state, np.array([-2.0 * delta / n]))
        critic_grads = grads_add(critic_grads, g_s)
        if full_gradient_critic:
            g_n, _ = backward(bundle.critic, t.next_state,
                              np.array([2.0 * gamma * delta / n]))
            critic_grads = grads_add(critic_grads, g_n)
        if t.candidate_inputs is not None:
            logit_vec = np.atleast_1d(forward(bundle.actor, t.candidate_inputs))
            probs = softmax(logit_vec)
            dlogits = _actor_logit_grad(probs, t.action, delta, beta) / n
            g_a, _ = backward(bundle.actor, t.candidate_inputs, dlogits[:, None])
        else:
            logit_vec = net_logits(bundle.actor, t.state)
            probs = softmax(logit_vec)
            dlogits = _actor_logit_grad(probs, t.action, delta, beta) / n
            g_a, _ = backward(bundle.actor, t.state, dlogits)
        actor_grads = grads_add(actor_grads, g_a)
        actor_objective += (float(log_softmax(logit_vec)[t.action]) * delta
                            + beta * _entropy(probs)) / n
    return float(critic_loss), float(actor_objective), actor_grads, critic_grads


def update_agents(
    bundles: tuple[AgentBundle, AgentBundle, AgentBundle],
    episode: tuple[Sequence[Transition], Sequence[Transition], Sequence[Transition]],
    cfg: TrainConfig,
) -> tuple[tuple[AgentBundle, AgentBundle, AgentBundle], dict[str, float]]:
    """One gradient step per agent on its episode batch; non-finite losses skip
    that agent's update with a warning."""
    updated = []
    report: dict[str, float] = {}
    for name, bundle, transitions in zip(("head", "op", "tail"), bundles, episode):
        if len(transitions) == 0:
            updated.append(bundle)
            continue
        critic_loss, actor_objective, actor_grads, critic_grads = advantage_and_losses(
            transitions, bundle, cfg.gamma, cfg.beta, cfg.full_gradient_critic
        )
        report[f"{name}_critic_loss"] = critic_loss
        report[f"{name}_actor_objective"] = actor_objective
        if not (math.isfinite(critic_loss) and math.isfinite(actor_objective)):
            logger.warning("non-finite loss for %s agent; skipping its update", name)
            updated.append(bundle)
            continue
        critic = sgd_step(bundle.critic, critic_grads, bundle.critic_opt)
        actor = sgd_step(bundle.actor, grads_scale(actor_grads, -1.0), bundle.actor_opt)
        updated.append(AgentBundle(actor, critic, bundle.actor_opt, bundle.critic_opt))
    return (updated[0], updated[1], updated[2]), report
