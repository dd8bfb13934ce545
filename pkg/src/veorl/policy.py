"""Model-based actor-critic over dual-stream imagined rollouts.

Both actor and critic are conditioned on the model state and the latent
behavior predicted by the BC head. The trunk stream supplies predicted
extrinsic rewards; the plan stream supplies behavior-driven subgoal states
whose distance to the trunk state is the intrinsic reward.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, ParamStore, std_from_raw
from .worldmodel import ModelState, WorldModel

LOG_STD_RAW_MIN = -5.0


@dataclass
class ActionSpace:
    kind: str        # "discrete" | "continuous"
    dim: int         # number of actions | action vector width

    @property
    def default_rho(self):
        return 1 if self.kind == "discrete" else 0


def _safe_sqrt(x: Tensor) -> Tensor:
    """sqrt with a bounded backward at 0 (value stays exact)."""
    data = np.sqrt(x.data)

    def bwd(g):
        if x.requires_grad:
            x._accum(g * 0.5 / np.maximum(data, 1e-8))

    return Tensor(data, parents=(x,), backward=bwd)


def intrinsic_reward(s: Tensor, s_bar: Tensor) -> Tensor:
    """Negative L2 distance between trunk and plan states; always <= 0."""
    if s.shape != s_bar.shape:
        raise ValueError(f"state width mismatch: {s.shape} vs {s_bar.shape}")
    axis = -1 if len(s.shape) > 1 else None
    return -_safe_sqrt(ad.sum_(ad.square(s - s_bar), axis=axis))


class CategoricalDist:
    def __init__(self, logits: Tensor):
        self.logits = logits
        self.log_probs = ad.log_softmax(logits, axis=-1)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    def sample(self, rng) -> np.ndarray:
        p = self.probs()
        cum = np.cumsum(p, axis=-1)
        u = rng.random(p.shape[:-1] + (1,))
        return (u >= cum).sum(axis=-1)

    def mode(self) -> np.ndarray:
        return np.argmax(self.logits.data, axis=-1)

    def log_prob(self, indices) -> Tensor:
        idx = np.asarray(indices)
        if self.log_probs.data.ndim == 1:
            return self.log_probs[int(idx)]
        return self.log_probs[np.arange(len(idx)), idx]

    def entropy(self) -> Tensor:
        p = ad.exp(self.log_probs)
        return -ad.sum_(ad.mul(self.log_probs, p), axis=-1)


class TanhGaussianDist:
    """Diagonal Gaussian squashed through tanh onto [-1, 1]^A."""

    def __init__(self, mean: Tensor, std: Tensor):
        self.mean = mean
        self.std = std

    def rsample(self, noise):
        noise = ad.as_tensor(noise.astype(self.mean.data.dtype))
        pre = self.mean + ad.mul(self.std, noise)
        return ad.tanh(pre), pre

    def mode(self) -> np.ndarray:
        return np.tanh(self.mean.data)

    def log_prob(self, action: Tensor, pre_tanh: Tensor) -> Tensor:
        # Gaussian logpdf of pre_tanh minus the tanh Jacobian correction
        z = (pre_tanh - self.mean) / self.std
        base = ad.sum_(-0.5 * ad.square(z) - ad.log(self.std)
                       - 0.5 * np.log(2 * np.pi), axis=-1)
        jac = ad.sum_(ad.log(1.0 - ad.square(action) + 1e-6), axis=-1)
        return base - jac

    def entropy_sample(self, action: Tensor, pre_tanh: Tensor) -> Tensor:
        """Single-sample entropy estimate -ln p(a); no closed form exists."""
        return -self.log_prob(action, pre_tanh)


class ActorCritic:
    """Behavior-conditioned policy and value networks."""

    def __init__(self, store: ParamStore, state_dim, code_dim,
                 action_space: ActionSpace, rng, units=64):
        self.store = store
        self.state_dim = state_dim
        self.code_dim = code_dim
        self.action_space = action_space
        in_dim = state_dim + code_dim
        out = action_space.dim if action_space.kind == "discrete" else 2 * action_space.dim
        # 4-layer actor, 3-layer critic, per the reference layer counts
        self.actor = MLP(store, "actor", [in_dim, units, units, units, out], rng)
        self.critic = MLP(store, "critic", [in_dim, units, units, 1], rng)

    def actor_param_names(self):
        return self.actor.param_names()

    def critic_param_names(self):
        return self.critic.param_names()

    def _joint(self, state_s: Tensor, code: Tensor) -> Tensor:
        if state_s.shape[-1] != self.state_dim:
            raise ValueError(f"state width {state_s.shape[-1]} != {self.state_dim}")
        if code.shape[-1] != self.code_dim:
            raise ValueError(f"code width {code.shape[-1]} != {self.code_dim}")
        return ad.concat([state_s, code], axis=-1)

    def actor_dist(self, state_s: Tensor, code: Tensor):
        out = self.actor(self._joint(state_s, code))
        if self.action_space.kind == "discrete":
            return CategoricalDist(out)
        a = self.action_space.dim
        raw = out[..., a:]
        # keep raw pre-stddev bounded below so log_prob stays finite
        raw = ad.relu(raw - LOG_STD_RAW_MIN) + LOG_STD_RAW_MIN
        return TanhGaussianDist(out[..., :a], std_from_raw(raw))

    def critic_value(self, state_s: Tensor, code: Tensor) -> Tensor:
        return self.critic(self._joint(state_s, code))[..., 0]


@dataclass
class DualRollout:
    """Imagined trunk/plan trajectories, arrays indexed t = 1..L."""
    start: ModelState
    states: list = field(default_factory=list)        # trunk states s_1..s_L
    plan_states: list = field(default_factory=list)   # plan states s̄_1..s̄_L
    code_indices: list = field(default_factory=list)  # BC mode at s_1..s_L
    codes: list = field(default_factory=list)         # code vectors (constants)
    actions: list = field(default_factory=list)       # a_t taken at s_t, t=0..L-1
    log_probs: list = field(default_factory=list)
    entropies: list = field(default_factory=list)
    rewards: list = field(default_factory=list)       # r̂_1..r̂_L (Tensors)
    intrinsic: list = field(default_factory=list)     # r̄_1..r̄_L (Tensors)

    @property
    def horizon(self):
        return len(self.states)


def imagine_dual(wm: WorldModel, codebook, ac: ActorCritic, start: ModelState,
                 horizon, rng, plan_rollout="reanchored") -> DualRollout:
    """Roll both streams for `horizon` steps from a posterior start state.

    At every step the BC head picks the latent behavior at the current
    trunk state; the actor (conditioned on it) picks the low-level action.
    In "reanchored" mode the plan stream also steps from the current trunk
    state; in "free" mode it rolls autonomously from its own state.
    """
    if horizon < 1:
        raise ValueError("imagination horizon must be >= 1")
    dt = wm.store.dtype
    roll = DualRollout(start=start)
    state = start
    plan_state = start
    B = start.h.shape[0]
    code_values = codebook.values().astype(dt)

    def behavior_at(st):
        idx = np.argmax(wm.bc_logits(st).data, axis=-1)
        return idx, ad.as_tensor(code_values[idx])

    prev_idx, prev_code = behavior_at(state)
    for t in range(horizon):
        dist = ac.actor_dist(state.s, prev_code)
        if ac.action_space.kind == "discrete":
            a_idx = dist.sample(rng)
            action = ad.as_tensor(np.eye(ac.action_space.dim, dtype=dt)[a_idx])
            log_prob = dist.log_prob(a_idx)
            entropy = dist.entropy()
        else:
            action, pre = dist.rsample(rng.standard_normal((B, ac.action_space.dim)))
            log_prob = dist.log_prob(action, pre)
            entropy = dist.entropy_sample(ad.stop_gradient(action), ad.stop_gradient(pre))
        anchor = state if plan_rollout == "reanchored" else plan_state
        noise_t = rng.standard_normal((B, wm.stoch_dim))
        noise_p = rng.standard_normal((B, wm.stoch_dim))
        state = wm.trunk_step(state, action, noise=noise_t, use_posterior=False).state
        plan_state = wm.plan_step(anchor, prev_code, noise=noise_p, use_posterior=False).state
        roll.actions.append(action)
        roll.log_probs.append(log_prob)
        roll.entropies.append(entropy)
        roll.states.append(state)
        roll.plan_states.append(plan_state)
        roll.rewards.append(wm.reward(state))
        roll.intrinsic.append(intrinsic_reward(state.s, plan_state.s))
        prev_idx, prev_code = behavior_at(state)
        roll.code_indices.append(prev_idx)
        roll.codes.append(prev_code)
    return roll


def lambda_targets(rollout: DualRollout, ac: ActorCritic, omega, gamma, lam):
    """Backward-recursive λ-targets V_1..V_L; V_L bootstraps from the critic."""
    L = rollout.horizon
    values = [ac.critic_value(s.s, c) for s, c in zip(rollout.states, rollout.codes)]
    targets = [None] * L
    targets[L - 1] = values[L - 1]
    for t in range(L - 2, -1, -1):
        r = rollout.rewards[t] + omega * rollout.intrinsic[t]
        targets[t] = r + gamma * ((1.0 - lam) * values[t + 1] + lam * targets[t + 1])
    return targets, values


def critic_loss(targets, values) -> Tensor:
    """Mean over t=1..L-1 of half squared error against sg(V_t)."""
    L = len(targets)
    terms = [0.5 * ad.square(values[t] - ad.stop_gradient(targets[t]))
             for t in range(L - 1)]
    return ad.mean(ad.stack([ad.mean(x) for x in terms]))


def actor_loss(rollout: DualRollout, targets, values, rho, eta) -> Tensor:
    """Dynamics-backprop / entropy / REINFORCE terms, gated by rho."""
    if rho not in (0, 1):
        raise ValueError("rho must be 0 or 1")
    L = len(targets)
    terms = []
    # sum over t = 1..L-1; actions[t] was taken at s_t, targets[t-1] is V_t
    for t in range(1, L):
        term = -eta * ad.mean(rollout.entropies[t])
        if rho == 0:
            term = term - ad.mean(targets[t - 1])
        else:
            adv = ad.stop_gradient(targets[t - 1] - values[t - 1])
            term = term - ad.mean(ad.mul(rollout.log_probs[t], adv))
        terms.append(term)
    return ad.mean(ad.stack(terms))
