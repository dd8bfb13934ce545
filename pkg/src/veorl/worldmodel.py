"""Two-stream recurrent world model.

Trunk net: real-action RSSM with a reward head, trained on the target
dataset only. Plan net: latent-behavior RSSM with a behavior-cloning head,
trained on shortcut trajectories from both domains. The two streams share
one image encoder and decoder; everything else is separate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (
    MLP, GRUCell, ParamStore, DiagGaussian,
    gaussian_rsample, gaussian_nll, kl_diag_gaussian, std_from_raw,
)

SHARED_PREFIXES = ("enc", "dec")


@dataclass
class ModelState:
    h: Tensor
    z: Tensor

    @property
    def s(self) -> Tensor:
        return ad.concat([self.h, self.z], axis=-1)

    @property
    def width(self):
        return self.h.shape[-1] + self.z.shape[-1]


@dataclass
class StepOutput:
    state: ModelState
    prior: DiagGaussian
    posterior: Optional[DiagGaussian]


class WorldModel:
    """Shared encoder/decoder plus trunk, plan, and BC parameter groups."""

    def __init__(self, store: ParamStore, obs_dim, action_dim, code_dim,
                 num_codes, rng, hidden_dim=32, stoch_dim=8, embed_dim=32,
                 units=64, free_nats=0.0, kl_balance=0.8, reward_weight=1.0,
                 reward_focus=0.0, recon_focus=0.0):
        self.store = store
        self.free_nats = float(free_nats)
        self.kl_balance = float(kl_balance)
        self.reward_weight = float(reward_weight)
        self.reward_focus = float(reward_focus)
        self.recon_focus = float(recon_focus)
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.code_dim = code_dim
        self.num_codes = num_codes
        self.hidden_dim = hidden_dim
        self.stoch_dim = stoch_dim
        self.embed_dim = embed_dim
        s_dim = hidden_dim + stoch_dim
        self.state_dim = s_dim

        # two hidden layers: one is not enough to pull small sprites out of
        # (or paint them back into) the flattened pixel vector
        self.encoder = MLP(store, "enc", [obs_dim, units, units, embed_dim], rng)
        self.decoder = MLP(store, "dec", [s_dim, units, units, obs_dim], rng)

        self.trunk_gru = GRUCell(store, "trunk.gru", s_dim + action_dim, hidden_dim, rng)
        self.trunk_prior = MLP(store, "trunk.prior", [hidden_dim, units, 2 * stoch_dim], rng)
        self.trunk_post = MLP(store, "trunk.post", [hidden_dim + embed_dim, units, 2 * stoch_dim], rng)
        self.reward_head = MLP(store, "trunk.reward", [s_dim, units, 1], rng)

        self.plan_gru = GRUCell(store, "plan.gru", s_dim + code_dim, hidden_dim, rng)
        self.plan_prior = MLP(store, "plan.prior", [hidden_dim, units, 2 * stoch_dim], rng)
        self.plan_post = MLP(store, "plan.post", [hidden_dim + embed_dim, units, 2 * stoch_dim], rng)
        self.bc_head = MLP(store, "bc", [s_dim, units, num_codes], rng)

    # -- parameter groups --------------------------------------------------

    def shared_param_names(self):
        return self.encoder.param_names() + self.decoder.param_names()

    def trunk_param_names(self):
        return (self.trunk_gru.param_names() + self.trunk_prior.param_names()
                + self.trunk_post.param_names() + self.reward_head.param_names())

    def plan_param_names(self):
        return (self.plan_gru.param_names() + self.plan_prior.param_names()
                + self.plan_post.param_names())

    def bc_param_names(self):
        return self.bc_head.param_names()

    def all_param_names(self):
        return (self.shared_param_names() + self.trunk_param_names()
                + self.plan_param_names() + self.bc_param_names())

    # -- basic ops ---------------------------------------------------------

    def initial_state(self, batch) -> ModelState:
        dt = self.store.dtype
        return ModelState(h=ad.as_tensor(np.zeros((batch, self.hidden_dim), dtype=dt)),
                          z=ad.as_tensor(np.zeros((batch, self.stoch_dim), dtype=dt)))

    def encode(self, obs: Tensor) -> Tensor:
        return self.encoder(obs)

    def decode(self, state: ModelState) -> Tensor:
        return self.decoder(state.s)

    def reward(self, state: ModelState) -> Tensor:
        return self.reward_head(state.s)[..., 0]

    def _reward_nll(self, state: ModelState, target) -> Tensor:
        """Reward error, upweighted on large |r| so rare event rewards are
        not shrunk toward the batch mean."""
        target = np.asarray(target)
        pred = self.reward(state)
        err = 0.5 * ad.square(pred - ad.as_tensor(target))
        if self.reward_focus != 0.0:
            # upweight both rare large-reward targets and confidently wrong
            # predictions, so the head neither shrinks true spikes nor keeps
            # anticipatory false positives
            w = 1.0 + self.reward_focus * (np.abs(target)
                                           + np.abs(pred.data))
            err = err * w
        return ad.sum_(err)

    def _recon_nll(self, state: ModelState, target, baseline=None) -> Tensor:
        """Pixel reconstruction error, upweighted where the target deviates
        from the batch-mean image so small moving sprites are not drowned
        out by the static background."""
        err = 0.5 * ad.square(self.decode(state) - ad.as_tensor(target))
        if self.recon_focus != 0.0 and baseline is not None:
            err = err * (1.0 + self.recon_focus * np.abs(target - baseline))
        return ad.sum_(err, axis=-1)

    def bc_logits(self, state: ModelState) -> Tensor:
        return self.bc_head(state.s)

    def _kl_term(self, posterior, prior) -> Tensor:
        """Per-step balanced KL with free bits.

        The prior is trained toward the (frozen) posterior with weight
        `kl_balance` and the posterior regularized toward the frozen prior
        with the remainder; the value equals the plain KL either way. Below
        the free-nats floor the gradient is cut.
        """
        q_sg = DiagGaussian(ad.stop_gradient(posterior.mean),
                            ad.stop_gradient(posterior.std))
        p_sg = DiagGaussian(ad.stop_gradient(prior.mean),
                            ad.stop_gradient(prior.std))
        k_prior = kl_diag_gaussian(q_sg, prior, axis=-1)
        k_post = kl_diag_gaussian(posterior, p_sg, axis=-1)
        if self.free_nats > 0.0:
            # the floor only shields the posterior from collapsing; the prior
            # always chases the posterior at full gradient so open-loop
            # rollouts stay sharp
            k_post = ad.relu(k_post - self.free_nats) + self.free_nats
        return self.kl_balance * k_prior + (1.0 - self.kl_balance) * k_post

    # soft bound on the stochastic mean; without it the posterior inflates
    # its means to drown the sampling noise, the prior cannot chase, and the
    # huge z values saturate the GRU
    MEAN_SCALE = 5.0

    def _dist(self, head, x) -> DiagGaussian:
        out = head(x)
        z = self.stoch_dim
        mean = ad.tanh(out[..., :z] * (1.0 / self.MEAN_SCALE)) * self.MEAN_SCALE
        return DiagGaussian(mean, std_from_raw(out[..., z:]))

    def _step(self, gru, prior_head, post_head, prev: ModelState, drive: Tensor,
              embedding, noise, use_posterior) -> StepOutput:
        h = gru(prev.h, ad.concat([prev.h, prev.z, drive], axis=-1))
        prior = self._dist(prior_head, h)
        posterior = None
        if embedding is not None:
            posterior = self._dist(post_head, ad.concat([h, embedding], axis=-1))
        dist = posterior if (use_posterior and posterior is not None) else prior
        if noise is None:
            z = dist.mean
        else:
            z = gaussian_rsample(dist, ad.as_tensor(noise.astype(self.store.dtype)))
        return StepOutput(state=ModelState(h=h, z=z), prior=prior, posterior=posterior)

    def trunk_step(self, prev: ModelState, action: Tensor, embedding=None,
                   noise=None, use_posterior=True) -> StepOutput:
        if action.shape[-1] != self.action_dim:
            raise ValueError(f"action width {action.shape[-1]} != {self.action_dim}")
        return self._step(self.trunk_gru, self.trunk_prior, self.trunk_post,
                          prev, action, embedding, noise, use_posterior)

    def plan_step(self, prev: ModelState, code: Tensor, embedding=None,
                  noise=None, use_posterior=True) -> StepOutput:
        if code.shape[-1] != self.code_dim:
            raise ValueError(f"code width {code.shape[-1]} != {self.code_dim}")
        return self._step(self.plan_gru, self.plan_prior, self.plan_post,
                          prev, code, embedding, noise, use_posterior)

    # -- losses ------------------------------------------------------------

    def trunk_loss(self, obs, actions, rewards, rng, return_states=False):
        """Eq-style reconstruction + reward + KL over a (B, T, ...) batch.

        obs: (B, T, obs_dim); actions: (B, T-1, A); rewards: (B, T-1).
        Reward r_{t-1} is predicted from the state after consuming o_t.
        """
        dt = self.store.dtype
        obs = np.asarray(obs, dtype=dt)
        actions = np.asarray(actions, dtype=dt)
        rewards = np.asarray(rewards, dtype=dt)
        B, T = obs.shape[:2]
        base = obs.reshape(-1, obs.shape[-1]).mean(axis=0)
        state = self.initial_state(B)
        zero_action = ad.as_tensor(np.zeros((B, self.action_dim), dtype=dt))
        recon = kl = rew = None
        states = []
        posteriors = []
        for t in range(T):
            a_prev = zero_action if t == 0 else ad.as_tensor(actions[:, t - 1])
            e = self.encode(ad.as_tensor(obs[:, t]))
            noise = rng.standard_normal((B, self.stoch_dim))
            out = self.trunk_step(state, a_prev, embedding=e, noise=noise)
            state = out.state
            states.append(state)
            posteriors.append(out.posterior)
            # decode the posterior mean: the sample feeds the recurrence, but
            # recon through the noisy sample starves the encoder of gradient
            r_t = self._recon_nll(ModelState(h=state.h, z=out.posterior.mean),
                                  obs[:, t], base)
            k_t = self._kl_term(out.posterior, out.prior)
            recon = r_t if recon is None else recon + r_t
            kl = k_t if kl is None else kl + k_t
            if t >= 1:
                w_t = self._reward_nll(state, rewards[:, t - 1])
                rew = w_t if rew is None else rew + w_t
        # open-loop pass: re-roll the window from the first posterior state
        # with prior samples only, so the reward head stays calibrated on the
        # state distribution imagination produces. No recon term here: early
        # prior states carry no sprite information and a recon loss on them
        # just drags the decoder toward the mean image.
        ol_state = states[0]
        for t in range(1, T):
            noise = rng.standard_normal((B, self.stoch_dim))
            ol_out = self.trunk_step(ol_state, ad.as_tensor(actions[:, t - 1]),
                                     noise=noise, use_posterior=False)
            ol_state = ol_out.state
            rew = rew + self._reward_nll(ol_state, rewards[:, t - 1])
            # latent overshooting: pull the t-step-ahead prior toward the
            # frozen filtered posterior so open-loop rollouts keep tracking
            q = posteriors[t]
            q_sg = DiagGaussian(ad.stop_gradient(q.mean),
                                ad.stop_gradient(q.std))
            kl = kl + self.kl_balance * kl_diag_gaussian(q_sg, ol_out.prior,
                                                         axis=-1)
        recon = ad.mean(recon)
        kl = ad.mean(kl)
        rew = ad.mean(rew) if rew is not None else ad.as_tensor(np.zeros((), dtype=dt))
        rew = self.reward_weight * rew
        total = recon + rew + kl
        parts = {"total": total, "recon": recon, "reward": rew, "kl": kl}
        if return_states:
            parts["states"] = states
        return parts

    def plan_loss(self, obs, codes, targets, obs_mask, rng):
        """Reconstruction + behavior cloning + KL over refined trajectories.

        obs: (B, n, obs_dim) padded; codes: Tensor (B, n-1, D) behavior
        vectors (may carry gradient back into BAN); targets: (B, n-1) int
        codebook indices; obs_mask: (B, n) 1.0 where a real observation
        exists. A length-1 trajectory contributes recon+kl only.
        """
        dt = self.store.dtype
        obs = np.asarray(obs, dtype=dt)
        targets = np.asarray(targets)
        obs_mask = np.asarray(obs_mask, dtype=dt)
        beh_mask = obs_mask[:, 1:]
        B, n = obs.shape[:2]
        base = obs.reshape(-1, obs.shape[-1]).mean(axis=0)
        state = self.initial_state(B)
        zero_code = ad.as_tensor(np.zeros((B, self.code_dim), dtype=dt))
        recon = kl = bc = None
        for i in range(n):
            c_prev = zero_code if i == 0 else codes[:, i - 1]
            e = self.encode(ad.as_tensor(obs[:, i]))
            noise = rng.standard_normal((B, self.stoch_dim))
            out = self.plan_step(state, c_prev, embedding=e, noise=noise)
            state = out.state
            m = obs_mask[:, i]
            r_i = self._recon_nll(ModelState(h=state.h, z=out.posterior.mean),
                                  obs[:, i], base) * m
            k_i = self._kl_term(out.posterior, out.prior) * m
            recon = r_i if recon is None else recon + r_i
            kl = k_i if kl is None else kl + k_i
            if i < n - 1:
                tgt = np.clip(targets[:, i], 0, self.num_codes - 1)
                logp = ad.log_softmax(self.bc_logits(state), axis=-1)
                b_i = -logp[np.arange(B), tgt] * beh_mask[:, i]
                bc = b_i if bc is None else bc + b_i
        recon = ad.mean(recon)
        kl = ad.mean(kl)
        bc = ad.mean(bc) if bc is not None else ad.as_tensor(np.zeros((), dtype=dt))
        total = recon + bc + kl
        return {"total": total, "recon": recon, "bc": bc, "kl": kl}

    def bc_aux_loss(self, states, targets):
        """Cross-entropy of the BC head on stop-gradiented trunk states.

        Trains F_BC to answer queries on trunk states during imagination;
        grads reach only the BC head.
        """
        B = targets.shape[0]
        loss = None
        for i, state in enumerate(states[:-1]):
            frozen = ModelState(h=ad.stop_gradient(state.h), z=ad.stop_gradient(state.z))
            logp = ad.log_softmax(self.bc_logits(frozen), axis=-1)
            term = -logp[np.arange(B), targets[:, i]]
            loss = term if loss is None else loss + term
        return ad.mean(loss)

    def observe(self, state: ModelState, obs, action=None, noise=None):
        """One posterior filtering step from a real observation."""
        dt = self.store.dtype
        obs = np.asarray(obs, dtype=dt)
        if obs.ndim == 1:
            obs = obs[None]
        B = obs.shape[0]
        if state is None:
            state = self.initial_state(B)
        if action is None:
            action = ad.as_tensor(np.zeros((B, self.action_dim), dtype=dt))
        e = self.encode(ad.as_tensor(obs))
        out = self.trunk_step(state, action, embedding=e, noise=noise)
        return out.state
