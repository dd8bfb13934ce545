"""Finite-difference verification of every training loss at toy dims."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .ban import BanEncoder, Codebook, code_passthrough, mmd_linear, quantize_batch, vq_loss
from .gradcheck import finite_diff_check
from .nn import ParamStore
from .policy import ActionSpace, ActorCritic, actor_loss, critic_loss, imagine_dual, lambda_targets
from .worldmodel import WorldModel

LOSS_NAMES = ("vq", "mmd", "trunk", "plan", "critic", "actor(rho=0)", "actor(rho=1)")

# toy dims: H=Z=4, K=4, D=8, L=3
_H, _Z, _K, _D, _L = 4, 4, 4, 8, 3
_OBS = 12


def _jitter(store, rng):
    for n in store.names():
        store[n].data = store[n].data + rng.uniform(-0.05, 0.05, store[n].data.shape)


def _ban_fixture(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore(np.float64)
    enc = BanEncoder(store, "ban.enc", (_OBS,), _D // 2, rng, hidden=8)
    cb = Codebook(store, "ban.cb", _K, _D, rng)
    _jitter(store, rng)
    obs = rng.random((3, 2, _OBS))
    return store, enc, cb, obs


def _wm_fixture(seed, kind="continuous", adim=2):
    rng = np.random.default_rng(seed)
    store = ParamStore(np.float64)
    enc = BanEncoder(store, "ban.enc", (_OBS,), _D // 2, rng, hidden=8)
    cb = Codebook(store, "ban.cb", _K, _D, rng)
    wm = WorldModel(store, obs_dim=_OBS, action_dim=adim, code_dim=_D,
                    num_codes=_K, rng=rng, hidden_dim=_H, stoch_dim=_Z,
                    embed_dim=4, units=8)
    ac = ActorCritic(store, wm.state_dim, _D, ActionSpace(kind, adim), rng, units=8)
    _jitter(store, rng)
    return store, enc, cb, wm, ac


def run_gradcheck(tol=1e-4, seed=0):
    """Max relative gradient error per loss; see LOSS_NAMES for the inventory."""
    results = {}

    store, enc, cb, obs = _ban_fixture(seed)

    def vq():
        e0 = enc(ad.as_tensor(obs[:, 0]))
        e1 = enc(ad.as_tensor(obs[:, 1]))
        pair = ad.concat([e0, e1], axis=-1)
        idx = quantize_batch(cb, pair.data)
        total, _, _ = vq_loss(pair, ad.index(cb.codes, idx))
        return ad.mean(total)

    results["vq"] = finite_diff_check(vq, store, eps=1e-6)

    store, enc, cb, obs = _ban_fixture(seed + 1)

    def mmd():
        return mmd_linear(enc(ad.as_tensor(obs[:, 0])), enc(ad.as_tensor(obs[:, 1])))

    results["mmd"] = finite_diff_check(mmd, store, eps=1e-6)

    store, enc, cb, wm, ac = _wm_fixture(seed + 2)
    rng = np.random.default_rng(seed + 2)
    t_obs = rng.random((2, _L, _OBS))
    t_act = rng.random((2, _L - 1, 2))
    t_rew = rng.random((2, _L - 1))

    def trunk():
        return wm.trunk_loss(t_obs, t_act, t_rew, np.random.default_rng(0))["total"]

    results["trunk"] = finite_diff_check(trunk, store, eps=1e-5)

    def plan():
        # behavior codes flow back into the BAN through the passthrough
        e0 = enc(ad.as_tensor(t_obs[:, 0]))
        e1 = enc(ad.as_tensor(t_obs[:, 1]))
        pair = ad.concat([e0, e1], axis=-1)
        idx = quantize_batch(cb, pair.data)
        codes = ad.reshape(code_passthrough(pair, ad.index(cb.codes, idx)),
                           (-1, 1, _D))
        return wm.plan_loss(t_obs[:, :2], codes, idx[:, None],
                            np.ones((2, 2)), np.random.default_rng(1))["total"]

    results["plan"] = finite_diff_check(plan, store, eps=1e-5)

    def policy_fixture(kind, adim, fseed):
        store, enc, cb, wm, ac = _wm_fixture(fseed, kind=kind, adim=adim)

        def make_rollout():
            rr = np.random.default_rng(42)
            start = wm.observe(None, np.random.default_rng(3).random((2, _OBS)),
                               noise=rr.standard_normal((2, _Z)))
            return imagine_dual(wm, cb, ac, start, _L, rr)

        return store, ac, make_rollout

    store, ac, make_rollout = policy_fixture("continuous", 2, seed + 3)

    def critic():
        roll = make_rollout()
        t, v = lambda_targets(roll, ac, 0.05, 0.99, 0.95)
        return critic_loss(t, v)

    results["critic"] = finite_diff_check(critic, store, eps=1e-6,
                                          names=ac.critic_param_names())

    def actor0():
        roll = make_rollout()
        t, v = lambda_targets(roll, ac, 0.05, 0.99, 0.95)
        return actor_loss(roll, t, v, 0, 1e-4)

    results["actor(rho=0)"] = finite_diff_check(actor0, store, eps=1e-6,
                                                names=ac.actor_param_names())

    store, ac, make_rollout = policy_fixture("discrete", 3, seed + 4)

    def actor1():
        roll = make_rollout()
        t, v = lambda_targets(roll, ac, 0.05, 0.99, 0.95)
        return actor_loss(roll, t, v, 1, 1e-4)

    results["actor(rho=1)"] = finite_diff_check(actor1, store, eps=1e-6,
                                                names=ac.actor_param_names())

    assert set(results) == set(LOSS_NAMES)
    results["ok"] = all(results[n] <= tol for n in LOSS_NAMES)
    return results
