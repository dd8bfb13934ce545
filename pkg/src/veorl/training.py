"""Three-stage offline training, evaluation, and online finetuning."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .ban import (
    BanEncoder, Codebook, assign_behaviors, code_passthrough, mmd_linear,
    quantize_batch, segment_shortcuts, vq_loss,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import load_dataset
from .envs import OBS_SIZE, make_env
from .metrics import MetricsWriter
from .nn import Adam, ParamStore
from .policy import (
    ActionSpace, ActorCritic, actor_loss, critic_loss, imagine_dual,
    lambda_targets,
)
from .worldmodel import ModelState, WorldModel

STAGE_CHECKPOINTS = {1: "ban.ckpt", 2: "worldmodel.ckpt", 3: "policy.ckpt"}


class _ZeroCodes:
    """Codebook stand-in that conditions the policy on all-zero codes."""

    def __init__(self, codebook):
        self._zeros = np.zeros_like(codebook.values())

    def values(self):
        return self._zeros


class Agent:
    """All networks of one run in a single float32 parameter store."""

    def __init__(self, config: RunConfig, obs_shape, action_kind, action_dim):
        self.config = config
        self.store = ParamStore(np.float32)
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        D = config.code_dim
        self.encoder = BanEncoder(self.store, "ban.enc", obs_shape, D // 2, rng,
                                  arch=config.encoder_arch)
        self.codebook = Codebook(self.store, "ban.cb", config.codebook_size, D, rng)
        self.wm = WorldModel(self.store, obs_dim=int(np.prod(obs_shape)),
                             action_dim=action_dim, code_dim=D,
                             num_codes=config.codebook_size, rng=rng,
                             hidden_dim=config.hidden_dim,
                             stoch_dim=config.stoch_dim,
                             embed_dim=config.embed_dim, units=config.units,
                             free_nats=config.free_nats,
                             kl_balance=config.kl_balance,
                             reward_weight=config.reward_weight,
                             reward_focus=config.reward_focus,
                             recon_focus=config.recon_focus)
        self.action_space = ActionSpace(action_kind, action_dim)
        self.ac = ActorCritic(self.store, self.wm.state_dim, D,
                              self.action_space, rng, units=config.units)

    def ban_param_names(self):
        return self.encoder.param_names() + self.codebook.param_names()

    def policy_codebook(self):
        return self.codebook if self.config.bc_conditioning else _ZeroCodes(self.codebook)


class EpisodeSet:
    """Flattened episode arrays plus the index lists batch sampling needs."""

    def __init__(self, episodes):
        self.obs = [ep.flat_observations() for ep in episodes]
        self.actions = [ep.actions for ep in episodes]
        self.rewards = [ep.rewards for ep in episodes]
        self.pair_index = [(i, t) for i, o in enumerate(self.obs)
                           for t in range(len(o) - 1)]
        self.obs_index = [(i, t) for i, o in enumerate(self.obs)
                          for t in range(len(o))]

    def __len__(self):
        return len(self.obs)

    def sample_obs(self, batch, rng):
        picks = rng.integers(len(self.obs_index), size=batch)
        return np.stack([self.obs[self.obs_index[p][0]][self.obs_index[p][1]]
                         for p in picks])

    def sample_pairs(self, batch, rng):
        picks = rng.integers(len(self.pair_index), size=batch)
        o0, o1 = [], []
        for p in picks:
            i, t = self.pair_index[p]
            o0.append(self.obs[i][t])
            o1.append(self.obs[i][t + 1])
        return np.stack(o0), np.stack(o1)

    def window_index(self, seq_len):
        """Window starts; any start with >= 2 real frames is usable since
        trunk batches pad past episode end with an absorbing state."""
        idx = [(i, t) for i, o in enumerate(self.obs)
               for t in range(max(len(o) - 1, 0))]
        if not idx:
            raise ValueError("no episode has at least 2 observations")
        return idx, seq_len


def _subset(episodes, fraction):
    keep = int(np.ceil(fraction * len(episodes)))
    return episodes[:keep]


@dataclass
class RunResult:
    path: Path
    counters: dict
    config: RunConfig


def _require_checkpoints(out, upto_stage):
    for stage in range(1, upto_stage + 1):
        name = STAGE_CHECKPOINTS[stage]
        if not (out / name).exists():
            raise FileNotFoundError(
                f"cannot resume: missing stage {stage} checkpoint {name}")


def run_training(config: RunConfig, target_dir, source_dir, out_dir,
                 start_stage=1) -> RunResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = out / "config.resolved"
    if not snapshot.exists():
        snapshot.write_text(config.to_text())

    tar_manifest, tar_eps = load_dataset(target_dir)
    if tar_manifest.domain != "tar" or tar_manifest.action_dim == 0:
        raise ValueError(f"{target_dir}: target dataset must carry actions/rewards")
    src_eps = None
    if source_dir is not None:
        src_manifest, src_eps = load_dataset(source_dir)
        if src_manifest.domain != "src":
            raise ValueError(f"{source_dir}: source dataset must be action-free")
        src_eps = _subset(src_eps, config.source_fraction)
        if not src_eps:
            src_eps = None

    env = make_env(config.env_id)
    kind, adim = env.action_space
    if adim != tar_manifest.action_dim:
        raise ValueError(
            f"dataset action dim {tar_manifest.action_dim} != env {adim}")
    agent = Agent(config, tar_manifest.obs_shape, kind, adim)
    tar = EpisodeSet(tar_eps)
    src = EpisodeSet(src_eps) if src_eps else None

    if start_stage > 1:
        _require_checkpoints(out, start_stage - 1)
        agent.store.load_state_arrays(
            load_checkpoint(out / STAGE_CHECKPOINTS[start_stage - 1]))

    counters = {"stage1_tar_batches": 0, "stage1_src_batches": 0,
                "stage2_trunk_tar_batches": 0, "stage2_trunk_src_batches": 0,
                "stage2_plan_tar_batches": 0, "stage2_plan_src_batches": 0,
                "stage3_batches": 0}
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    with MetricsWriter(out / "metrics.jsonl") as metrics:
        if start_stage <= 1:
            _stage1_ban(agent, config, tar, src,
                        np.random.default_rng(seeds[0]), metrics, counters)
            save_checkpoint(out / STAGE_CHECKPOINTS[1], agent.store.state_arrays())
        if start_stage <= 2:
            _stage2_world_model(agent, config, tar, src,
                                np.random.default_rng(seeds[1]), metrics, counters)
            save_checkpoint(out / STAGE_CHECKPOINTS[2], agent.store.state_arrays())
        _stage3_policy(agent, config, tar,
                       np.random.default_rng(seeds[2]), metrics, counters)
        save_checkpoint(out / STAGE_CHECKPOINTS[3], agent.store.state_arrays())
    (out / "counters.json").write_text(json.dumps(counters, indent=2, sort_keys=True))
    return RunResult(path=out, counters=counters, config=config)


def _ban_update(agent, config, tar, rng, opt):
    """One ℓ_VQ + α ℓ_plan step on a target frame-pair batch."""
    D = config.code_dim
    o0, o1 = tar.sample_pairs(config.batch_size, rng)
    e0 = agent.encoder(ad.as_tensor(o0))
    e1 = agent.encoder(ad.as_tensor(o1))
    pair = ad.concat([e0, e1], axis=-1)
    idx = quantize_batch(agent.codebook, pair.data)
    code = ad.index(agent.codebook.codes, idx)
    total_vq, _, _ = vq_loss(pair, code, norm=config.vq_norm)
    loss_vq = ad.mean(total_vq)
    codes_pt = ad.reshape(code_passthrough(pair, code), (-1, 1, D))
    obs2 = np.stack([o0, o1], axis=1)
    plan = agent.wm.plan_loss(obs2, codes_pt, idx[:, None],
                              np.ones((len(o0), 2), np.float32), rng)
    loss = loss_vq + config.alpha * plan["total"]
    agent.store.zero_grads()
    loss.backward()
    opt.step()
    return loss_vq.item(), plan["total"].item()


def _stage1_ban(agent, config, tar, src, rng, metrics, counters):
    names = (agent.ban_param_names() + agent.wm.plan_param_names()
             + agent.wm.shared_param_names() + agent.wm.bc_param_names())
    opt = Adam(agent.store, lr=config.ban_lr, names=names)
    opt_mmd = Adam(agent.store, lr=config.ban_lr, names=agent.encoder.param_names())
    use_src = src is not None and config.mmd_weight > 0
    for step in range(1, config.m1 + 1):
        loss_vq, loss_plan = _ban_update(agent, config, tar, rng, opt)
        counters["stage1_tar_batches"] += 1
        loss_mmd = 0.0
        if use_src:
            s_obs = src.sample_obs(config.batch_size, rng)
            t_obs = tar.sample_obs(config.batch_size, rng)
            mmd = config.mmd_weight * mmd_linear(agent.encoder(ad.as_tensor(s_obs)),
                                                 agent.encoder(ad.as_tensor(t_obs)))
            agent.store.zero_grads()
            mmd.backward()
            opt_mmd.step()
            counters["stage1_src_batches"] += 1
            loss_mmd = mmd.item()
        metrics.log("ban", step, loss_vq=loss_vq, loss_plan=loss_plan,
                    loss_mmd=loss_mmd, wallclock=time.time())


def _shortcut_samples(agent, config, dset):
    """Refined (obs, behavior index) sequences under the current BAN."""
    samples = []
    for obs in dset.obs:
        if len(obs) < 2:
            continue
        asg = assign_behaviors(agent.encoder, agent.codebook, obs)
        sc = segment_shortcuts(asg, mode=config.shortcut_mode)
        o_idx = sc.obs_indices[:config.seq_len]
        b_idx = sc.behavior_indices[:len(o_idx) - 1]
        samples.append((obs[o_idx], np.asarray(b_idx, dtype=np.int64)))
    if not samples:
        raise ValueError("no usable episodes for shortcut training")
    return samples


def _shortcut_batch(samples, batch, codebook, rng):
    picks = rng.integers(len(samples), size=batch)
    n_max = max(len(samples[p][0]) for p in picks)
    obs_dim = samples[0][0].shape[1]
    D = codebook.values().shape[1]
    obs = np.zeros((batch, n_max, obs_dim), dtype=np.float32)
    mask = np.zeros((batch, n_max), dtype=np.float32)
    targets = np.zeros((batch, max(n_max - 1, 1)), dtype=np.int64)
    codes = np.zeros((batch, max(n_max - 1, 1), D), dtype=np.float32)
    values = codebook.values()
    for row, p in enumerate(picks):
        o, b = samples[p]
        n = len(o)
        obs[row, :n] = o
        mask[row, :n] = 1.0
        targets[row, :n - 1] = b
        codes[row, :n - 1] = values[b]
    return obs, ad.as_tensor(codes[:, :n_max - 1]), targets[:, :n_max - 1], mask


def _trunk_batch(tar, windows, seq_len, batch, assignments, rng):
    """Sample (B, eff) windows; past episode end the window continues in an
    absorbing state: last frame repeated, zero action, zero reward."""
    idx, eff = windows
    picks = rng.integers(len(idx), size=batch)
    obs, act, rew, beh = [], [], [], []
    for p in picks:
        i, t = idx[p]
        end = min(t + eff, len(tar.obs[i]))
        pad = eff - (end - t)
        o = tar.obs[i][t:end]
        a = tar.actions[i][t:end - 1]
        r = tar.rewards[i][t:end - 1]
        b = assignments[i][t:end - 1]
        if pad:
            o = np.concatenate([o, np.repeat(o[-1:], pad, axis=0)])
            a = np.concatenate([a, np.zeros((pad,) + a.shape[1:], a.dtype)])
            r = np.concatenate([r, np.zeros(pad, r.dtype)])
            b = np.concatenate([b, np.repeat(b[-1:], pad)])
        obs.append(o)
        act.append(a)
        rew.append(r)
        beh.append(b)
    return (np.stack(obs), np.stack(act), np.stack(rew),
            np.stack(beh).astype(np.int64))


def _stage2_world_model(agent, config, tar, src, rng, metrics, counters):
    wm = agent.wm
    opt_trunk = Adam(agent.store, lr=config.wm_lr,
                     names=wm.trunk_param_names() + wm.shared_param_names())
    opt_plan = Adam(agent.store, lr=config.wm_lr,
                    names=wm.plan_param_names() + wm.shared_param_names()
                    + wm.bc_param_names())
    opt_ban = None
    if config.ban_finetune:
        opt_ban = Adam(agent.store, lr=config.ban_lr,
                       names=agent.ban_param_names() + wm.plan_param_names()
                       + wm.shared_param_names() + wm.bc_param_names())

    def refresh():
        s_tar = _shortcut_samples(agent, config, tar)
        s_src = _shortcut_samples(agent, config, src) if src is not None else None
        a_tar = [assign_behaviors(agent.encoder, agent.codebook, o).indices
                 if len(o) >= 2 else np.zeros(0, dtype=np.int64)
                 for o in tar.obs]
        return s_tar, s_src, a_tar

    short_tar, short_src, assignments = refresh()
    windows = tar.window_index(config.seq_len)
    train_bc_on_trunk = config.bc_train_streams == "both"
    for step in range(1, config.m2 + 1):
        if config.ban_finetune:
            _ban_update(agent, config, tar, rng, opt_ban)
            if step % 500 == 0:
                short_tar, short_src, assignments = refresh()
        obs, act, rew, beh = _trunk_batch(tar, windows, config.seq_len,
                                          config.batch_size, assignments, rng)
        trunk = wm.trunk_loss(obs, act, rew, rng, return_states=train_bc_on_trunk)
        agent.store.zero_grads()
        trunk["total"].backward()
        opt_trunk.step()
        counters["stage2_trunk_tar_batches"] += 1

        domain = "src" if (short_src is not None and step % 2 == 0) else "tar"
        samples = short_src if domain == "src" else short_tar
        p_obs, p_codes, p_targets, p_mask = _shortcut_batch(
            samples, config.batch_size, agent.codebook, rng)
        plan = wm.plan_loss(p_obs, p_codes, p_targets, p_mask, rng)
        loss_plan = plan["total"]
        if train_bc_on_trunk and beh.shape[1] >= 1:
            loss_plan = loss_plan + wm.bc_aux_loss(trunk["states"], beh)
        agent.store.zero_grads()
        loss_plan.backward()
        opt_plan.step()
        counters[f"stage2_plan_{domain}_batches"] += 1
        metrics.log("worldmodel", step,
                    loss_trunk_recon=trunk["recon"].item(),
                    loss_trunk_reward=trunk["reward"].item(),
                    loss_trunk_kl=trunk["kl"].item(),
                    loss_plan=plan["total"].item(),
                    loss_bc=plan["bc"].item(), wallclock=time.time())


def _policy_update(agent, config, start_obs, rho, rng, opt_critic, opt_actor):
    wm, ac = agent.wm, agent.ac
    B = start_obs.shape[0]
    start = wm.observe(None, start_obs, noise=rng.standard_normal((B, wm.stoch_dim)))
    start = ModelState(h=ad.stop_gradient(start.h), z=ad.stop_gradient(start.z))
    roll = imagine_dual(wm, agent.policy_codebook(), ac, start, config.horizon,
                        rng, plan_rollout=config.plan_rollout)
    targets, values = lambda_targets(roll, ac, config.omega, config.gamma, config.lam)
    closs = critic_loss(targets, values)
    agent.store.zero_grads()
    closs.backward()
    opt_critic.step()
    aloss = actor_loss(roll, targets, values, rho, config.eta)
    agent.store.zero_grads()
    aloss.zero_grad_graph()
    aloss.backward()
    opt_actor.step()
    intrinsic = float(np.mean([x.data.mean() for x in roll.intrinsic]))
    return closs.item(), aloss.item(), intrinsic


def _stage3_policy(agent, config, tar, rng, metrics, counters):
    rho = config.resolved_rho(agent.action_space.kind)
    opt_critic = Adam(agent.store, lr=config.policy_lr,
                      names=agent.ac.critic_param_names())
    opt_actor = Adam(agent.store, lr=config.policy_lr,
                     names=agent.ac.actor_param_names())
    for step in range(1, config.m3 + 1):
        obs = tar.sample_obs(config.batch_size, rng)
        closs, aloss, intrinsic = _policy_update(agent, config, obs, rho, rng,
                                                 opt_critic, opt_actor)
        counters["stage3_batches"] += 1
        metrics.log("policy", step, loss_critic=closs, loss_actor=aloss,
                    intrinsic_mean=intrinsic, wallclock=time.time())


# -- evaluation -------------------------------------------------------------


def _greedy_action(agent, state):
    codes = agent.policy_codebook().values()
    idx = np.argmax(agent.wm.bc_logits(state).data, axis=-1)
    code = ad.as_tensor(codes[idx].astype(np.float32))
    dist = agent.ac.actor_dist(state.s, code)
    return dist.mode()


def _rollout_policy(agent, env, rng, greedy=True):
    """One real-environment episode; returns (return, success, transitions)."""
    es = env.reset(rng)
    obs = env.render(es).reshape(1, -1)
    model_state = agent.wm.observe(None, obs, noise=None)
    total = 0.0
    done = False
    steps = 0
    transitions = []
    kind, adim = env.action_space
    while not done:
        if greedy:
            a = _greedy_action(agent, model_state)
        else:
            codes = agent.policy_codebook().values()
            idx = np.argmax(agent.wm.bc_logits(model_state).data, axis=-1)
            code = ad.as_tensor(codes[idx].astype(np.float32))
            dist = agent.ac.actor_dist(model_state.s, code)
            if kind == "discrete":
                a = dist.sample(rng)
            else:
                a, _ = dist.rsample(rng.standard_normal((1, adim)))
                a = a.data
        if kind == "discrete":
            env_a = int(np.asarray(a).reshape(-1)[0])
            a_vec = np.eye(adim, dtype=np.float32)[env_a][None]
        else:
            env_a = np.asarray(a, dtype=np.float64).reshape(-1)
            a_vec = np.asarray(a, dtype=np.float32).reshape(1, -1)
        es, r, done = env.step(es, env_a)
        next_obs = env.render(es).reshape(1, -1)
        transitions.append((obs[0].copy(), a_vec[0].copy(), float(r), done))
        model_state = agent.wm.observe(model_state, next_obs,
                                       action=ad.as_tensor(a_vec), noise=None)
        obs = next_obs
        total += r
        steps += 1
    success = steps < env.time_limit
    return total, success, transitions


def evaluate_agent(agent, env, episodes, seed):
    returns, successes = [], 0
    for ss in np.random.SeedSequence(seed).spawn(episodes):
        ret, ok, _ = _rollout_policy(agent, env, np.random.default_rng(ss))
        returns.append(ret)
        successes += ok
    returns = np.asarray(returns)
    return {"episodes": episodes,
            "return_mean": float(returns.mean()),
            "return_std": float(returns.std()),
            "success_rate": successes / episodes,
            "seed": seed}


def load_agent(run_dir, checkpoint="policy.ckpt", config=None) -> Agent:
    run = Path(run_dir)
    if config is None:
        config = load_config(run / "config.resolved")
    env = make_env(config.env_id)
    kind, adim = env.action_space
    agent = Agent(config, (3, OBS_SIZE, OBS_SIZE), kind, adim)
    path = run / checkpoint
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {checkpoint} in {run}")
    agent.store.load_state_arrays(load_checkpoint(path))
    return agent


def run_eval(run_dir, episodes=None, seed=0, config=None):
    run = Path(run_dir)
    if config is None:
        config = load_config(run / "config.resolved")
    agent = load_agent(run, config=config)
    env = make_env(config.env_id)
    report = evaluate_agent(agent, env, episodes or config.eval_episodes, seed)
    (run / f"eval-{seed}.json").write_text(json.dumps(report, indent=2,
                                                      sort_keys=True))
    return report


# -- online finetuning ------------------------------------------------------


def run_finetune_online(run_dir, new_env_id, online_steps, target_dir, out_dir,
                        seed=0, from_scratch=False, eval_every=500,
                        eval_episodes=5) -> list:
    """Continue training with online interaction on a new task.

    Batches mix offline and online data 50/50 once online episodes exist.
    Returns the learning curve [(step, eval return mean), ...], also written
    to out_dir/curve.csv.
    """
    run = Path(run_dir)
    config = load_config(run / "config.resolved",
                         overrides={"env_id": new_env_id, "seed": seed})
    env = make_env(new_env_id)
    kind, adim = env.action_space
    agent = Agent(config, (3, OBS_SIZE, OBS_SIZE), kind, adim)
    if not from_scratch:
        ckpt = run / STAGE_CHECKPOINTS[3]
        if not ckpt.exists():
            raise FileNotFoundError(f"missing stage 3 checkpoint {ckpt}")
        try:
            agent.store.load_state_arrays(load_checkpoint(ckpt))
        except ValueError as exc:
            raise ValueError(
                f"checkpoint incompatible with env {new_env_id}: {exc}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    _manifest, tar_eps = load_dataset(target_dir)
    offline = EpisodeSet(tar_eps)
    rho = config.resolved_rho(kind)
    wm = agent.wm
    opt_trunk = Adam(agent.store, lr=config.wm_lr,
                     names=wm.trunk_param_names() + wm.shared_param_names())
    opt_critic = Adam(agent.store, lr=config.policy_lr,
                      names=agent.ac.critic_param_names())
    opt_actor = Adam(agent.store, lr=config.policy_lr,
                     names=agent.ac.actor_param_names())
    opt_ban = Adam(agent.store, lr=config.ban_lr,
                   names=agent.ban_param_names() + wm.plan_param_names()
                   + wm.shared_param_names() + wm.bc_param_names())

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    online_obs, online_act, online_rew = [], [], []
    cur_o, cur_a, cur_r = None, [], []
    es = env.reset(rng)
    cur_o = [env.render(es).reshape(-1)]
    model_state = agent.wm.observe(None, cur_o[-1][None], noise=None)
    online = None
    half = max(config.batch_size // 2, 1)
    curve = []
    with MetricsWriter(out / "metrics.jsonl") as metrics:
        for step in range(1, online_steps + 1):
            # one environment step with a sampled action
            codes = agent.policy_codebook().values()
            idx = np.argmax(agent.wm.bc_logits(model_state).data, axis=-1)
            code = ad.as_tensor(codes[idx].astype(np.float32))
            dist = agent.ac.actor_dist(model_state.s, code)
            if kind == "discrete":
                env_a = int(dist.sample(rng).reshape(-1)[0])
                a_vec = np.eye(adim, dtype=np.float32)[env_a]
            else:
                a_t, _ = dist.rsample(rng.standard_normal((1, adim)))
                env_a = np.asarray(a_t.data, dtype=np.float64).reshape(-1)
                a_vec = np.asarray(env_a, dtype=np.float32)
            es, r, done = env.step(es, env_a)
            nxt = env.render(es).reshape(-1)
            cur_o.append(nxt)
            cur_a.append(a_vec)
            cur_r.append(np.float32(r))
            model_state = agent.wm.observe(model_state, nxt[None],
                                           action=ad.as_tensor(a_vec[None]),
                                           noise=None)
            if done:
                online_obs.append(np.stack(cur_o))
                online_act.append(np.stack(cur_a))
                online_rew.append(np.asarray(cur_r, np.float32))
                online_obs, online_act, online_rew = (x[-200:] for x in
                                                      (online_obs, online_act,
                                                       online_rew))
                online = _OnlineSet(online_obs, online_act, online_rew)
                es = env.reset(rng)
                cur_o = [env.render(es).reshape(-1)]
                cur_a, cur_r = [], []
                model_state = agent.wm.observe(None, cur_o[-1][None], noise=None)

            # mixed-batch updates
            obs, act, rew = _mixed_trunk_batch(offline, online, half,
                                               config.seq_len, rng)
            trunk = wm.trunk_loss(obs, act, rew, rng)
            agent.store.zero_grads()
            trunk["total"].backward()
            opt_trunk.step()
            if step % 10 == 0:
                _ban_update(agent, config, offline, rng, opt_ban)
            start_obs = np.concatenate([offline.sample_obs(half, rng),
                                        online.sample_obs(half, rng)
                                        if online else
                                        offline.sample_obs(half, rng)])
            closs, aloss, intrinsic = _policy_update(
                agent, config, start_obs, rho, rng, opt_critic, opt_actor)
            metrics.log("finetune", step, loss_trunk=trunk["total"].item(),
                        loss_critic=closs, loss_actor=aloss,
                        intrinsic_mean=intrinsic)
            if step % eval_every == 0:
                report = evaluate_agent(agent, env, eval_episodes,
                                        seed=seed * 100003 + step)
                curve.append((step, report["return_mean"]))
    with open(out / "curve.csv", "w") as f:
        f.write("step,return_mean\n")
        for s, v in curve:
            f.write(f"{s},{v}\n")
    save_checkpoint(out / STAGE_CHECKPOINTS[3], agent.store.state_arrays())
    return curve


class _OnlineSet(EpisodeSet):
    def __init__(self, obs, actions, rewards):
        self.obs = list(obs)
        self.actions = list(actions)
        self.rewards = list(rewards)
        self.pair_index = [(i, t) for i, o in enumerate(self.obs)
                           for t in range(len(o) - 1)]
        self.obs_index = [(i, t) for i, o in enumerate(self.obs)
                          for t in range(len(o))]


def _mixed_trunk_batch(offline, online, half, seq_len, rng):
    parts = []
    for dset, count in ((offline, half), (online, half)):
        if dset is None:
            dset, count = offline, half
        idx, eff = dset.window_index(seq_len)
        picks = rng.integers(len(idx), size=count)
        for p in picks:
            i, t = idx[p]
            end = min(t + eff, len(dset.obs[i]))
            pad = eff - (end - t)
            o = dset.obs[i][t:end]
            a = dset.actions[i][t:end - 1]
            r = dset.rewards[i][t:end - 1]
            if pad:
                o = np.concatenate([o, np.repeat(o[-1:], pad, axis=0)])
                a = np.concatenate([a, np.zeros((pad,) + a.shape[1:], a.dtype)])
                r = np.concatenate([r, np.zeros(pad, r.dtype)])
            parts.append((o, a, r))
    obs = np.stack([o for o, _, _ in parts])
    act = np.stack([a for _, a, _ in parts])
    rew = np.stack([r for _, _, r in parts])
    return obs, act, rew
