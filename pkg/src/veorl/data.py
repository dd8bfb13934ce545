"""Episode container, binary episode format, and dataset generation."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import make_env

MAGIC = b"VEO1"
FORMAT_VERSION = 1
FLAG_SOURCE = 1


class EpisodeFormatError(ValueError):
    pass


@dataclass
class Episode:
    """o_{1:T} with per-transition actions/rewards (absent for source videos)."""
    observations: np.ndarray          # (T, C, H, W) float32 in [0, 1]
    actions: np.ndarray               # (T-1, action_dim) float32; empty if source
    rewards: np.ndarray               # (T-1,) float32; empty if source
    dones: np.ndarray                 # (T-1,) uint8
    domain: str = "tar"               # "tar" | "src"
    env_id: str = ""
    seed: int | None = None

    def __post_init__(self):
        T = self.observations.shape[0]
        if self.domain == "src":
            if self.actions.size or self.rewards.size:
                raise ValueError("source episodes must carry no actions or rewards")
        else:
            if len(self.actions) != T - 1 or len(self.rewards) != T - 1:
                raise ValueError("target episode action/reward length must be T-1")
        if len(self.dones) != T - 1:
            raise ValueError("done flags must have length T-1")

    @property
    def length(self):
        return self.observations.shape[0]

    def flat_observations(self):
        return self.observations.reshape(self.length, -1)


def write_episode(ep: Episode, path):
    T, C, H, W = ep.observations.shape
    action_dim = 0 if ep.domain == "src" else ep.actions.shape[1]
    flags = FLAG_SOURCE if ep.domain == "src" else 0
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<7I", FORMAT_VERSION, T, C, H, W, action_dim, flags))
        f.write(ep.observations.astype("<f4").tobytes())
        if action_dim:
            f.write(ep.actions.astype("<f4").tobytes())
            f.write(ep.rewards.astype("<f4").tobytes())
        f.write(ep.dones.astype(np.uint8).tobytes())


def read_episode(path) -> Episode:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise EpisodeFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 4 + 28:
        raise EpisodeFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    version, T, C, H, W, action_dim, flags = struct.unpack_from("<7I", raw, 4)
    if version != FORMAT_VERSION:
        raise EpisodeFormatError(f"{path}: unsupported version {version}")
    n_obs = T * C * H * W
    n_act = (T - 1) * action_dim
    n_rew = (T - 1) if action_dim else 0
    expected = 32 + 4 * (n_obs + n_act + n_rew) + (T - 1)
    if len(raw) != expected:
        raise EpisodeFormatError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(raw)}")
    off = 32
    obs = np.frombuffer(raw, "<f4", n_obs, off).reshape(T, C, H, W).copy()
    off += 4 * n_obs
    if action_dim:
        actions = np.frombuffer(raw, "<f4", n_act, off).reshape(T - 1, action_dim).copy()
        off += 4 * n_act
        rewards = np.frombuffer(raw, "<f4", n_rew, off).copy()
        off += 4 * n_rew
        domain = "tar"
    else:
        actions = np.zeros((0,), dtype=np.float32)
        rewards = np.zeros((0,), dtype=np.float32)
        domain = "src"
    dones = np.frombuffer(raw, np.uint8, T - 1, off).copy()
    return Episode(observations=obs, actions=actions, rewards=rewards,
                   dones=dones, domain=domain)


@dataclass
class DatasetManifest:
    files: list
    domain: str
    env_id: str
    episodes: int
    obs_shape: list
    action_dim: int
    seed: int

    def to_json(self):
        return json.dumps({"files": self.files, "domain": self.domain,
                           "env_id": self.env_id, "episodes": self.episodes,
                           "obs_shape": list(self.obs_shape),
                           "action_dim": self.action_dim, "seed": self.seed},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(files=d["files"], domain=d["domain"], env_id=d["env_id"],
                   episodes=d["episodes"], obs_shape=d["obs_shape"],
                   action_dim=d["action_dim"], seed=d["seed"])


def rollout_scripted(env, eps, rng) -> tuple:
    """One scripted episode; returns (obs list, actions, rewards, dones)."""
    state = env.reset(rng)
    obs = [env.render(state)]
    actions, rewards, dones = [], [], []
    done = False
    while not done:
        a = env.scripted_action(state, eps, rng)
        state, r, done = env.step(state, a)
        obs.append(env.render(state))
        if env.action_space[0] == "discrete":
            actions.append(np.eye(env.action_space[1], dtype=np.float32)[a])
        else:
            actions.append(np.asarray(a, dtype=np.float32))
        rewards.append(r)
        dones.append(done)
    return obs, actions, rewards, dones


def generate_dataset(env_id, eps, episodes, seed, domain, out_dir) -> DatasetManifest:
    """Write `episodes` scripted episodes plus manifest.json under out_dir.

    Source datasets use the domain-shifted env variant and strip
    actions/rewards. Fully deterministic given the seed.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(env_id + "-src") if domain == "src" else make_env(env_id)
    seeds = np.random.SeedSequence(seed).spawn(episodes)
    files = []
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        obs, actions, rewards, dones = rollout_scripted(env, eps, rng)
        obs = np.stack(obs).astype(np.float32)
        if domain == "src":
            ep = Episode(observations=obs, actions=np.zeros((0,), np.float32),
                         rewards=np.zeros((0,), np.float32),
                         dones=np.asarray(dones, np.uint8), domain="src",
                         env_id=env_id, seed=seed)
        else:
            ep = Episode(observations=obs, actions=np.stack(actions),
                         rewards=np.asarray(rewards, np.float32),
                         dones=np.asarray(dones, np.uint8), domain="tar",
                         env_id=env_id, seed=seed)
        name = f"ep{i:05d}.veo"
        write_episode(ep, out / name)
        files.append(name)
    action_dim = 0 if domain == "src" else (env.action_space[1])
    manifest = DatasetManifest(files=files, domain=domain, env_id=env_id,
                               episodes=episodes,
                               obs_shape=list(obs.shape[1:]),
                               action_dim=action_dim, seed=seed)
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_dataset(directory):
    """Read manifest + episodes; checks listed files exist and counts match."""
    d = Path(directory)
    manifest = DatasetManifest.from_json((d / "manifest.json").read_text())
    if manifest.episodes != len(manifest.files):
        raise ValueError(f"{directory}: manifest episode count mismatch")
    episodes = []
    for name in manifest.files:
        path = d / name
        if not path.exists():
            raise FileNotFoundError(f"{directory}: missing episode file {name}")
        ep = read_episode(path)
        ep.env_id = manifest.env_id
        if ep.domain != manifest.domain:
            raise ValueError(f"{name}: domain tag mismatch with manifest")
        episodes.append(ep)
    return manifest, episodes
