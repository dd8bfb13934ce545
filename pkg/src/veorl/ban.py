"""Behavior abstraction: codebook of latent behaviors over frame-pair embeddings.

An encoder maps observations to embeddings; consecutive-frame embedding
pairs are quantized against a learnable codebook. Linear-kernel MMD aligns
source and target embeddings so the codebook trained on the target domain
transfers to unlabeled source videos.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, ParamStore


class BanEncoder:
    """Deterministic observation -> embedding map of width D/2.

    Default is a 2-layer MLP on flattened pixels; `arch="conv"` swaps in a
    tiny 2-conv stack for configs that want spatial weight sharing.
    """

    def __init__(self, store: ParamStore, prefix: str, obs_shape, embed_dim,
                 rng, hidden=64, arch="mlp"):
        self.obs_shape = tuple(obs_shape)
        self.obs_dim = int(np.prod(obs_shape))
        self.embed_dim = embed_dim
        self.arch = arch
        if arch == "mlp":
            self.net = MLP(store, prefix, [self.obs_dim, hidden, embed_dim],
                           rng, activation="relu")
        elif arch == "conv":
            self.net = ConvStack(store, prefix, self.obs_shape, embed_dim, rng)
        else:
            raise ValueError(f"unknown encoder arch: {arch}")

    def __call__(self, obs: Tensor) -> Tensor:
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation width {obs.shape[-1]} != {self.obs_dim}")
        return self.net(obs)

    def param_names(self):
        return self.net.param_names()


class ConvStack:
    """Two stride-2 3x3 convs (im2col over fixed gather indices) + linear."""

    def __init__(self, store: ParamStore, prefix: str, obs_shape, out_dim, rng,
                 channels=(8, 16)):
        c, h, w = obs_shape
        self.store = store
        self.prefix = prefix
        self.obs_shape = obs_shape
        self.layers = []
        in_c = c
        for i, out_c in enumerate(channels):
            idx, oh, ow = _im2col_indices(in_c, h, w, k=3, stride=2)
            fan_in = in_c * 9
            scale = np.sqrt(6.0 / (fan_in + out_c))
            store.create(f"{prefix}.cw{i}",
                         rng.uniform(-scale, scale, (fan_in, out_c)).astype(store.dtype))
            store.create(f"{prefix}.cb{i}", np.zeros(out_c, dtype=store.dtype))
            self.layers.append((idx, oh, ow, out_c, i))
            in_c, h, w = out_c, oh, ow
        flat = in_c * h * w
        scale = np.sqrt(6.0 / (flat + out_dim))
        store.create(f"{prefix}.fw", rng.uniform(-scale, scale, (flat, out_dim)).astype(store.dtype))
        store.create(f"{prefix}.fb", np.zeros(out_dim, dtype=store.dtype))

    def __call__(self, x: Tensor) -> Tensor:
        s, p = self.store, self.prefix
        for idx, oh, ow, out_c, i in self.layers:
            patches = x[:, idx]                      # (B, oh*ow, in_c*9)
            x = ad.relu(patches @ s[f"{p}.cw{i}"] + s[f"{p}.cb{i}"])
            # to channel-major flat layout (B, out_c*oh*ow)
            x = ad.reshape(x, (-1, oh * ow, out_c))
            perm = (np.arange(out_c * oh * ow).reshape(oh * ow, out_c).T.reshape(-1))
            x = ad.reshape(x, (-1, oh * ow * out_c))[:, perm]
        return x @ s[f"{p}.fw"] + s[f"{p}.fb"]

    def param_names(self):
        names = []
        for *_rest, i in self.layers:
            names += [f"{self.prefix}.cw{i}", f"{self.prefix}.cb{i}"]
        return names + [f"{self.prefix}.fw", f"{self.prefix}.fb"]


def _im2col_indices(c, h, w, k, stride):
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    rows = []
    for oy in range(oh):
        for ox in range(ow):
            idx = []
            for ch in range(c):
                for ky in range(k):
                    for kx in range(k):
                        idx.append(ch * h * w + (oy * stride + ky) * w + (ox * stride + kx))
            rows.append(idx)
    return np.asarray(rows, dtype=np.intp), oh, ow


class Codebook:
    """K learnable behavior vectors in R^D."""

    def __init__(self, store: ParamStore, prefix: str, num_codes, code_dim, rng):
        if num_codes < 2:
            raise ValueError("codebook needs at least 2 codes")
        if code_dim % 2 != 0:
            raise ValueError("code dimension must be even (embedding pairs)")
        self.store = store
        self.prefix = prefix
        self.num_codes = num_codes
        self.code_dim = code_dim
        store.create(f"{prefix}.codes",
                     rng.uniform(-0.1, 0.1, (num_codes, code_dim)).astype(store.dtype))

    @property
    def codes(self) -> Tensor:
        return self.store[f"{self.prefix}.codes"]

    def values(self) -> np.ndarray:
        return self.codes.data

    def param_names(self):
        return [f"{self.prefix}.codes"]


def quantize_pair(codebook: Codebook, pair: np.ndarray):
    """Nearest code by L2; ties break to the lowest index.

    Returns (index, code vector copy, distance).
    """
    codes = codebook.values()
    if codes.shape[0] == 0:
        raise ValueError("empty codebook")
    d = np.linalg.norm(codes - pair, axis=1)
    k = int(np.argmin(d))
    return k, codes[k].copy(), float(d[k])


def quantize_batch(codebook: Codebook, pairs: np.ndarray) -> np.ndarray:
    """Vectorized nearest-code indices for a (N, D) batch of pairs."""
    codes = codebook.values()
    d2 = ((pairs[:, None, :] - codes[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def vq_loss(pair: Tensor, code: Tensor, norm="squared"):
    """Codebook + commitment loss with stop-gradient routing.

    The codebook term moves only the code; the commitment term moves only
    the encoder. `norm="plain"` uses the unsquared L2 norm instead of the
    conventional squared form.
    """
    if pair.shape != code.shape:
        raise ValueError(f"pair/code shape mismatch: {pair.shape} vs {code.shape}")
    axis = -1 if len(pair.shape) > 1 else None
    cb_sq = ad.sum_(ad.square(ad.stop_gradient(pair) - code), axis=axis)
    cm_sq = ad.sum_(ad.square(pair - ad.stop_gradient(code)), axis=axis)
    if norm == "squared":
        cb_term, cm_term = cb_sq, cm_sq
    elif norm == "plain":
        cb_term = ad.sqrt(cb_sq + 1e-12)
        cm_term = ad.sqrt(cm_sq + 1e-12)
    else:
        raise ValueError(f"unknown vq norm: {norm}")
    return cb_term + cm_term, cb_term, cm_term


def code_passthrough(pair: Tensor, code: Tensor) -> Tensor:
    """Quantized code whose backward passes gradients to both encoder and codebook.

    Forward value is the code; downstream losses refine both the embedding
    (straight-through) and the selected code.
    """
    return code + pair - ad.stop_gradient(pair)


def mmd_linear(src_embeds: Tensor, tar_embeds: Tensor) -> Tensor:
    """Squared L2 distance between batch mean embeddings."""
    if src_embeds.data.shape[0] == 0 or tar_embeds.data.shape[0] == 0:
        raise ValueError("mmd_linear requires non-empty batches")
    diff = ad.mean(src_embeds, axis=0) - ad.mean(tar_embeds, axis=0)
    return ad.sum_(ad.square(diff))


@dataclass
class BehaviorAssignment:
    """Per-transition code indices and vectors for a T-observation episode."""
    indices: np.ndarray          # (T-1,) int
    codes: np.ndarray            # (T-1, D)

    def __len__(self):
        return len(self.indices)


def assign_behaviors(encoder: BanEncoder, codebook: Codebook,
                     observations: np.ndarray) -> BehaviorAssignment:
    """Quantize each consecutive-frame embedding pair of o_{1:T}."""
    T = observations.shape[0]
    if T < 2:
        raise ValueError("need at least 2 observations to assign behaviors")
    embeds = encoder(ad.as_tensor(observations.astype(encoder.net.store.dtype))).data
    pairs = np.concatenate([embeds[:-1], embeds[1:]], axis=1)
    idx = quantize_batch(codebook, pairs)
    return BehaviorAssignment(indices=idx, codes=codebook.values()[idx].copy())


@dataclass
class ShortcutTrajectory:
    """Refined trajectory (o_{j1}, a_{j1}, o_{j2}, ..., o_{jn}), 0-based indices."""
    obs_indices: list            # length n, obs_indices[0] == 0, strictly increasing
    behavior_indices: list       # length n-1, codebook indices

    def __len__(self):
        return len(self.obs_indices)


def segment_shortcuts(assignment: BehaviorAssignment, mode="literal") -> ShortcutTrajectory:
    """Keep transitions where the assigned behavior changes.

    Retained transition set (0-based) is {0} plus every t with
    a[t] != a[t-1]; the first transition has no predecessor and is always
    kept so the refined trajectory starts at o_1. In "literal" mode each
    retained t contributes (a_t, o_{t+1}); "runs" mode keeps run-start
    observations and the final frame instead.
    """
    a = np.asarray(assignment.indices)
    n_tr = len(a)
    retained = [0] + [t for t in range(1, n_tr) if a[t] != a[t - 1]]
    if mode == "literal":
        obs_idx = [0] + [t + 1 for t in retained]
        beh_idx = [int(a[t]) for t in retained]
    elif mode == "runs":
        obs_idx = [0] + [t for t in retained[1:]] + [n_tr]
        beh_idx = [int(a[t]) for t in retained]
    else:
        raise ValueError(f"unknown shortcut mode: {mode}")
    return ShortcutTrajectory(obs_indices=obs_idx, behavior_indices=beh_idx)


def codebook_usage(codebook: Codebook, assignments) -> np.ndarray:
    """Histogram of code usage over a list of BehaviorAssignments."""
    counts = np.zeros(codebook.num_codes, dtype=np.int64)
    for asg in assignments:
        np.add.at(counts, asg.indices, 1)
    return counts


def export_codebook_csv(codebook: Codebook, usage: np.ndarray, path):
    with open(path, "w") as f:
        dim = codebook.code_dim
        f.write("index,usage," + ",".join(f"c{i}" for i in range(dim)) + "\n")
        for k in range(codebook.num_codes):
            vec = ",".join(f"{v:.8g}" for v in codebook.values()[k])
            f.write(f"{k},{int(usage[k])},{vec}\n")
