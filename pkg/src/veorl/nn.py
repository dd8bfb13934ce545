"""Parameter store, Adam, and the small set of layers the models use."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SIGMA_MIN = 1e-6


class ParamStore:
    """Named parameter tensors with deterministic iteration order."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for p in self._params.values():
            p.grad = None

    def state_arrays(self):
        """name -> raw array view, for checkpointing."""
        return {k: v.data for k, v in self._params.items()}

    def load_state_arrays(self, arrays):
        for k, v in arrays.items():
            if k not in self._params:
                raise KeyError(f"unknown parameter in checkpoint: {k}")
            if self._params[k].data.shape != v.shape:
                raise ValueError(f"shape mismatch for {k}")
            self._params[k].data = np.asarray(v, dtype=self.dtype)

    def clone_values(self):
        return {k: v.data.copy() for k, v in self._params.items()}


class Adam:
    """Bias-corrected Adam over a ParamStore (or a name-filtered subset)."""

    def __init__(self, store: ParamStore, lr=3e-4, beta1=0.9, beta2=0.999,
                 eps=1e-8, names=None):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.names = list(names) if names is not None else store.names()
        self.step_count = 0
        self.m = {n: np.zeros_like(store[n].data) for n in self.names}
        self.v = {n: np.zeros_like(store[n].data) for n in self.names}

    def step(self):
        for n in self.names:
            g = self.store[n].grad
            if g is not None and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {n!r}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for n in self.names:
            p = self.store[n]
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            g = g.astype(p.data.dtype)
            self.m[n] = self.beta1 * self.m[n] + (1 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1 - self.beta2) * g * g
            m_hat = self.m[n] / bc1
            v_hat = self.v[n] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _glorot(rng, fan_in, fan_out, dtype):
    scale = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-scale, scale, size=(fan_in, fan_out)).astype(dtype)


_ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "linear": lambda x: x,
}


class MLP:
    """Affine stack with a fixed activation between layers."""

    def __init__(self, store: ParamStore, prefix: str, sizes, rng,
                 activation="relu", final_activation="linear"):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.store = store
        self.prefix = prefix
        self.sizes = list(sizes)
        self.activation = activation
        self.final_activation = final_activation
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            store.create(f"{prefix}.w{i}", _glorot(rng, fi, fo, store.dtype))
            store.create(f"{prefix}.b{i}", np.zeros(fo, dtype=store.dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(
                f"{self.prefix}: input width {x.shape[-1]} != {self.sizes[0]}")
        act = _ACTIVATIONS[self.activation]
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            x = x @ self.store[f"{self.prefix}.w{i}"] + self.store[f"{self.prefix}.b{i}"]
            if i < n_layers - 1:
                x = act(x)
            else:
                x = _ACTIVATIONS[self.final_activation](x)
        return x

    def param_names(self):
        return [f"{self.prefix}.{s}{i}" for i in range(len(self.sizes) - 1)
                for s in ("w", "b")]


class GRUCell:
    """GRU with the pinned convention:

    u = sigmoid(Wxu x + Whu h + bu), r = sigmoid(Wxr x + Whr h + br),
    cand = tanh(Wxc x + Whc (r*h) + bc), h' = u*h + (1-u)*cand.

    All-zero parameters give h' = h/2.
    """

    def __init__(self, store: ParamStore, prefix: str, input_dim, hidden_dim, rng):
        self.store = store
        self.prefix = prefix
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        for gate in ("u", "r", "c"):
            store.create(f"{prefix}.wx_{gate}", _glorot(rng, input_dim, hidden_dim, store.dtype))
            store.create(f"{prefix}.wh_{gate}", _glorot(rng, hidden_dim, hidden_dim, store.dtype))
            store.create(f"{prefix}.b_{gate}", np.zeros(hidden_dim, dtype=store.dtype))

    def __call__(self, h: Tensor, x: Tensor) -> Tensor:
        if h.shape[-1] != self.hidden_dim:
            raise ValueError(f"{self.prefix}: hidden width {h.shape[-1]} != {self.hidden_dim}")
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"{self.prefix}: input width {x.shape[-1]} != {self.input_dim}")
        s = self.store
        p = self.prefix
        u = ad.sigmoid(x @ s[f"{p}.wx_u"] + h @ s[f"{p}.wh_u"] + s[f"{p}.b_u"])
        r = ad.sigmoid(x @ s[f"{p}.wx_r"] + h @ s[f"{p}.wh_r"] + s[f"{p}.b_r"])
        cand = ad.tanh(x @ s[f"{p}.wx_c"] + ad.mul(r, h) @ s[f"{p}.wh_c"] + s[f"{p}.b_c"])
        return ad.add(ad.mul(u, h), ad.mul(1.0 - u, cand))

    def param_names(self):
        return [f"{self.prefix}.{k}_{g}" for g in ("u", "r", "c")
                for k in ("wx", "wh", "b")]


class DiagGaussian:
    """Diagonal Gaussian with elementwise positive stddev."""

    def __init__(self, mean: Tensor, std: Tensor):
        if mean.shape != std.shape:
            raise ValueError(f"mean/std shape mismatch: {mean.shape} vs {std.shape}")
        self.mean = mean
        self.std = std


def std_from_raw(raw: Tensor) -> Tensor:
    """softplus plus a floor, so the KL never sees a zero stddev."""
    return ad.softplus(raw) + SIGMA_MIN


def gaussian_rsample(dist: DiagGaussian, noise) -> Tensor:
    """Reparameterized sample mean + std*noise; grads flow to both."""
    noise = ad.as_tensor(noise)
    if noise.shape != dist.mean.shape:
        raise ValueError(f"noise shape {noise.shape} != mean shape {dist.mean.shape}")
    return dist.mean + ad.mul(dist.std, noise)


def kl_diag_gaussian(q: DiagGaussian, p: DiagGaussian, axis=None) -> Tensor:
    """KL[q || p] for diagonal Gaussians, summed over `axis` (all dims if None)."""
    if np.any(q.std.data <= 0) or np.any(p.std.data <= 0):
        raise ValueError("kl_diag_gaussian requires strictly positive stddevs")
    term = (ad.log(p.std) - ad.log(q.std)
            + (ad.square(q.std) + ad.square(q.mean - p.mean)) / (2.0 * ad.square(p.std))
            - 0.5)
    return ad.sum_(term, axis=axis)


def gaussian_nll(mean: Tensor, target, axis=None) -> Tensor:
    """-ln p under a unit-variance Gaussian, constants dropped: 0.5*(x-mu)^2."""
    target = ad.as_tensor(target)
    return ad.sum_(0.5 * ad.square(mean - target), axis=axis)
