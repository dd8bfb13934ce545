"""Central finite-difference gradient checking (64-bit mode)."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .nn import ParamStore


def finite_diff_check(loss_fn, store: ParamStore, eps=1e-5, names=None):
    """Compare analytic grads of a scalar loss against central differences.

    loss_fn is a zero-argument callable returning a scalar Tensor computed
    from the parameters in `store`. The store should be float64. Returns
    the max over coordinates of |analytic - numeric| / max(1, |numeric|).

    Runs under surrogate semantics: stop-gradient values are frozen at
    their unperturbed values, so losses with sg boundaries check the
    gradient their surrogate actually defines.
    """
    if store.dtype != np.float64:
        raise ValueError("finite_diff_check requires a float64 ParamStore")
    names = list(names) if names is not None else store.names()

    with ad.surrogate_mode():
        return _check(loss_fn, store, eps, names)


def _check(loss_fn, store, eps, names):
    store.zero_grads()
    ad.begin_surrogate_pass()
    loss = loss_fn()
    if loss.data.size != 1 or not np.isfinite(loss.data).all():
        raise ValueError("loss_fn must return a finite scalar")
    loss.backward()
    analytic = {}
    for n in names:
        g = store[n].grad
        analytic[n] = np.zeros_like(store[n].data) if g is None else g.copy()

    max_rel = 0.0
    for n in names:
        p = store[n]
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            ad.begin_surrogate_pass()
            f_plus = float(loss_fn().data)
            flat[i] = orig - eps
            ad.begin_surrogate_pass()
            f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            if not np.isfinite(numeric):
                raise FloatingPointError(f"non-finite loss perturbing {n}[{i}]")
            a = analytic[n].reshape(-1)[i]
            rel = abs(a - numeric) / max(1.0, abs(numeric))
            max_rel = max(max_rel, rel)
    return max_rel
