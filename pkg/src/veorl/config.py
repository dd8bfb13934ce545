"""Flat `key = value` run configuration with usage tracking."""
from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def _in_unit(lo, hi):
    def check(v):
        return lo <= v <= hi
    return check


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _choice(*options):
    def check(v):
        return v in options
    return check


# key -> (default, type, validator, doc)
DEFAULTS = {
    "env_id": ("gridfetch", str, None, "environment id"),
    "seed": (0, int, _nonneg, "master seed"),
    "codebook_size": (50, int, lambda v: v >= 2, "number of latent behaviors K"),
    "code_dim": (16, int, lambda v: v >= 2 and v % 2 == 0, "behavior code width D"),
    "alpha": (1.0, float, _nonneg, "plan-loss weight in the BAN objective"),
    "lambda": (0.95, float, _in_unit(0.0, 1.0), "lambda-return mixing"),
    "gamma": (0.99, float, _in_unit(0.0, 1.0), "discount"),
    "horizon": (15, int, _positive, "imagination horizon L"),
    "omega": (0.05, float, _nonneg, "intrinsic reward weight"),
    "eta": (1e-4, float, _nonneg, "entropy weight"),
    "rho": ("auto", str, _choice("auto", "0", "1"), "gradient mix: auto by action type"),
    "ban_lr": (3e-4, float, _positive, "stage-1 learning rate"),
    "wm_lr": (3e-4, float, _positive, "stage-2 learning rate"),
    "policy_lr": (8e-5, float, _positive, "stage-3 learning rate"),
    "m1": (5000, int, _positive, "BAN training steps"),
    "m2": (20000, int, _positive, "world-model training steps"),
    "m3": (20000, int, _positive, "policy training steps"),
    "mmd_weight": (1.0, float, _nonneg, "embedding alignment weight"),
    "vq_norm": ("squared", str, _choice("squared", "plain"), "VQ distance norm"),
    "shortcut_mode": ("literal", str, _choice("literal", "runs"), "segmentation rule"),
    "bc_train_streams": ("both", str, _choice("plan", "both"), "states the BC head sees"),
    "plan_rollout": ("reanchored", str, _choice("reanchored", "free"), "plan stream mode"),
    "ban_finetune": (False, bool, None, "keep training BAN after stage 1"),
    "bc_conditioning": (True, bool, None, "condition actor/critic on the behavior code"),
    "source_fraction": (1.0, float, _in_unit(0.0, 1.0), "fraction of source videos used"),
    "batch_size": (16, int, _positive, "sequences per batch"),
    "seq_len": (8, int, lambda v: v >= 2, "observations per training window"),
    "free_nats": (3.0, float, _nonneg, "per-step KL floor with no gradient"),
    "kl_balance": (0.8, float, _in_unit(0.0, 1.0), "prior share of the KL gradient"),
    "reward_weight": (1.0, float, _nonneg, "reward-head loss scale"),
    "reward_focus": (4.0, float, _nonneg, "extra loss weight per unit |reward|"),
    "recon_focus": (10.0, float, _nonneg, "extra pixel loss weight per unit deviation from the mean image"),
    "hidden_dim": (32, int, _positive, "deterministic state width"),
    "stoch_dim": (8, int, _positive, "stochastic state width"),
    "embed_dim": (32, int, _positive, "world-model embedding width"),
    "units": (128, int, _positive, "MLP hidden width"),
    "encoder_arch": ("mlp", str, _choice("mlp", "conv"), "BAN encoder architecture"),
    "eval_episodes": (50, int, _positive, "episodes per evaluation"),
}

# attribute aliases for keys that are not valid identifiers
_ATTR_TO_KEY = {"lam": "lambda"}


def _parse_value(key, text, typ):
    text = text.strip()
    try:
        if typ is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigError(f"config key '{key}' expects {typ.__name__}, got {text!r}")


class RunConfig:
    """Resolved configuration; tracks which keys were actually read."""

    def __init__(self, values):
        object.__setattr__(self, "_values", dict(values))
        object.__setattr__(self, "_used", set())

    def __getattr__(self, attr):
        key = _ATTR_TO_KEY.get(attr, attr)
        values = object.__getattribute__(self, "_values")
        if key not in values:
            raise AttributeError(attr)
        object.__getattribute__(self, "_used").add(key)
        return values[key]

    def __setattr__(self, attr, value):
        raise AttributeError("RunConfig is immutable; use with_overrides()")

    def get(self, key):
        return self.__getattr__(key)

    def with_overrides(self, overrides):
        merged = dict(object.__getattribute__(self, "_values"))
        for key, raw in overrides.items():
            merged[key] = _validated(key, raw)
        return RunConfig(merged)

    def unused_keys(self):
        values = object.__getattribute__(self, "_values")
        return sorted(set(values) - object.__getattribute__(self, "_used"))

    def resolved_rho(self, action_kind):
        rho = self.rho
        if rho == "auto":
            return 1 if action_kind == "discrete" else 0
        return int(rho)

    def to_text(self):
        values = object.__getattribute__(self, "_values")
        lines = [f"{k} = {values[k]}" for k in sorted(values)]
        return "\n".join(lines) + "\n"

    def as_dict(self):
        return dict(object.__getattribute__(self, "_values"))


def _validated(key, raw):
    if key not in DEFAULTS:
        valid = ", ".join(sorted(DEFAULTS))
        raise ConfigError(f"unknown config key '{key}'; valid keys: {valid}")
    default, typ, check, _doc = DEFAULTS[key]
    value = _parse_value(key, str(raw), typ) if not isinstance(raw, typ) else raw
    if isinstance(value, bool) and typ is not bool:
        raise ConfigError(f"config key '{key}' expects {typ.__name__}")
    if check is not None and not check(value):
        raise ConfigError(f"config key '{key}' value {value!r} out of range")
    return value


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then file entries, then overrides (later wins)."""
    values = {k: v[0] for k, v in DEFAULTS.items()}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            values[key] = _validated(key, raw)
    for key, raw in (overrides or {}).items():
        values[key] = _validated(key, raw)
    return RunConfig(values)
