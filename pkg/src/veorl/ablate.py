"""Single-axis ablation sweeps with shared seeds and a paired sign test."""
from __future__ import annotations

import json
from math import comb
from pathlib import Path

import numpy as np

from .config import ConfigError
from .plots import bar_chart
from .training import run_eval, run_training

SWEEP_AXES = ("codebook_size", "mmd_weight", "source_fraction", "omega",
              "bc_conditioning")


def paired_sign_test(a, b):
    """One-sided sign test that a > b on paired samples.

    Returns (n_positive, n_informative, p_value); ties are dropped.
    """
    diffs = [x - y for x, y in zip(a, b) if x != y]
    n = len(diffs)
    if n == 0:
        return 0, 0, 1.0
    pos = sum(d > 0 for d in diffs)
    p = sum(comb(n, k) for k in range(pos, n + 1)) / 2.0**n
    return pos, n, p


def run_ablation(config, sweep, target_dir, source_dir, out_dir,
                 seeds=(0, 1, 2), eval_episodes=20, eval_seed=1000):
    """One training+eval run per sweep value per seed; CSV table + bar plot.

    `sweep` maps exactly one axis name to a list of values. Source-fraction 0
    and mmd_weight 0 disable the corresponding source-domain machinery.
    """
    if len(sweep) != 1:
        raise ConfigError("one sweep axis per invocation")
    (axis, values), = sweep.items()
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for value in values:
        for seed in seeds:
            cfg = config.with_overrides({axis: value, "seed": seed})
            run_dir = out / f"{axis}-{value}-seed{seed}"
            src = None if (axis == "source_fraction" and float(value) == 0.0) \
                else source_dir
            result = run_training(cfg, target_dir, src, run_dir)
            report = run_eval(run_dir, episodes=eval_episodes, seed=eval_seed,
                              config=cfg)
            rows.append({"axis": axis, "value": value, "seed": seed,
                         "return_mean": report["return_mean"],
                         "return_std": report["return_std"],
                         "success_rate": report["success_rate"],
                         "counters": result.counters})

    with open(out / "ablation.csv", "w") as f:
        f.write("axis,value,seed,return_mean,return_std,success_rate\n")
        for r in rows:
            f.write(f"{r['axis']},{r['value']},{r['seed']},"
                    f"{r['return_mean']:.6g},{r['return_std']:.6g},"
                    f"{r['success_rate']:.6g}\n")
    (out / "ablation.json").write_text(json.dumps(rows, indent=2, default=str))

    labels, means, errors = [], [], []
    for value in values:
        rs = [r["return_mean"] for r in rows if r["value"] == value]
        labels.append(str(value))
        means.append(float(np.mean(rs)))
        errors.append(float(np.std(rs) / np.sqrt(len(rs))))
    bar_chart(labels, means, errors, out / "ablation.svg",
              title=f"eval return vs {axis}")
    return rows
