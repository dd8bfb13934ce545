"""PCA projection of BAN embeddings for source/target visual inspection."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autodiff as ad
from .ban import assign_behaviors
from .data import load_dataset
from .plots import scatter_chart
from .training import load_agent


def pca_top2(X: np.ndarray):
    """Top-2 principal components of the rows of X.

    Returns (coords (N,2), components (d,2), singular_values (2,)).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 3:
        raise ValueError("PCA projection needs at least 3 embeddings")
    centered = X - X.mean(axis=0)
    _u, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2].T
    if comps.shape[1] < 2:
        comps = np.concatenate([comps, np.zeros((comps.shape[0], 1))], axis=1)
        s = np.concatenate([s, [0.0]])
    return centered @ comps, comps, s[:2]


def export_projection(run_dir, target_dir, source_dir, out_dir,
                      checkpoint="ban.ckpt", config=None):
    """CSV of (domain, pc1, pc2, behavior_index) plus two SVG scatters."""
    agent = load_agent(run_dir, checkpoint=checkpoint, config=config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    embeds, domains, behaviors = [], [], []
    dirs = [("tar", target_dir)]
    if source_dir is not None:
        dirs.append(("src", source_dir))
    for domain, directory in dirs:
        _manifest, episodes = load_dataset(directory)
        for ep in episodes:
            obs = ep.flat_observations()
            if len(obs) < 2:
                continue
            e = agent.encoder(ad.as_tensor(obs.astype(np.float32))).data
            idx = assign_behaviors(agent.encoder, agent.codebook, obs).indices
            embeds.append(e)
            domains += [domain] * len(obs)
            # the last observation inherits its incoming transition's behavior
            behaviors += list(idx) + [int(idx[-1])]
    if not embeds or sum(len(e) for e in embeds) < 3:
        raise ValueError("PCA projection needs at least 3 embeddings")
    X = np.concatenate(embeds)
    coords, _comps, _sv = pca_top2(X)

    with open(out / "projection.csv", "w") as f:
        f.write("domain,pc1,pc2,behavior_index\n")
        for d, (p1, p2), b in zip(domains, coords, behaviors):
            f.write(f"{d},{p1:.8g},{p2:.8g},{b}\n")
    scatter_chart([(p1, p2, d) for d, (p1, p2) in zip(domains, coords)],
                  out / "projection_domain.svg", title="BAN embeddings by domain")
    scatter_chart([(p1, p2, f"k{b}") for b, (p1, p2) in zip(behaviors, coords)],
                  out / "projection_behavior.svg",
                  title="BAN embeddings by behavior")
    return coords
