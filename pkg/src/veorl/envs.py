"""Toy pixel environments with domain-shifted source variants.

GridFetch: discrete 5-action navigation on an N x N grid toward a goal
cell. PointPush: continuous 2-D control pushing a block to a target.
Source-domain rendering uses a shifted palette (and, for PointPush, a 10%
faster step) so the embedding-alignment loss has genuine work to do.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

OBS_SIZE = 16
GRID_ACTIONS = 5  # up, down, left, right, noop
_GRID_MOVES = {0: (0, -1), 1: (0, 1), 2: (-1, 0), 3: (1, 0), 4: (0, 0)}

# palette id 0 = target domain, 1 = source domain, 2 = night (dim)
_PALETTES = {
    0: {"bg": (0.05, 0.05, 0.08), "agent": (0.9, 0.1, 0.1), "goal": (0.1, 0.8, 0.1),
        "key": (0.9, 0.8, 0.1), "block": (0.6, 0.3, 0.1)},
    1: {"bg": (0.12, 0.10, 0.02), "agent": (0.95, 0.85, 0.1), "goal": (0.1, 0.7, 0.9),
        "key": (0.7, 0.1, 0.9), "block": (0.2, 0.6, 0.6)},
    2: {"bg": (0.02, 0.02, 0.03), "agent": (0.45, 0.05, 0.05), "goal": (0.05, 0.4, 0.05),
        "key": (0.45, 0.4, 0.05), "block": (0.3, 0.15, 0.05)},
}


@dataclass
class GridFetchState:
    agent: tuple
    goal: tuple
    palette: int = 0
    key: tuple | None = None       # 2Goals variant: must be fetched first
    has_key: bool = True           # True when no key or key already fetched
    t: int = 0


@dataclass
class PointPushState:
    agent: np.ndarray
    block: np.ndarray
    target: np.ndarray
    palette: int = 0
    speed: float = 0.1
    t: int = 0


class GridFetch:
    """Sparse-goal grid navigation; reward 1 at the goal, -0.01 per step."""

    action_space = ("discrete", GRID_ACTIONS)
    time_limit = 64

    def __init__(self, size=8, palette=0, two_goals=False):
        self.size = size
        self.palette = palette
        self.two_goals = two_goals

    def reset(self, rng) -> GridFetchState:
        n = self.size
        cells = [(x, y) for x in range(n) for y in range(n)]
        picks = rng.choice(len(cells), size=3 if self.two_goals else 2, replace=False)
        agent, goal = cells[picks[0]], cells[picks[1]]
        key = cells[picks[2]] if self.two_goals else None
        return GridFetchState(agent=agent, goal=goal, palette=self.palette,
                              key=key, has_key=not self.two_goals)

    def step(self, state: GridFetchState, action: int):
        if not (0 <= action < GRID_ACTIONS):
            raise ValueError(f"invalid GridFetch action: {action}")
        dx, dy = _GRID_MOVES[int(action)]
        n = self.size
        x = min(max(state.agent[0] + dx, 0), n - 1)
        y = min(max(state.agent[1] + dy, 0), n - 1)
        new = replace(state, agent=(x, y), t=state.t + 1)
        reward, done = -0.01, False
        if self.two_goals and not new.has_key and new.agent == new.key:
            new = replace(new, has_key=True)
            reward = 1.0
        elif new.has_key and new.agent == new.goal:
            reward, done = 1.0, True
        if new.t >= self.time_limit:
            done = True
        return new, reward, done

    def render(self, state: GridFetchState) -> np.ndarray:
        pal = _PALETTES[state.palette]
        img = np.empty((3, OBS_SIZE, OBS_SIZE), dtype=np.float32)
        for c in range(3):
            img[c].fill(pal["bg"][c])
        cell = OBS_SIZE // self.size
        def draw(pos, color):
            x0, y0 = pos[0] * cell, pos[1] * cell
            for c in range(3):
                img[c, y0:y0 + cell, x0:x0 + cell] = color[c]
        draw(state.goal, pal["goal"])
        if state.key is not None and not state.has_key:
            draw(state.key, pal["key"])
        draw(state.agent, pal["agent"])
        return img

    def scripted_action(self, state: GridFetchState, eps, rng) -> int:
        """Greedy shortest-path move toward the current objective."""
        if rng.random() < eps:
            return int(rng.integers(GRID_ACTIONS))
        tgt = state.key if (state.key is not None and not state.has_key) else state.goal
        dx = tgt[0] - state.agent[0]
        dy = tgt[1] - state.agent[1]
        if dx == 0 and dy == 0:
            return 4
        if abs(dx) >= abs(dy) and dx != 0:
            return 3 if dx > 0 else 2
        return 1 if dy > 0 else 0


class PointPush:
    """Push a block to a target; reward is negative block-target distance."""

    action_space = ("continuous", 2)
    time_limit = 128
    contact_radius = 0.08
    success_radius = 0.05

    def __init__(self, palette=0, speed=0.1):
        self.palette = palette
        self.speed = speed

    def reset(self, rng) -> PointPushState:
        return PointPushState(agent=rng.random(2), block=0.25 + 0.5 * rng.random(2),
                              target=0.25 + 0.5 * rng.random(2),
                              palette=self.palette, speed=self.speed)

    def step(self, state: PointPushState, action):
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        p_new = np.clip(state.agent + state.speed * a, 0.0, 1.0)
        block = state.block.copy()
        gap = np.linalg.norm(p_new - block)
        if gap < self.contact_radius:
            push_dir = block - p_new
            norm = np.linalg.norm(push_dir)
            if norm > 1e-9:
                overlap = self.contact_radius - gap
                block = np.clip(block + overlap * push_dir / norm, 0.0, 1.0)
        new = PointPushState(agent=p_new, block=block, target=state.target,
                             palette=state.palette, speed=state.speed, t=state.t + 1)
        dist = np.linalg.norm(block - state.target)
        done = dist < self.success_radius or new.t >= self.time_limit
        return new, float(-dist), done

    def render(self, state: PointPushState) -> np.ndarray:
        pal = _PALETTES[state.palette]
        img = np.empty((3, OBS_SIZE, OBS_SIZE), dtype=np.float32)
        for c in range(3):
            img[c].fill(pal["bg"][c])
        def draw(pos, color, half=1):
            cx = int(np.clip(pos[0], 0, 1) * (OBS_SIZE - 1))
            cy = int(np.clip(pos[1], 0, 1) * (OBS_SIZE - 1))
            x0, x1 = max(cx - half, 0), min(cx + half + 1, OBS_SIZE)
            y0, y1 = max(cy - half, 0), min(cy + half + 1, OBS_SIZE)
            for c in range(3):
                img[c, y0:y1, x0:x1] = color[c]
        draw(state.target, pal["goal"])
        draw(state.block, pal["block"])
        draw(state.agent, pal["agent"])
        return img

    def scripted_action(self, state: PointPushState, eps, rng):
        if rng.random() < eps:
            return rng.uniform(-1.0, 1.0, 2)
        to_target = state.target - state.block
        norm = np.linalg.norm(to_target)
        if norm < 1e-9:
            return np.zeros(2)
        behind = state.block - 0.06 * to_target / norm
        if np.linalg.norm(state.agent - behind) > 0.05:
            move = behind - state.agent
        else:
            move = to_target
        scale = np.linalg.norm(move)
        return np.clip(move / max(scale, 0.05), -1.0, 1.0)


def make_env(env_id: str):
    if env_id == "gridfetch":
        return GridFetch()
    if env_id == "gridfetch-src":
        return GridFetch(palette=1)
    if env_id == "gridfetch-2goals":
        return GridFetch(two_goals=True)
    if env_id == "pointpush":
        return PointPush()
    if env_id == "pointpush-src":
        return PointPush(palette=1, speed=0.11)
    if env_id == "pointpush-night":
        return PointPush(palette=2)
    raise ValueError(f"unknown env id: {env_id}")
