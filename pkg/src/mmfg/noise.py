"""Counter-based Brownian increments.

Each ``(seed, path, player)`` triple keys its own Philox stream, and the
increment at step ``n`` is read off raw counter outputs ``n*dim .. n*dim+dim-1``
through the inverse normal CDF. An increment is therefore a pure function of
``(seed, path, player, step)``: runs that share a seed see bit-identical noise
for every player they have in common, no matter how paths are batched. Player
0 is always the major player.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

from .numerics import TimeGrid

_MASK64 = (1 << 64) - 1


class NoiseSource:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def __repr__(self):
        return f"NoiseSource(seed={self.seed})"

    def normals(self, path: int, player: int, n_steps: int, dim: int) -> np.ndarray:
        """Standard normals of shape ``(n_steps, dim)`` for one stream."""
        if not (0 <= path < 2 ** 32 and 0 <= player < 2 ** 32):
            raise ValueError("path and player indices must fit in 32 bits")
        bg = np.random.Philox(key=[self.seed & _MASK64, (path << 32) | player], counter=0)
        raw = bg.random_raw(n_steps * dim)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
        return ndtri(u).reshape(n_steps, dim)

    def increments(self, paths, players, grid: TimeGrid, dim: int) -> np.ndarray:
        """Brownian increments of shape ``(len(paths), len(players), n_steps, dim)``."""
        paths, players = list(paths), list(players)
        n = grid.n_steps
        out = np.empty((len(paths), len(players), n, dim))
        for a, p in enumerate(paths):
            for b, i in enumerate(players):
                out[a, b] = self.normals(p, i, n, dim)
        out *= np.sqrt(grid.h)
        return out

    def major(self, paths, grid: TimeGrid, dim: int) -> np.ndarray:
        """``(len(paths), n_steps, dim)`` increments of W0."""
        return self.increments(paths, [0], grid, dim)[:, 0]

    def minors(self, paths, n_players: int, grid: TimeGrid, dim: int,
               first: int = 1) -> np.ndarray:
        """Increments of players ``first .. first + n_players - 1``."""
        return self.increments(paths, range(first, first + n_players), grid, dim)
