"""Egocentric and panoramic observations, change codes and ternary hashing.

An egocentric view is a 7x7x3 int8 tensor: row 0 is the farthest row in
front of the agent, row 6 is the agent's own row, and column 3 is the
agent's column (columns grow towards the agent's right).  Cells hidden
behind walls or closed doors, and cells outside the grid, are (0, 0, 0).
The agent's own cell shows the carried object, or an empty cell.

The panoramic view stacks four egocentric views rendered with the agent
facing N, E, S and W, so it does not depend on the agent's heading.
"""
from __future__ import annotations

import base64
from dataclasses import dataclass, field


import numpy as np

from .world import DIR_VEC, Direction, DoorState, Kind, WorldState

VIEW = 7
EGO_SIZE = VIEW * VIEW * 3
PANO_SIZE = 4 * EGO_SIZE
_PAD = VIEW - 1
_OUTSIDE = -1


class ShapeError(ValueError):
    pass


def _offsets() -> dict[int, tuple[np.ndarray, np.ndarray]]:
    # world offset of view cell (v, u): forward distance 6 - v, lateral u - 3
    fwd = (VIEW - 1) - np.arange(VIEW)[:, None]
    lat = np.arange(VIEW)[None, :] - VIEW // 2
    out = {}
    for d in Direction:
        dr, dc = DIR_VEC[d]
        rr, rc = dc, -dr  # agent's right-hand side
        out[int(d)] = (fwd * dr + lat * rr, fwd * dc + lat * rc)
    return out


_OFFSETS = _offsets()


def _visibility(opaque: list[list[bool]]) -> list[list[bool]]:
    """Shadow casting from the agent cell at (6, 3), as in MiniGrid."""
    mask = [[False] * VIEW for _ in range(VIEW)]
    mask[VIEW - 1][VIEW // 2] = True
    for v in range(VIEW - 1, -1, -1):
        row = mask[v]
        above = mask[v - 1] if v > 0 else None
        op = opaque[v]
        for u in range(VIEW - 1):
            if row[u] and not op[u]:
                row[u + 1] = True
                if above is not None:
                    above[u + 1] = True
                    above[u] = True
        for u in range(VIEW - 1, 0, -1):
            if row[u] and not op[u]:
                row[u - 1] = True
                if above is not None:
                    above[u - 1] = True
                    above[u] = True
    return mask


def _padded(grid: np.ndarray) -> np.ndarray:
    h, w = grid.shape[0], grid.shape[1]
    out = np.zeros((h + 2 * _PAD, w + 2 * _PAD, 3), dtype=np.int8)
    out[..., 0] = _OUTSIDE
    out[_PAD : _PAD + h, _PAD : _PAD + w] = grid
    return out


def _agent_cell(carried) -> tuple[int, int, int]:
    if carried is None:
        return (int(Kind.EMPTY), 0, 0)
    return (int(carried.kind), int(carried.color), 0)


def _render(padded: np.ndarray, pos, direction: int, carried) -> np.ndarray:
    rr, cc = _OFFSETS[direction]
    view = padded[rr + (pos[0] + _PAD), cc + (pos[1] + _PAD)]
    kinds = view[..., 0]
    opaque = (
        (kinds == Kind.WALL)
        | (kinds == _OUTSIDE)
        | ((kinds == Kind.DOOR) & (view[..., 2] != DoorState.OPEN))
    )
    mask = np.array(_visibility(opaque.tolist()), dtype=bool)
    mask &= kinds != _OUTSIDE
    out = np.where(mask[..., None], view, 0).astype(np.int8)
    out[VIEW - 1, VIEW // 2] = _agent_cell(carried)
    return out


class _ViewCache:
    """Panoramic views keyed by (grid bytes, position, carried object)."""

    def __init__(self, max_entries: int = 200_000):
        self.max_entries = max_entries
        self.views: dict = {}
        self.pads: dict = {}

    def pano(self, state: WorldState) -> np.ndarray:
        grid = state.grid
        gkey = (grid.shape, grid.tobytes())
        key = (gkey, state.agent_pos, state.carried)
        hit = self.views.get(key)
        if hit is not None:
            return hit
        padded = self.pads.get(gkey)
        if padded is None:
            if len(self.pads) > 4096:
                self.pads.clear()
            padded = self.pads[gkey] = _padded(grid)
        pano = np.stack(
            [_render(padded, state.agent_pos, d, state.carried) for d in range(4)]
        )
        pano.flags.writeable = False
        if len(self.views) >= self.max_entries:
            self.views.clear()
        self.views[key] = pano
        return pano


_CACHE = _ViewCache()


def pano_tensor(state: WorldState) -> np.ndarray:
    """Panoramic view as a (4, 7, 7, 3) array ordered N, E, S, W."""
    return _CACHE.pano(state)


def pano_view(state: WorldState) -> np.ndarray:
    """Flat 588-entry panoramic view."""
    return pano_tensor(state).reshape(-1)


def ego_view(state: WorldState) -> np.ndarray:
    return pano_tensor(state)[int(state.agent_dir)]


def render_ego(state: WorldState) -> np.ndarray:
    """Uncached single-heading render; same result as :func:`ego_view`."""
    return _render(_padded(state.grid), state.agent_pos, int(state.agent_dir), state.carried)


def change_code(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Element-wise ``after - before`` of two views of equal size."""
    before = np.asarray(before).reshape(-1)
    after = np.asarray(after).reshape(-1)
    if before.shape != after.shape:
        raise ShapeError(f"view sizes differ: {before.shape} vs {after.shape}")
    return (after.astype(np.int16) - before).astype(np.int8)


def full_obs(state: WorldState) -> np.ndarray:
    """Fully observed grid encoding with the agent drawn as (10, 0, dir)."""
    grid = np.array(state.grid, dtype=np.int8)
    grid[state.agent_pos] = (int(Kind.AGENT), 0, int(state.agent_dir))
    return grid


@dataclass(frozen=True)
class HashParams:
    """Static projection for ternary hashing of ``d``-dimensional inputs."""

    d: int
    k: int = 128
    master_seed: int = 0
    A: np.ndarray = field(init=False, repr=False, compare=False)
    w: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rng = np.random.default_rng([int(self.master_seed), int(self.d)])
        A = rng.standard_normal((self.k, self.d))
        w = rng.standard_normal(self.k)
        A.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "w", w)


def hash_g(x: np.ndarray, params: HashParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != params.d:
        raise ShapeError(f"expected {params.d} inputs, got {x.shape[0]}")
    return np.tanh(params.A @ x) + params.w


def ternary(g: np.ndarray) -> np.ndarray:
    """+1 above 0.5, -1 below -0.5, 0 in between."""
    g = np.asarray(g)
    return ((g > 0.5).astype(np.int8) - (g < -0.5).astype(np.int8)).astype(np.int8)


def hash_encode(x: np.ndarray, params: HashParams) -> np.ndarray:
    return ternary(hash_g(x, params))


def trits_to_str(code: np.ndarray) -> str:
    return "".join("+" if v > 0 else "-" if v < 0 else "0" for v in code.tolist())


def str_to_trits(text: str) -> np.ndarray:
    table = {"+": 1, "-": -1, "0": 0}
    return np.array([table[ch] for ch in text], dtype=np.int8)


class Keyer:
    """Turns views and change codes into dictionary keys.

    ``mode="raw"`` keys on the tensor bytes (lossless); ``mode="hash"`` keys
    on the ternary code of the tensor.
    """

    def __init__(self, mode: str = "raw", master_seed: int = 0, k: int = 128):
        if mode not in ("raw", "hash"):
            raise ValueError(f"unknown keying mode {mode!r}")
        self.mode = mode
        self.master_seed = int(master_seed)
        self.k = k
        self._params: dict[int, HashParams] = {}
        self._memo: dict[bytes, bytes] = {}

    def params(self, d: int) -> HashParams:
        p = self._params.get(d)
        if p is None:
            p = self._params[d] = HashParams(d=d, k=self.k, master_seed=self.master_seed)
        return p

    def key(self, x: np.ndarray) -> bytes:
        raw = x.tobytes()
        if self.mode == "raw":
            return raw
        hit = self._memo.get(raw)
        if hit is None:
            if len(self._memo) > 500_000:
                self._memo.clear()
            hit = self._memo[raw] = hash_encode(x, self.params(x.size)).tobytes()
        return hit

    def key_to_text(self, key: bytes) -> str:
        if self.mode == "hash":
            return trits_to_str(np.frombuffer(key, dtype=np.int8))
        return base64.b64encode(key).decode("ascii")

    def text_to_key(self, text: str) -> bytes:
        if self.mode == "hash":
            return str_to_trits(text).tobytes()
        return base64.b64decode(text.encode("ascii"))


def pairwise_collision_rate(
    n: int, params: HashParams, rng: np.random.Generator, min_diff: int = 3, high: int = 11
) -> float:
    """Fraction of colliding pairs among ``n`` random integer inputs.

    Inputs are uniform over ``[0, high)``; only pairs differing in at least
    ``min_diff`` entries are counted.
    """
    X = rng.integers(0, high, size=(n, params.d))
    codes = ternary(np.tanh(X.astype(np.float64) @ params.A.T) + params.w)
    groups: dict[bytes, list[int]] = {}
    for i, row in enumerate(codes):
        groups.setdefault(row.tobytes(), []).append(i)
    collisions = 0
    for members in groups.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                if np.count_nonzero(X[members[a]] != X[members[b]]) >= min_diff:
                    collisions += 1
    # pairs differing in 1..min_diff-1 entries are negligible for random rows,
    # so only exact duplicates are excluded
    total = n * (n - 1) // 2
    same = 0
    seen: dict[bytes, int] = {}
    for row in X:
        key = row.tobytes()
        seen[key] = seen.get(key, 0) + 1
    for c in seen.values():
        same += c * (c - 1) // 2
    pairs = total - same
    return collisions / pairs if pairs else 0.0
