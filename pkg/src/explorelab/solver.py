"""Scripted solver (weighted best-first search) used as an oracle for solvability and success."""
from __future__ import annotations

import dataclasses
import heapq
from typing import Optional

import numpy as np

from .world import Action, DoneReason, DoorState, Kind, WorldState, step

# Done never changes the world and closing doors never helps.
_CANDIDATES = (
    Action.LEFT,
    Action.RIGHT,
    Action.FORWARD,
    Action.PICK,
    Action.DROP,
    Action.TOGGLE,
)


def _key(state: WorldState):
    return (state.grid.tobytes(), state.agent_pos, int(state.agent_dir), state.carried)


def _useless(state: WorldState, action: Action) -> bool:
    r, c = state.front_pos()
    h, w = state.shape
    if not (0 <= r < h and 0 <= c < w):
        return action in (Action.PICK, Action.DROP, Action.TOGGLE)
    kind, _, st = (int(v) for v in state.grid[r, c])
    if action == Action.TOGGLE:
        return not (kind == Kind.BOX or (kind == Kind.DOOR and st != DoorState.OPEN))
    if action == Action.PICK:
        return state.carried is not None or kind not in (Kind.KEY, Kind.BALL, Kind.BOX)
    if action == Action.DROP:
        return state.carried is None or kind != Kind.EMPTY
    return False


def _heuristic(state: WorldState) -> int:
    """Rough distance to solving: obstacles left plus distance to the target."""
    kinds = state.grid[..., 0]
    locked = int(np.count_nonzero((kinds == Kind.DOOR) & (state.grid[..., 2] == DoorState.LOCKED)))
    boxes = int(np.count_nonzero(kinds == Kind.BOX))
    task = state.task
    r, c = state.agent_pos
    dist = 0
    if task.kind == "goal":
        goal = np.argwhere(kinds == Kind.GOAL)
        if len(goal):
            dist = int(np.abs(goal - (r, c)).sum(axis=1).min())
    elif task.kind == "pickup" and state.carried != task.target:
        match = np.argwhere(
            (kinds == task.target.kind) & (state.grid[..., 1] == task.target.color)
        )
        if len(match):
            dist = int(np.abs(match - (r, c)).sum(axis=1).min())
    elif task.kind == "open":
        dist = abs(task.pos[0] - r) + abs(task.pos[1] - c)
    return 10 * (locked + boxes) + dist


def solve(
    state: WorldState, node_limit: int = 300_000, weight: float = 2.0
) -> Optional[list[Action]]:
    """A short action sequence that solves the episode, or None.

    Weighted best-first search with priority ``steps + weight * heuristic``;
    ``weight=0`` gives breadth-first search and shortest plans.  The search
    ignores the step clock, so callers compare ``len(plan)`` with the horizon.
    """
    rng = np.random.default_rng(0)
    # lift the clock so the search is not cut short by the horizon
    start = dataclasses.replace(state, t=0, T=2**62)
    root = _key(start)
    best = {root: 0}
    parents: dict = {}
    tie = 0
    frontier = [(0.0, tie, 0, start)]
    expanded = 0
    while frontier:
        _, _, g, s = heapq.heappop(frontier)
        if best.get(_key(s), g) < g:
            continue
        expanded += 1
        if expanded > node_limit:
            return None
        for a in _CANDIDATES:
            if _useless(s, a):
                continue
            tr = step(s, a, rng)
            nxt = tr.state_after
            k = _key(nxt)
            if k in best and best[k] <= g + 1:
                continue
            best[k] = g + 1
            parents[k] = (_key(s), a)
            if tr.done_reason == DoneReason.SOLVED:
                return _unwind(parents, k, root)
            tie += 1
            prio = g + 1 + (weight * _heuristic(nxt) if weight else 0.0)
            heapq.heappush(frontier, (prio, tie, g + 1, nxt))
    return None


def _unwind(parents, k, root) -> list[Action]:
    plan = []
    while k != root:
        k, a = parents[k]
        plan.append(a)
    plan.reverse()
    return plan


class ScriptedActor:
    """Replays a solver plan; replans at episode start."""

    def __init__(self, node_limit: int = 300_000):
        self.node_limit = node_limit
        self.plan: list[Action] = []

    def reset(self, state: WorldState) -> None:
        self.plan = list(solve(state, self.node_limit) or [])

    def __call__(self, state: WorldState, key: bytes) -> Action:
        return self.plan.pop(0) if self.plan else Action.DONE
