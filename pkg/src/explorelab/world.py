"""Deterministic gridworld engine.

Cells are stored as an int8 array of shape (H, W, 3) holding
(kind, color, door_state) triples, using the MiniGrid object indices so
that views and change codes stay comparable with that simulator.  Box
contents live in a side mapping keyed by position.

A ``WorldState`` is a value: ``step`` never mutates its input.  Grids are
shared between consecutive states until an action modifies them, at which
point the array is copied.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Mapping, NamedTuple, Optional

import numpy as np


class Kind(IntEnum):
    UNSEEN = 0
    EMPTY = 1
    WALL = 2
    DOOR = 4
    KEY = 5
    BALL = 6
    BOX = 7
    GOAL = 8
    AGENT = 10


class Color(IntEnum):
    RED = 0
    GREEN = 1
    BLUE = 2
    PURPLE = 3
    YELLOW = 4
    GREY = 5


N_COLORS = len(Color)


class DoorState(IntEnum):
    OPEN = 0
    CLOSED = 1
    LOCKED = 2


class Direction(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


# (drow, dcol) for each heading
DIR_VEC = {
    Direction.N: (-1, 0),
    Direction.E: (0, 1),
    Direction.S: (1, 0),
    Direction.W: (0, -1),
}


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1
    FORWARD = 2
    PICK = 3
    DROP = 4
    TOGGLE = 5
    DONE = 6


N_ACTIONS = len(Action)
INTERACTIONS = frozenset({Action.PICK, Action.DROP, Action.TOGGLE})


class Family(str, Enum):
    UNLOCK = "Unlock"
    DOORKEY5 = "DoorKey5x5"
    DOORKEY6 = "DoorKey6x6"
    DOORKEY8 = "DoorKey8x8"
    KEYCORRIDOR = "KeyCorridorS3R3"
    UNLOCKPICKUP = "UnlockPickup"
    BLOCKEDUNLOCKPICKUP = "BlockedUnlockPickup"
    OBSTRUCTED1DLH = "ObstructedMaze1Dlh"
    OBSTRUCTED2DLH = "ObstructedMaze2Dlh"
    OBSTRUCTED2DLHB = "ObstructedMaze2Dlhb"
    MULTIROOM_N6 = "MultiRoomN6"
    MULTIROOM_N12S10 = "MultiRoomN12S10"
    MULTIROOM_N4S5 = "MultiRoomN4S5"
    MULTIROOM_N7S4 = "MultiRoomN7S4"
    MULTIROOM_NOISYTV = "MultiRoomNoisyTV"
    CHAINWORLD = "ChainWorld"
    KEYDOOR_FIXTURE = "KeyDoorFixture"

    @classmethod
    def parse(cls, name: str) -> "Family":
        norm = name.replace("-", "").replace("_", "").lower()
        for fam in cls:
            if fam.value.lower() == norm:
                return fam
        raise ValueError(f"unknown environment family: {name!r}")


# Actions a learner may choose from.  The chain has exactly two edges out of
# every state, so only Left and Right are offered there.
AVAILABLE_ACTIONS = {
    Family.CHAINWORLD: (Action.LEFT, Action.RIGHT),
}
ALL_ACTIONS = tuple(Action)


def available_actions(family: "Family") -> tuple:
    return AVAILABLE_ACTIONS.get(family, ALL_ACTIONS)


HORIZON = {
    Family.UNLOCK: 288,
    Family.DOORKEY5: 250,
    Family.DOORKEY6: 360,
    Family.DOORKEY8: 640,
    Family.KEYCORRIDOR: 270,
    Family.UNLOCKPICKUP: 288,
    Family.BLOCKEDUNLOCKPICKUP: 576,
    Family.OBSTRUCTED1DLH: 288,
    Family.OBSTRUCTED2DLH: 576,
    Family.OBSTRUCTED2DLHB: 576,
    Family.MULTIROOM_N6: 120,
    Family.MULTIROOM_N12S10: 240,
    Family.MULTIROOM_N4S5: 100,
    Family.MULTIROOM_N7S4: 140,
    Family.MULTIROOM_NOISYTV: 140,
    Family.CHAINWORLD: 4,
    Family.KEYDOOR_FIXTURE: 250,
}


class Obj(NamedTuple):
    """A movable object: key, ball or box (a box may hold another object)."""

    kind: Kind
    color: Color
    contents: Optional["Obj"] = None


@dataclass(frozen=True)
class Cell:
    kind: Kind
    color: Color = Color.RED
    door_state: Optional[DoorState] = None
    box_contents: Optional[Obj] = None


class Task(NamedTuple):
    """Goal predicate parameters.

    ``kind`` is one of ``"goal"`` (stand on the Goal cell), ``"pickup"``
    (carry an object matching ``target`` by kind and color), ``"open"``
    (the door at ``pos`` is open) or ``"none"`` (never solved).
    ``noisy_pos`` marks the NoisyTV ball.
    """

    kind: str
    target: Optional[Obj] = None
    pos: Optional[tuple[int, int]] = None
    noisy_pos: Optional[tuple[int, int]] = None


class DoneReason(str, Enum):
    NONE = "none"
    SOLVED = "solved"
    TIMEOUT = "timeout"


class GenerationFailed(RuntimeError):
    def __init__(self, family: Family, seed: int, reason: str = ""):
        super().__init__(f"could not generate {family.value} for seed {seed}: {reason}")
        self.family = family
        self.seed = seed


@dataclass(frozen=True, eq=False)
class WorldState:
    grid: np.ndarray
    agent_pos: tuple[int, int]
    agent_dir: Direction
    carried: Optional[Obj]
    t: int
    T: int
    family: Family
    episode_seed: int
    task: Task
    boxes: Mapping[tuple[int, int], Optional[Obj]] = dataclasses.field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[0], self.grid.shape[1]

    def cell(self, r: int, c: int) -> Cell:
        kind, color, st = (int(v) for v in self.grid[r, c])
        kind = Kind(kind)
        if kind == Kind.DOOR:
            return Cell(kind, Color(color), door_state=DoorState(st))
        if kind == Kind.BOX:
            return Cell(kind, Color(color), box_contents=self.boxes.get((r, c)))
        return Cell(kind, Color(color))

    def front_pos(self) -> tuple[int, int]:
        dr, dc = DIR_VEC[self.agent_dir]
        return self.agent_pos[0] + dr, self.agent_pos[1] + dc

    def same_as(self, other: "WorldState") -> bool:
        """Bit-level equality of everything that defines the world."""
        return (
            self.grid.shape == other.grid.shape
            and np.array_equal(self.grid, other.grid)
            and self.agent_pos == other.agent_pos
            and self.agent_dir == other.agent_dir
            and self.carried == other.carried
            and self.t == other.t
            and self.T == other.T
            and self.family == other.family
            and self.episode_seed == other.episode_seed
            and self.task == other.task
            and dict(self.boxes) == dict(other.boxes)
        )


class Transition(NamedTuple):
    state_before: WorldState
    action: Action
    state_after: WorldState
    extrinsic_reward: float
    done: bool
    done_reason: DoneReason


EMPTY_TRIPLE = (int(Kind.EMPTY), 0, 0)
_PASSABLE = (int(Kind.EMPTY), int(Kind.GOAL))
_PICKABLE = (int(Kind.KEY), int(Kind.BALL), int(Kind.BOX))

# ChainWorld cells: row 1 of a 3x6 corridor, D A B C left to right.
CHAIN_POS = {"A": (1, 2), "B": (1, 3), "C": (1, 4), "D": (1, 1)}
CHAIN_NAME = {v: k for k, v in CHAIN_POS.items()}


def extrinsic_reward(t: int, T: int) -> float:
    """Success reward for solving at step ``t`` of a ``T``-step episode."""
    return 1.0 - 0.9 * (t / T)


def freeze(grid: np.ndarray) -> np.ndarray:
    grid.flags.writeable = False
    return grid


def goal_reached(state: WorldState) -> bool:
    task = state.task
    if task.kind == "goal":
        r, c = state.agent_pos
        return int(state.grid[r, c, 0]) == Kind.GOAL
    if task.kind == "pickup":
        carried = state.carried
        return (
            carried is not None
            and carried.kind == task.target.kind
            and carried.color == task.target.color
        )
    if task.kind == "open":
        r, c = task.pos
        return int(state.grid[r, c, 2]) == DoorState.OPEN
    return False


def noisy_tv_effect(state: WorldState, rng: np.random.Generator) -> WorldState:
    """Resample the NoisyTV ball color uniformly over all colors."""
    if state.family != Family.MULTIROOM_NOISYTV or state.task.noisy_pos is None:
        return state
    r, c = state.task.noisy_pos
    color = int(rng.integers(N_COLORS))
    grid = state.grid.copy()
    grid[r, c, 1] = color
    return dataclasses.replace(state, grid=freeze(grid))


def _chain_step(state: WorldState, action: Action) -> WorldState:
    here = CHAIN_NAME[state.agent_pos]
    nxt = here
    if action in (Action.LEFT, Action.RIGHT):
        if here == "A":
            nxt = "B" if action == Action.LEFT else "D"
        elif here == "B":
            nxt = "C"
        elif here == "C":
            nxt = "B"
    return dataclasses.replace(state, agent_pos=CHAIN_POS[nxt], t=state.t + 1)


def step(
    state: WorldState, action: Action, rng: Optional[np.random.Generator] = None
) -> Transition:
    """Apply one action.  ``rng`` drives the NoisyTV resampling only."""
    if state.t >= state.T:
        raise ValueError("step called on a terminal state")
    action = Action(action)
    if state.family == Family.CHAINWORLD:
        after = _chain_step(state, action)
    else:
        after = _grid_step(state, action)
        if action == Action.DROP and state.family == Family.MULTIROOM_NOISYTV:
            if rng is None:
                raise ValueError("NoisyTV needs an rng for the Drop effect")
            after = noisy_tv_effect(after, rng)

    if goal_reached(after):
        return Transition(
            state, action, after, extrinsic_reward(after.t, after.T), True, DoneReason.SOLVED
        )
    if after.t >= after.T:
        return Transition(state, action, after, 0.0, True, DoneReason.TIMEOUT)
    return Transition(state, action, after, 0.0, False, DoneReason.NONE)


def _grid_step(state: WorldState, action: Action) -> WorldState:
    t = state.t + 1
    if action == Action.LEFT:
        return dataclasses.replace(state, agent_dir=Direction((state.agent_dir - 1) % 4), t=t)
    if action == Action.RIGHT:
        return dataclasses.replace(state, agent_dir=Direction((state.agent_dir + 1) % 4), t=t)

    grid = state.grid
    fr, fc = state.front_pos()
    h, w = grid.shape[0], grid.shape[1]
    if not (0 <= fr < h and 0 <= fc < w):
        return dataclasses.replace(state, t=t)
    kind, color, door = (int(v) for v in grid[fr, fc])

    if action == Action.FORWARD:
        if kind in _PASSABLE or (kind == Kind.DOOR and door == DoorState.OPEN):
            return dataclasses.replace(state, agent_pos=(fr, fc), t=t)
        return dataclasses.replace(state, t=t)

    if action == Action.PICK:
        if state.carried is None and kind in _PICKABLE and (fr, fc) != state.task.noisy_pos:
            obj = Obj(Kind(kind), Color(color), state.boxes.get((fr, fc)))
            new_grid = grid.copy()
            new_grid[fr, fc] = EMPTY_TRIPLE
            boxes = state.boxes
            if kind == Kind.BOX:
                boxes = {p: o for p, o in boxes.items() if p != (fr, fc)}
            return dataclasses.replace(
                state, grid=freeze(new_grid), carried=obj, boxes=boxes, t=t
            )
        return dataclasses.replace(state, t=t)

    if action == Action.DROP:
        if state.carried is not None and kind == Kind.EMPTY:
            obj = state.carried
            new_grid = grid.copy()
            new_grid[fr, fc] = (int(obj.kind), int(obj.color), 0)
            boxes = state.boxes
            if obj.kind == Kind.BOX:
                boxes = dict(boxes)
                boxes[(fr, fc)] = obj.contents
            return dataclasses.replace(
                state, grid=freeze(new_grid), carried=None, boxes=boxes, t=t
            )
        return dataclasses.replace(state, t=t)

    if action == Action.TOGGLE:
        if kind == Kind.DOOR:
            new_state = None
            if door == DoorState.LOCKED:
                carried = state.carried
                if carried is not None and carried.kind == Kind.KEY and carried.color == color:
                    new_state = DoorState.OPEN
            elif door == DoorState.CLOSED:
                new_state = DoorState.OPEN
            else:
                new_state = DoorState.CLOSED
            if new_state is not None:
                new_grid = grid.copy()
                new_grid[fr, fc, 2] = int(new_state)
                return dataclasses.replace(state, grid=freeze(new_grid), t=t)
        elif kind == Kind.BOX:
            contents = state.boxes.get((fr, fc))
            new_grid = grid.copy()
            if contents is None:
                new_grid[fr, fc] = EMPTY_TRIPLE
            else:
                new_grid[fr, fc] = (int(contents.kind), int(contents.color), 0)
            boxes = {p: o for p, o in state.boxes.items() if p != (fr, fc)}
            if contents is not None and contents.kind == Kind.BOX:
                boxes[(fr, fc)] = contents.contents
            return dataclasses.replace(state, grid=freeze(new_grid), boxes=boxes, t=t)
        return dataclasses.replace(state, t=t)

    # DONE
    return dataclasses.replace(state, t=t)


_CHAR = {
    Kind.EMPTY: ".",
    Kind.WALL: "#",
    Kind.GOAL: "G",
}
_OBJ_CHAR = {Kind.KEY: "k", Kind.BALL: "b", Kind.BOX: "x"}
_DOOR_CHAR = {DoorState.OPEN: "_", DoorState.CLOSED: "d", DoorState.LOCKED: "L"}
_AGENT_CHAR = {Direction.N: "^", Direction.E: ">", Direction.S: "v", Direction.W: "<"}


def render_text(state: WorldState) -> str:
    """One character per cell; colors are dropped.  Used for golden tests."""
    rows = []
    for r in range(state.grid.shape[0]):
        line = []
        for c in range(state.grid.shape[1]):
            if (r, c) == state.agent_pos:
                line.append(_AGENT_CHAR[state.agent_dir])
                continue
            kind = Kind(int(state.grid[r, c, 0]))
            if kind == Kind.DOOR:
                line.append(_DOOR_CHAR[DoorState(int(state.grid[r, c, 2]))])
            elif kind in _OBJ_CHAR:
                line.append(_OBJ_CHAR[kind])
            else:
                line.append(_CHAR.get(kind, "?"))
        rows.append("".join(line))
    return "\n".join(rows)


def object_multiset(state: WorldState) -> list[tuple[int, int]]:
    """Sorted (kind, color) of every movable object, carried one included."""
    items = []
    kinds = state.grid[..., 0]
    for kind in _PICKABLE:
        for r, c in zip(*np.nonzero(kinds == kind)):
            items.append((kind, int(state.grid[r, c, 1])))
    if state.carried is not None:
        items.append((int(state.carried.kind), int(state.carried.color)))
    return sorted(items)


def generate(family: "Family | str", episode_seed: int) -> WorldState:
    """Build a fresh episode; see :mod:`explorelab.layouts`."""
    from .layouts import generate as _generate

    return _generate(family, episode_seed)
