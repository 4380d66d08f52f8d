"""Procedural generators for every environment family.

Each generator is a pure function of ``(family, episode_seed)``.  Layouts
follow the MiniGrid families; the ObstructedMaze variants are reduced to
two- and three-room rows that keep the hidden-key and blocking-ball
mechanics.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .world import (
    CHAIN_POS,
    EMPTY_TRIPLE,
    HORIZON,
    N_COLORS,
    Color,
    Direction,
    DoorState,
    Family,
    GenerationFailed,
    Kind,
    Obj,
    Task,
    WorldState,
    freeze,
)

RETRY_BUDGET = 200


class _Builder:
    def __init__(self, height: int, width: int, rng: np.random.Generator, fill=Kind.EMPTY):
        self.grid = np.zeros((height, width, 3), dtype=np.int8)
        self.grid[..., 0] = int(fill)
        self.boxes: dict[tuple[int, int], Optional[Obj]] = {}
        self.rng = rng
        self.agent: Optional[tuple[int, int]] = None

    def wall_rect(self, top: int, left: int, h: int, w: int) -> None:
        g = self.grid
        g[top, left : left + w] = (int(Kind.WALL), int(Color.GREY), 0)
        g[top + h - 1, left : left + w] = (int(Kind.WALL), int(Color.GREY), 0)
        g[top : top + h, left] = (int(Kind.WALL), int(Color.GREY), 0)
        g[top : top + h, left + w - 1] = (int(Kind.WALL), int(Color.GREY), 0)

    def fill_rect(self, top: int, left: int, h: int, w: int, triple=EMPTY_TRIPLE) -> None:
        self.grid[top : top + h, left : left + w] = triple

    def put(self, pos: tuple[int, int], obj: Obj) -> None:
        self.grid[pos] = (int(obj.kind), int(obj.color), 0)
        if obj.kind == Kind.BOX:
            self.boxes[pos] = obj.contents

    def door(self, pos: tuple[int, int], color: int, state: DoorState) -> None:
        self.grid[pos] = (int(Kind.DOOR), int(color), int(state))

    def free_cells(self, top: int, left: int, h: int, w: int, exclude=()) -> list[tuple[int, int]]:
        cells = []
        for r in range(top, top + h):
            for c in range(left, left + w):
                if int(self.grid[r, c, 0]) == Kind.EMPTY and (r, c) != self.agent and (r, c) not in exclude:
                    cells.append((r, c))
        return cells

    def pick_cell(self, top, left, h, w, exclude=()) -> tuple[int, int]:
        cells = self.free_cells(top, left, h, w, exclude)
        if not cells:
            raise _Retry("no free cell")
        return cells[int(self.rng.integers(len(cells)))]

    def place(self, obj: Obj, top, left, h, w, exclude=()) -> tuple[int, int]:
        pos = self.pick_cell(top, left, h, w, exclude)
        self.put(pos, obj)
        return pos

    def place_agent(self, top, left, h, w, exclude=()) -> tuple[int, int]:
        self.agent = self.pick_cell(top, left, h, w, exclude)
        return self.agent

    def color(self, exclude=()) -> int:
        choices = [c for c in range(N_COLORS) if c not in exclude]
        return choices[int(self.rng.integers(len(choices)))]

    def finish(self, family: Family, seed: int, task: Task, direction=None) -> WorldState:
        if direction is None:
            direction = Direction(int(self.rng.integers(4)))
        return WorldState(
            grid=freeze(self.grid),
            agent_pos=self.agent,
            agent_dir=direction,
            carried=None,
            t=0,
            T=HORIZON[family],
            family=family,
            episode_seed=seed,
            task=task,
            boxes=dict(self.boxes),
        )


class _Retry(Exception):
    pass


class _RoomRow:
    """A single row of ``n`` square rooms sharing walls (MiniGrid RoomGrid)."""

    def __init__(self, b: _Builder, n: int, size: int):
        self.size = size
        self.n = n
        b.wall_rect(0, 0, size, (size - 1) * n + 1)
        for j in range(1, n):
            b.grid[:, j * (size - 1)] = (int(Kind.WALL), int(Color.GREY), 0)

    def interior(self, j: int) -> tuple[int, int, int, int]:
        return 1, j * (self.size - 1) + 1, self.size - 2, self.size - 2

    def door_pos(self, b: _Builder, j: int) -> tuple[int, int]:
        """Random door cell on the wall between room ``j`` and ``j + 1``."""
        return int(b.rng.integers(1, self.size - 1)), (j + 1) * (self.size - 1)


def _doorkey(size: int):
    def gen(b_rng: np.random.Generator, family: Family, seed: int) -> WorldState:
        b = _Builder(size, size, b_rng)
        b.wall_rect(0, 0, size, size)
        split = int(b.rng.integers(2, size - 2))
        b.grid[:, split] = (int(Kind.WALL), int(Color.GREY), 0)
        b.grid[size - 2, size - 2] = (int(Kind.GOAL), int(Color.GREEN), 0)
        b.place_agent(1, 1, size - 2, split - 1)
        door_r = int(b.rng.integers(1, size - 2))
        b.door((door_r, split), Color.YELLOW, DoorState.LOCKED)
        b.place(Obj(Kind.KEY, Color.YELLOW), 1, 1, size - 2, split - 1)
        return b.finish(family, seed, Task("goal"))

    return gen


def _unlock_like(pickup: bool, blocked: bool):
    def gen(rng: np.random.Generator, family: Family, seed: int) -> WorldState:
        b = _Builder(6, 11, rng)
        row = _RoomRow(b, 2, 6)
        door = row.door_pos(b, 0)
        color = b.color()
        b.door(door, color, DoorState.LOCKED)
        left = row.interior(0)
        blocker = (door[0], door[1] - 1)
        if blocked:
            b.put(blocker, Obj(Kind.BALL, Color(b.color())))
        b.place_agent(*left)
        b.place(Obj(Kind.KEY, Color(color)), *left)
        if pickup:
            box = Obj(Kind.BOX, Color(b.color()))
            b.place(box, *row.interior(1))
            return b.finish(family, seed, Task("pickup", target=box))
        return b.finish(family, seed, Task("open", pos=door))

    return gen


def _obstructed(n_rooms: int, blocked: bool):
    def gen(rng: np.random.Generator, family: Family, seed: int) -> WorldState:
        b = _Builder(6, 5 * n_rooms + 1, rng)
        row = _RoomRow(b, n_rooms, 6)
        used: list[int] = []
        doors = []
        for j in range(n_rooms - 1):
            pos = row.door_pos(b, j)
            color = b.color(exclude=used)
            used.append(color)
            b.door(pos, color, DoorState.LOCKED)
            doors.append((pos, color))
        if blocked:
            for (r, c), _ in doors:
                b.put((r, c - 1), Obj(Kind.BALL, Color(b.color(exclude=(Color.BLUE,)))))
        b.place_agent(*row.interior(0))
        for j, (_, color) in enumerate(doors):
            key = Obj(Kind.KEY, Color(color))
            b.place(Obj(Kind.BOX, Color(b.color()), key), *row.interior(j))
        target = Obj(Kind.BALL, Color.BLUE)
        b.place(target, *row.interior(n_rooms - 1))
        return b.finish(family, seed, Task("pickup", target=target))

    return gen


def _keycorridor(rng: np.random.Generator, family: Family, seed: int) -> WorldState:
    # 3x3 rooms of size 3: one-cell rooms either side of a vertical corridor
    b = _Builder(7, 7, rng, fill=Kind.WALL)
    for r in range(1, 6):
        b.grid[r, 3] = EMPTY_TRIPLE
    for i in range(3):
        b.grid[2 * i + 1, 1] = EMPTY_TRIPLE
        b.grid[2 * i + 1, 5] = EMPTY_TRIPLE
    ball_room = int(b.rng.integers(3))
    key_room = int(b.rng.integers(3))
    lock_color = b.color()
    for i in range(3):
        r = 2 * i + 1
        b.door((r, 2), b.color(), DoorState.CLOSED)
        if i == ball_room:
            b.door((r, 4), lock_color, DoorState.LOCKED)
        else:
            b.door((r, 4), b.color(), DoorState.CLOSED)
    ball = Obj(Kind.BALL, Color(b.color()))
    b.put((2 * ball_room + 1, 5), ball)
    b.put((2 * key_room + 1, 1), Obj(Kind.KEY, Color(lock_color)))
    b.agent = (3, 3)
    return b.finish(family, seed, Task("pickup", target=ball))


_OPPOSITE = {0: 2, 1: 3, 2: 0, 3: 1}


def _multiroom(n_rooms: int, max_size: int, noisy: bool):
    def gen(rng: np.random.Generator, family: Family, seed: int) -> WorldState:
        size = 25
        rooms = _place_rooms(rng, n_rooms, max_size, size)
        if rooms is None:
            raise _Retry("room placement")
        b = _Builder(size, size, rng, fill=Kind.WALL)
        for top, left, h, w, _, _ in rooms:
            b.wall_rect(top, left, h, w)
            b.fill_rect(top + 1, left + 1, h - 2, w - 2)
        prev_color = None
        for _, _, _, _, door, _ in rooms[1:]:
            color = b.color(exclude=() if prev_color is None else (prev_color,))
            b.door(door, color, DoorState.CLOSED)
            prev_color = color
        top, left, h, w, _, _ = rooms[0]
        b.place_agent(top + 1, left + 1, h - 2, w - 2)
        noisy_pos = None
        if noisy:
            noisy_pos = b.place(Obj(Kind.BALL, Color(b.color())), top + 1, left + 1, h - 2, w - 2)
        top, left, h, w, _, _ = rooms[-1]
        goal = b.pick_cell(top + 1, left + 1, h - 2, w - 2)
        b.grid[goal] = (int(Kind.GOAL), int(Color.GREEN), 0)
        return b.finish(family, seed, Task("goal", noisy_pos=noisy_pos))

    return gen


def _place_rooms(rng, n_rooms, max_size, size):
    """Chain of rooms, each attached to the previous one through a door.

    Rooms are ``(top, left, h, w, door, entry_side)`` with walls included.
    Returns None when the chain cannot be completed.
    """
    h, w = (int(v) for v in rng.integers(4, max_size + 1, size=2))
    rooms = [(int(rng.integers(0, size - h + 1)), int(rng.integers(0, size - w + 1)), h, w, None, None)]
    while len(rooms) < n_rooms:
        top, left, h, w, _, entry = rooms[-1]
        for _ in range(40):
            side = int(rng.integers(4))
            if side == entry:
                continue
            nh, nw = (int(v) for v in rng.integers(4, max_size + 1, size=2))
            if side in (0, 2):  # north / south wall
                dr = top if side == 0 else top + h - 1
                dc = left + int(rng.integers(1, w - 1))
                ntop = dr - nh + 1 if side == 0 else dr
                nleft = dc - int(rng.integers(1, nw - 1))
            else:  # east / west wall
                dc = left + w - 1 if side == 1 else left
                dr = top + int(rng.integers(1, h - 1))
                nleft = dc if side == 1 else dc - nw + 1
                ntop = dr - int(rng.integers(1, nh - 1))
            if ntop < 0 or nleft < 0 or ntop + nh > size or nleft + nw > size:
                continue
            cand = (ntop, nleft, nh, nw)
            if any(_overlaps(cand, room[:4]) for room in rooms):
                continue
            rooms.append((ntop, nleft, nh, nw, (dr, dc), _OPPOSITE[side]))
            break
        else:
            return None
    return rooms


def _overlaps(a, b) -> bool:
    """True when either room's interior intersects the other's full rect."""

    def inter(x, y):
        (t1, l1, h1, w1), (t2, l2, h2, w2) = x, y
        return t1 < t2 + h2 and t2 < t1 + h1 and l1 < l2 + w2 and l2 < l1 + w1

    ia = (a[0] + 1, a[1] + 1, a[2] - 2, a[3] - 2)
    ib = (b[0] + 1, b[1] + 1, b[2] - 2, b[3] - 2)
    return inter(ia, b) or inter(ib, a)


def _chainworld(rng: np.random.Generator, family: Family, seed: int) -> WorldState:
    b = _Builder(3, 6, rng)
    b.wall_rect(0, 0, 3, 6)
    b.agent = CHAIN_POS["A"]
    return b.finish(family, seed, Task("none"), direction=Direction.N)


KEYDOOR_KEY = (4, 2)
KEYDOOR_DOOR = (2, 6)


def _keydoor_fixture(rng: np.random.Generator, family: Family, seed: int) -> WorldState:
    b = _Builder(7, 7, rng)
    b.wall_rect(0, 0, 7, 7)
    b.put(KEYDOOR_KEY, Obj(Kind.KEY, Color.YELLOW))
    b.door(KEYDOOR_DOOR, Color.YELLOW, DoorState.LOCKED)
    b.place_agent(1, 1, 5, 5)
    return b.finish(family, seed, Task("none"))


_GENERATORS: dict[Family, Callable] = {
    Family.UNLOCK: _unlock_like(pickup=False, blocked=False),
    Family.UNLOCKPICKUP: _unlock_like(pickup=True, blocked=False),
    Family.BLOCKEDUNLOCKPICKUP: _unlock_like(pickup=True, blocked=True),
    Family.DOORKEY5: _doorkey(5),
    Family.DOORKEY6: _doorkey(6),
    Family.DOORKEY8: _doorkey(8),
    Family.KEYCORRIDOR: _keycorridor,
    Family.OBSTRUCTED1DLH: _obstructed(2, blocked=False),
    Family.OBSTRUCTED2DLH: _obstructed(3, blocked=False),
    Family.OBSTRUCTED2DLHB: _obstructed(3, blocked=True),
    Family.MULTIROOM_N6: _multiroom(6, 10, noisy=False),
    Family.MULTIROOM_N12S10: _multiroom(12, 10, noisy=False),
    Family.MULTIROOM_N4S5: _multiroom(4, 5, noisy=False),
    Family.MULTIROOM_N7S4: _multiroom(7, 4, noisy=False),
    Family.MULTIROOM_NOISYTV: _multiroom(7, 4, noisy=True),
    Family.CHAINWORLD: _chainworld,
    Family.KEYDOOR_FIXTURE: _keydoor_fixture,
}


def generate(family: Family | str, episode_seed: int) -> WorldState:
    """Build the episode layout for ``(family, episode_seed)``.

    Retries draw from a single stream seeded by ``episode_seed``, so the
    result is bit-identical across calls.
    """
    if not isinstance(family, Family):
        family = Family.parse(family)
    seed = int(episode_seed)
    if not 0 <= seed < 2**64:
        raise ValueError("episode_seed must be a 64-bit unsigned integer")
    rng = np.random.default_rng(seed)
    gen = _GENERATORS[family]
    for _ in range(RETRY_BUDGET):
        try:
            return gen(rng, family, seed)
        except _Retry:
            continue
    raise GenerationFailed(family, seed, "retry budget exhausted")
