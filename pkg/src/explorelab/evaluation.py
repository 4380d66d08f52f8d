"""Metrics over evaluation rollouts and the small diagnostic experiments.

Evaluation never updates a policy.  Every metric is a pure function of the
recorded episodes, so saving the records and recomputing reproduces the
summary exactly.
"""
from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .agent import (
    PolicyTable,
    TrainConfig,
    act,
    greedy,
    masked_softmax,
    pretrain,
)
from .counts import CountTable, ResetPolicy, maybe_reset_pair, observe
from .layouts import KEYDOOR_KEY
from .perception import Keyer, change_code, ego_view, full_obs, pano_view
from .rewards import RewardKind, RewardSpec, intrinsic_reward
from .world import (
    CHAIN_NAME,
    CHAIN_POS,
    INTERACTIONS,
    N_ACTIONS,
    Action,
    Direction,
    DoneReason,
    Family,
    Kind,
    WorldState,
    available_actions,
    generate,
    step,
)

Actor = Callable[[WorldState, bytes], Action]


@dataclass
class EpisodeRecord:
    family: str
    env_seed: int
    actions: list = field(default_factory=list)
    extrinsic: list = field(default_factory=list)
    intrinsic_raw: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    change_keys: list = field(default_factory=list)
    interactions: list = field(default_factory=list)
    start_pos: tuple = (0, 0)
    grid_shape: tuple = (0, 0)
    floor: Optional[np.ndarray] = None
    done_reason: str = DoneReason.NONE.value

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def solved(self) -> bool:
        return self.done_reason == DoneReason.SOLVED.value


@dataclass
class MetricsSummary:
    episodes: int
    unique_interactions_mean: float
    success_rate: float
    coverage: dict
    coverage_fraction: float
    uniformity: float
    action_distribution: list
    normalized_entropy: float
    mean_length: float
    mean_extrinsic_return: float

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["coverage"] = {f"{r},{c}": n for (r, c), n in sorted(self.coverage.items())}
        return out


# actors ---------------------------------------------------------------------


class TableActor:
    """Samples (or takes the argmax of) a tabular policy, optionally composed
    with frozen exploration logits."""

    def __init__(
        self,
        policy: Optional[PolicyTable],
        rng: np.random.Generator,
        use_greedy: bool = False,
        frozen: Optional[PolicyTable] = None,
        alpha: float = 1.0,
    ):
        self.policy = policy
        self.frozen = frozen
        self.alpha = alpha
        self.rng = rng
        self.use_greedy = use_greedy
        self.allowed = None

    def reset(self, state: WorldState) -> None:
        acts = available_actions(state.family)
        self.allowed = None if len(acts) == N_ACTIONS else tuple(int(a) for a in acts)

    def logits(self, key: bytes) -> np.ndarray:
        f = self.policy.f(key) if self.policy is not None else np.zeros(N_ACTIONS)
        if self.frozen is not None:
            f = self.alpha * self.frozen.f(key) + f
        return f

    def __call__(self, state: WorldState, key: bytes) -> Action:
        f = self.logits(key)
        if self.use_greedy:
            return greedy(f, self.allowed)
        return act(f, self.rng, self.allowed)


class RandomActor(TableActor):
    def __init__(self, rng: np.random.Generator):
        super().__init__(None, rng)


class ConstantActor:
    def __init__(self, action: Action):
        self.action = Action(action)

    def reset(self, state: WorldState) -> None:
        pass

    def __call__(self, state: WorldState, key: bytes) -> Action:
        return self.action


class SequenceActor:
    """Replays a fixed list of actions, then emits Done."""

    def __init__(self, actions: Sequence[int]):
        self.actions = [Action(a) for a in actions]
        self._left: list = []

    def reset(self, state: WorldState) -> None:
        self._left = list(self.actions)

    def __call__(self, state: WorldState, key: bytes) -> Action:
        return self._left.pop(0) if self._left else Action.DONE


# rollouts -------------------------------------------------------------------


def _floor_mask(state: WorldState) -> np.ndarray:
    return state.grid[..., 0] != Kind.WALL


def rollout(
    actor,
    state: WorldState,
    keyer: Keyer,
    noise_rng: np.random.Generator,
    counter: Optional[tuple[CountTable, CountTable]] = None,
    spec: RewardSpec = RewardSpec(),
) -> EpisodeRecord:
    """Run one episode from ``state`` and record everything the metrics need.

    ``counter`` is an optional (state, change) table pair used to log the
    intrinsic reward the episode would have earned; it is never reset here.
    """
    if hasattr(actor, "reset"):
        actor.reset(state)
    rec = EpisodeRecord(
        family=state.family.value,
        env_seed=state.episode_seed,
        start_pos=state.agent_pos,
        grid_shape=state.shape,
        floor=_floor_mask(state),
    )
    states, changes = counter if counter is not None else (CountTable(), CountTable())
    pano = pano_view(state)
    key = keyer.key(ego_view(state))
    while True:
        a = Action(actor(state, key))
        tr = step(state, a, noise_rng)
        nxt = tr.state_after
        pano1 = pano_view(nxt)
        key1 = keyer.key(ego_view(nxt))
        c = change_code(pano, pano1)
        ckey = c.tobytes()
        ns = observe(states, key1)
        nc = observe(changes, ckey)
        rec.actions.append(int(a))
        rec.extrinsic.append(tr.extrinsic_reward)
        rec.intrinsic_raw.append(intrinsic_reward(spec, ns, nc))
        rec.positions.append(nxt.agent_pos)
        rec.change_keys.append(ckey)
        rec.interactions.append(a in INTERACTIONS and bool(np.any(c)))
        state, pano, key = nxt, pano1, key1
        if tr.done:
            rec.done_reason = tr.done_reason.value
            return rec


def evaluate(
    actor,
    family: Family | str,
    episodes: int = 100,
    seed: int = 0,
    keying: str = "raw",
    hash_seed: int = 0,
    env_seeds: Optional[Sequence[int]] = None,
) -> list[EpisodeRecord]:
    """Roll out ``episodes`` episodes on environment seeds derived from ``seed``."""
    family = Family.parse(family) if isinstance(family, str) else Family(family)
    ss = np.random.SeedSequence(int(seed))
    env_ss, noise_ss = ss.spawn(2)
    if env_seeds is None:
        env_rng = np.random.default_rng(env_ss)
        env_seeds = [int(env_rng.integers(0, 2**63 - 1)) for _ in range(episodes)]
    noise = np.random.default_rng(noise_ss)
    keyer = Keyer(keying, hash_seed)
    tables = (CountTable(), CountTable())
    return [rollout(actor, generate(family, s), keyer, noise, tables) for s in env_seeds]


# metrics --------------------------------------------------------------------


def unique_interactions(records: Iterable[EpisodeRecord]) -> float:
    """Mean number of new interaction changes per episode.

    An interaction counts when its change code was not produced by any
    earlier interaction of the same evaluation run.
    """
    seen: set = set()
    n_eps = 0
    for rec in records:
        n_eps += 1
        for flag, ckey in zip(rec.interactions, rec.change_keys):
            if flag:
                seen.add(ckey)
    return len(seen) / n_eps if n_eps else 0.0


def success_rate(records: Sequence[EpisodeRecord]) -> float:
    if not records:
        return 0.0
    return sum(r.solved for r in records) / len(records)


def normalized_entropy(weights: np.ndarray, n_outcomes: int) -> float:
    """Entropy of ``weights`` (normalised) divided by ``log(n_outcomes)``."""
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0 or n_outcomes <= 1:
        return 0.0
    p = w[w > 0] / total
    return float(-(p * np.log(p)).sum() / math.log(n_outcomes))


def action_distribution(records: Iterable[EpisodeRecord]) -> tuple[list, float]:
    counts = np.zeros(N_ACTIONS)
    for rec in records:
        np.add.at(counts, np.asarray(rec.actions, dtype=np.int64), 1)
    total = counts.sum()
    probs = counts / total if total else counts
    return [float(p) for p in probs], normalized_entropy(counts, N_ACTIONS)


@dataclass
class Coverage:
    counts: np.ndarray
    reachable: np.ndarray
    fraction: float
    uniformity: float

    def as_dict(self) -> dict:
        return {(int(r), int(c)): int(self.counts[r, c]) for r, c in np.argwhere(self.counts)}


def coverage_heatmap(records: Sequence[EpisodeRecord], mode: str = "steps") -> Coverage:
    """Visit counts per grid cell, coverage fraction and uniformity.

    ``mode="steps"`` counts the position after every step, so counts sum to
    the number of recorded steps.  ``mode="entries"`` counts the start cell
    once and then a cell each time the agent moves into it, which ignores
    turning in place.  Reachable cells are the non-wall cells of the
    recorded layouts; uniformity is the visit entropy normalised by the log
    of the number of reachable cells.
    """
    if not records:
        return Coverage(np.zeros((0, 0), dtype=np.int64), np.zeros((0, 0), bool), 0.0, 0.0)
    h = max(r.grid_shape[0] for r in records)
    w = max(r.grid_shape[1] for r in records)
    counts = np.zeros((h, w), dtype=np.int64)
    reachable = np.zeros((h, w), dtype=bool)
    for rec in records:
        if rec.floor is not None:
            fh, fw = rec.floor.shape
            reachable[:fh, :fw] |= rec.floor
        if mode == "steps":
            for r, c in rec.positions:
                counts[r, c] += 1
        elif mode == "entries":
            prev = rec.start_pos
            counts[prev] += 1
            for pos in rec.positions:
                if pos != prev:
                    counts[pos] += 1
                prev = pos
        else:
            raise ValueError(f"unknown coverage mode {mode!r}")
    reachable |= counts > 0
    n_reach = int(reachable.sum())
    fraction = float(np.count_nonzero(counts)) / n_reach if n_reach else 0.0
    return Coverage(counts, reachable, fraction, normalized_entropy(counts.ravel(), n_reach))


def summarize(records: Sequence[EpisodeRecord]) -> MetricsSummary:
    cov = coverage_heatmap(records)
    dist, ent = action_distribution(records)
    n = len(records)
    return MetricsSummary(
        episodes=n,
        unique_interactions_mean=unique_interactions(records),
        success_rate=success_rate(records),
        coverage=cov.as_dict(),
        coverage_fraction=cov.fraction,
        uniformity=cov.uniformity,
        action_distribution=dist,
        normalized_entropy=ent,
        mean_length=float(np.mean([r.length for r in records])) if n else 0.0,
        mean_extrinsic_return=float(np.mean([sum(r.extrinsic) for r in records])) if n else 0.0,
    )


# images ---------------------------------------------------------------------


def heat_rgb(values: np.ndarray, mask: Optional[np.ndarray] = None, scale: int = 16) -> np.ndarray:
    """White-to-red colouring of a non-negative grid; masked-out cells are grey."""
    v = np.asarray(values, dtype=np.float64)
    top = v.max() if v.size and v.max() > 0 else 1.0
    t = v / top
    rgb = np.empty(v.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = 255
    rgb[..., 1] = np.round(255 * (1.0 - t)).astype(np.uint8)
    rgb[..., 2] = np.round(255 * (1.0 - t)).astype(np.uint8)
    if mask is not None:
        rgb[~mask] = (90, 90, 90)
    return np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """Binary portable pixmap (P6)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM file")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


# key-door reward maps --------------------------------------------------------

MAP_ACTIONS = (Action.LEFT, Action.RIGHT, Action.FORWARD, Action.PICK)


def random_walk_counts(
    episodes: int = 200, seed: int = 0, actions: Sequence[Action] = tuple(Action)
) -> tuple[CountTable, CountTable, np.ndarray]:
    """State and change counts of random walks on the key-door fixture.

    Actions are drawn uniformly from ``actions``, by default the full action
    set of a uniform-random policy.  States and changes use the
    fully observed grid encoding with the agent drawn with its heading.
    Returns the two tables and the per-cell visit grid.
    """
    choices = [Action(a) for a in actions]
    rng = np.random.default_rng(seed)
    states, changes = CountTable(), CountTable()
    visits = None
    for _ in range(episodes):
        s = generate(Family.KEYDOOR_FIXTURE, int(rng.integers(0, 2**63 - 1)))
        if visits is None:
            visits = np.zeros(s.shape, dtype=np.int64)
        obs = full_obs(s)
        observe(states, obs.tobytes())
        visits[s.agent_pos] += 1
        while True:
            tr = step(s, choices[int(rng.integers(len(choices)))], rng)
            obs1 = full_obs(tr.state_after)
            observe(states, obs1.tobytes())
            observe(changes, change_code(obs, obs1).tobytes())
            s, obs = tr.state_after, obs1
            visits[s.agent_pos] += 1
            if tr.done:
                break
    return states, changes, visits


@dataclass
class RewardMap:
    """Rewards per (row, col, action) for the agent facing south, NaN on
    cells the agent cannot stand on."""

    name: str
    values: np.ndarray
    actions: tuple = MAP_ACTIONS

    def argmax(self) -> tuple[int, int, Action]:
        flat = np.nanargmax(self.values)
        r, c, a = np.unravel_index(flat, self.values.shape)
        return int(r), int(c), self.actions[int(a)]

    def mean(self, action: Action) -> float:
        return float(np.nanmean(self.values[..., self.actions.index(action)]))


def _fixture_base() -> WorldState:
    return generate(Family.KEYDOOR_FIXTURE, 0)


def reward_map(
    kind: str | RewardKind,
    states: CountTable,
    changes: CountTable,
) -> RewardMap:
    """Reward of each mapped action at each free cell of the key-door fixture.

    ``kind`` is a RewardKind or ``"change_norm"`` for the squared change norm
    divided by the square root of the next-state count.  Counts are the
    recorded counts plus one, as if the transition were observed now.
    """
    base = _fixture_base()
    h, w = base.shape
    out = np.full((h, w, len(MAP_ACTIONS)), np.nan)
    kinds = base.grid[..., 0]
    for r, c in itertools.product(range(h), range(w)):
        if kinds[r, c] not in (Kind.EMPTY, Kind.GOAL):
            continue
        s = dataclasses.replace(base, agent_pos=(r, c), agent_dir=Direction.S, t=0)
        obs = full_obs(s)
        for j, a in enumerate(MAP_ACTIONS):
            nxt = step(s, a).state_after
            obs1 = full_obs(nxt)
            code = change_code(obs, obs1)
            ns = states.get(obs1.tobytes()) + 1
            nc = changes.get(code.tobytes()) + 1
            if kind == "change_norm":
                out[r, c, j] = float(np.sum(code.astype(np.int64) ** 2)) / math.sqrt(ns)
            else:
                out[r, c, j] = intrinsic_reward(RewardKind(kind), ns, nc)
    return RewardMap(str(kind if isinstance(kind, str) else kind.value), out)


def key_pick_cell() -> tuple[int, int]:
    """Cell from which an agent facing south can pick the fixture's key."""
    return KEYDOOR_KEY[0] - 1, KEYDOOR_KEY[1]


def key_reward_maps(episodes: int = 200, seed: int = 0, actions=tuple(Action)) -> dict[str, RewardMap]:
    states, changes, _ = random_walk_counts(episodes, seed, actions)
    return {
        "count": reward_map(RewardKind.COUNT_ONLY, states, changes),
        "change_norm": reward_map("change_norm", states, changes),
        "cbet": reward_map(RewardKind.CBET, states, changes),
    }


def is_corner(cell: tuple[int, int], floor: np.ndarray) -> bool:
    """A floor cell with walls on two orthogonal sides."""
    r, c = cell
    blocked = [not floor[r + dr, c + dc] for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1))]
    return (blocked[0] or blocked[2]) and (blocked[1] or blocked[3])


def loop_rewards(
    spec: RewardSpec, policy: ResetPolicy, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Raw intrinsic rewards of an agent bouncing between two states.

    Each step moves to the other state; the change key is the direction of
    the move.  Without resets the state count after t steps is about t/2,
    so CountOnly rewards fall as 1/sqrt(t).
    """
    states, changes = CountTable(), CountTable()
    out = np.empty(steps, dtype=np.float64)
    s = 0
    observe(states, bytes([s]))
    for t in range(steps):
        s1 = 1 - s
        ns = observe(states, bytes([s1]))
        nc = observe(changes, bytes([2 + s1]))
        out[t] = intrinsic_reward(spec, ns, nc)
        maybe_reset_pair(states, changes, rng, policy)
        s = s1
    return out


# chainworld ----------------------------------------------------------------


@dataclass
class ChainReport:
    returns: dict
    best: str
    loop_return: float
    d_return: float
    greedy_at_a: Optional[str] = None
    p_d_at_a: Optional[float] = None
    d_occupancy: Optional[float] = None


def _chain_keys(keyer: Keyer) -> dict:
    s0 = generate(Family.CHAINWORLD, 0)
    return {
        name: keyer.key(ego_view(dataclasses.replace(s0, agent_pos=pos)))
        for name, pos in CHAIN_POS.items()
    }


def chain_returns(
    spec: RewardSpec = RewardSpec(RewardKind.COUNT_ONLY),
    horizon: int = 5,
    prior: Optional[tuple[CountTable, CountTable]] = None,
    keying: str = "raw",
) -> dict[str, float]:
    """Undiscounted intrinsic return of every chain trajectory of ``horizon`` states.

    Trajectories start at A and follow the chain edges; A's own visit is
    scored as a first visit with no change.  Counts start from ``prior``
    (copied) or from empty tables.
    """
    keyer = Keyer(keying)
    s0 = generate(Family.CHAINWORLD, 0)
    out = {}
    for moves in itertools.product((Action.LEFT, Action.RIGHT), repeat=max(horizon - 1, 0)):
        states, changes = CountTable(), CountTable()
        if prior is not None:
            states.counts = dict(prior[0].counts)
            changes.counts = dict(prior[1].counts)
        s = s0
        ns = observe(states, keyer.key(ego_view(s)))
        total = intrinsic_reward(spec, ns, 1)
        path = "A"
        pano = pano_view(s)
        for a in moves:
            nxt = step(s, a).state_after
            pano1 = pano_view(nxt)
            ns = observe(states, keyer.key(ego_view(nxt)))
            nc = observe(changes, keyer.key(change_code(pano, pano1)))
            total += intrinsic_reward(spec, ns, nc)
            path += CHAIN_NAME[nxt.agent_pos]
            s, pano = nxt, pano1
        out[path] = max(out.get(path, -math.inf), total)
    return out


def chain_diagnostic(
    reset_policy: ResetPolicy,
    spec: RewardSpec = RewardSpec(RewardKind.COUNT_ONLY),
    horizon: int = 5,
    cfg: Optional[TrainConfig] = None,
    seed: int = 0,
    eval_episodes: int = 1000,
) -> ChainReport:
    """Exact trajectory returns plus, when ``cfg`` is given, learned-policy stats.

    D-occupancy is the share of visits to B, C or D that land on D over
    ``eval_episodes`` sampled rollouts of the learned policy.
    """
    returns = chain_returns(spec, horizon)
    loop = "A" + "BC" * horizon
    loop = loop[:horizon]
    dpath = ("A" + "D" * horizon)[:horizon]
    best = max(sorted(returns), key=lambda k: returns[k])
    report = ChainReport(returns, best, returns.get(loop, math.nan), returns.get(dpath, math.nan))
    if cfg is None:
        return report
    cfg = dataclasses.replace(cfg, env_schedule=[Family.CHAINWORLD])
    res = pretrain(cfg, spec, reset_policy, seed)
    keys = _chain_keys(Keyer("raw"))
    allowed = (int(Action.LEFT), int(Action.RIGHT))
    f_a = res.policy.f(keys["A"])
    report.greedy_at_a = "B" if greedy(f_a, allowed) == Action.LEFT else "D"
    report.p_d_at_a = float(masked_softmax(f_a, allowed)[Action.RIGHT])
    actor = TableActor(res.policy, np.random.default_rng([seed, 1]))
    records = evaluate(actor, Family.CHAINWORLD, eval_episodes, seed=seed)
    visits = {"B": 0, "C": 0, "D": 0}
    for rec in records:
        for pos in rec.positions:
            name = CHAIN_NAME[pos]
            if name in visits:
                visits[name] += 1
    total = sum(visits.values())
    report.d_occupancy = visits["D"] / total if total else 0.0
    return report


# decay ---------------------------------------------------------------------


def decay_ratio(trend: Sequence[float]) -> float:
    """Last window mean over first window mean."""
    if not trend or trend[0] == 0:
        return math.nan
    return trend[-1] / trend[0]
