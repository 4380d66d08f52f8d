"""Tabular softmax actor-critic for exploration pre-training and transfer.

The policy is keyed on the egocentric view.  During pre-training the only
reward is intrinsic.  At transfer the exploration logits are added, frozen,
to a fresh task policy: ``logits = alpha * f_explore + f_task``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .counts import CountTable, ResetMode, ResetPolicy, maybe_reset_pair, observe
from .perception import Keyer, change_code, ego_view, pano_view
from .rewards import RewardSpec, View, intrinsic_reward
from .world import (
    N_ACTIONS,
    Action,
    DoneReason,
    Family,
    WorldState,
    available_actions,
    generate,
    step,
)

LOG_N_ACTIONS = math.log(N_ACTIONS)


class NumericalError(ArithmeticError):
    pass


class IncompatibleCheckpoint(ValueError):
    pass


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def masked_softmax(logits: np.ndarray, allowed: Optional[Sequence[int]] = None) -> np.ndarray:
    """Softmax over ``allowed`` actions; the others get probability 0."""
    if allowed is None or len(allowed) == N_ACTIONS:
        return softmax(logits)
    idx = list(allowed)
    probs = np.zeros(N_ACTIONS)
    probs[idx] = softmax(np.asarray(logits)[idx])
    return probs


def act(
    logits: np.ndarray, rng: np.random.Generator, allowed: Optional[Sequence[int]] = None
) -> Action:
    """Sample an action from ``softmax(logits)``, optionally over a subset."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (N_ACTIONS,):
        raise ValueError(f"expected {N_ACTIONS} logits, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericalError(f"non-finite logits: {logits}")
    return Action(_sample(masked_softmax(logits, allowed), rng))


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, N_ACTIONS - 1)


def greedy(logits: np.ndarray, allowed: Optional[Sequence[int]] = None) -> Action:
    # np.argmax returns the first maximum, so ties go to the lowest index
    if allowed is None:
        return Action(int(np.argmax(logits)))
    idx = sorted(int(a) for a in allowed)
    return Action(idx[int(np.argmax(np.asarray(logits)[idx]))])


def entropy_grad(probs: np.ndarray) -> np.ndarray:
    """Gradient of the policy entropy with respect to the logits."""
    logp = np.log(np.maximum(probs, 1e-300))
    h = -float(probs @ logp)
    return -probs * (logp + h)


class PolicyTable:
    """Logits and state values keyed by an egocentric-view key.

    Unvisited keys have zero logits (uniform policy) and zero value.
    """

    def __init__(self, keying: str = "raw"):
        self.keying = keying
        self.logits: dict[bytes, np.ndarray] = {}
        self.values: dict[bytes, float] = {}

    def __len__(self) -> int:
        return len(self.logits)

    def f(self, key: bytes) -> np.ndarray:
        row = self.logits.get(key)
        return row if row is not None else np.zeros(N_ACTIONS)

    def row(self, key: bytes) -> np.ndarray:
        row = self.logits.get(key)
        if row is None:
            row = self.logits[key] = np.zeros(N_ACTIONS)
        return row

    def v(self, key: bytes) -> float:
        return self.values.get(key, 0.0)

    def probs(self, key: bytes) -> np.ndarray:
        return softmax(self.f(key))

    def copy(self) -> "PolicyTable":
        out = PolicyTable(self.keying)
        out.logits = {k: v.copy() for k, v in self.logits.items()}
        out.values = dict(self.values)
        return out


@dataclass
class TrainConfig:
    gamma_i: float = 0.99
    gamma: float = 0.99
    p: float = 0.001
    actor_lr: float = 0.05
    critic_lr: float = 0.05
    entropy_coeff: float = 0.0005
    n_step: int = 1
    total_steps: int = 100_000
    env_schedule: list = field(default_factory=lambda: [Family.DOORKEY8])
    shared_reset_coin: bool = False

    def __post_init__(self):
        self.env_schedule = [Family.parse(f) if isinstance(f, str) else Family(f) for f in self.env_schedule]
        for name in ("gamma_i", "gamma"):
            g = getattr(self, name)
            if not 0.0 < g < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {g}")
        if self.n_step < 1:
            raise ValueError("n_step must be at least 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")


def _apply(
    policy: PolicyTable,
    s_key: bytes,
    a: int,
    target: float,
    cfg: TrainConfig,
    bias: Optional[np.ndarray],
    allowed: Optional[Sequence[int]] = None,
) -> float:
    v_s = policy.values.get(s_key, 0.0)
    delta = target - v_s
    policy.values[s_key] = v_s + cfg.critic_lr * delta
    row = policy.row(s_key)
    probs = masked_softmax(row if bias is None else bias + row, allowed)
    grad = -probs
    grad[a] += 1.0
    step_vec = delta * grad
    if cfg.entropy_coeff:
        step_vec += cfg.entropy_coeff * entropy_grad(probs)
    row += cfg.actor_lr * step_vec
    return delta


def ac_update(
    policy: PolicyTable,
    s_key: bytes,
    a: int,
    r: float,
    s2_key: bytes,
    done: bool,
    cfg: TrainConfig,
    gamma: Optional[float] = None,
    bias: Optional[np.ndarray] = None,
    allowed: Optional[Sequence[int]] = None,
) -> float:
    """One-step actor-critic update; returns the TD error.

    ``bias`` is added to the logits before the softmax (frozen exploration
    logits at transfer); only the table's own logits are written.
    """
    g = cfg.gamma if gamma is None else gamma
    target = r if done else r + g * policy.values.get(s2_key, 0.0)
    return _apply(policy, s_key, int(a), target, cfg, bias, allowed)


class NStepLearner:
    """Accumulates transitions and applies n-step actor-critic updates."""

    def __init__(self, policy: PolicyTable, cfg: TrainConfig, gamma: float):
        self.policy = policy
        self.cfg = cfg
        self.gamma = gamma
        self.buf: deque = deque()

    def push(
        self, s_key, a, r, s2_key, done: bool, episode_end: bool, bias=None, allowed=None
    ) -> None:
        if self.cfg.n_step == 1:
            ac_update(self.policy, s_key, a, r, s2_key, done, self.cfg, self.gamma, bias, allowed)
            return
        self.buf.append((s_key, int(a), r, bias, allowed))
        if len(self.buf) >= self.cfg.n_step:
            self._pop(s2_key, done)
        if episode_end:
            while self.buf:
                self._pop(s2_key, done)

    def _pop(self, last_key, done: bool) -> None:
        ret = 0.0 if done else self.policy.values.get(last_key, 0.0)
        for _, _, r, _, _ in reversed(self.buf):
            ret = r + self.gamma * ret
        s_key, a, _, bias, allowed = self.buf.popleft()
        _apply(self.policy, s_key, a, ret, self.cfg, bias, allowed)


@dataclass
class EpisodeLog:
    """One row of the training metrics file."""

    episode: int
    family: str
    env_seed: int
    start_step: int
    length: int
    done_reason: str
    extrinsic_return: float
    intrinsic_raw_sum: float
    intrinsic_scaled_sum: float
    state_resets: int
    change_resets: int
    state_keys: int
    action_counts: list

    @property
    def solved(self) -> bool:
        return self.done_reason == DoneReason.SOLVED.value


@dataclass
class RunResult:
    policy: PolicyTable
    state_counts: CountTable
    change_counts: CountTable
    episodes: list
    intrinsic_raw: np.ndarray
    steps: int
    rng_state: dict


class _Streams:
    """Independent random streams derived from one master seed."""

    def __init__(self, master_seed: int):
        ss = np.random.SeedSequence(int(master_seed))
        env, actions, resets, noise = ss.spawn(4)
        self.env = np.random.default_rng(env)
        self.actions = np.random.default_rng(actions)
        self.resets = np.random.default_rng(resets)
        self.noise = np.random.default_rng(noise)

    def next_env_seed(self) -> int:
        return int(self.env.integers(0, 2**63 - 1))

    def state(self) -> dict:
        return {
            name: getattr(self, name).bit_generator.state
            for name in ("env", "actions", "resets", "noise")
        }


def _allowed(family: Family) -> Optional[tuple]:
    acts = available_actions(family)
    return None if len(acts) == N_ACTIONS else tuple(int(a) for a in acts)


class _IntrinsicCounter:
    """State and change pseudocounts plus the reward they define."""

    def __init__(self, spec: RewardSpec, keyer: Keyer, policy: ResetPolicy, cfg: TrainConfig):
        self.spec = spec
        self.keyer = keyer
        self.policy = policy
        self.shared = cfg.shared_reset_coin
        p = policy.p if policy.mode == ResetMode.RANDOM else 0.0
        self.states = CountTable(p, cfg.gamma_i)
        self.changes = CountTable(p, cfg.gamma_i)

    def state_key(self, ego_key: bytes, state: WorldState, pano: np.ndarray) -> bytes:
        if self.spec.state_view == View.EGO:
            return ego_key
        return self.keyer.key(pano)

    def begin(self, ego_key: bytes, state: WorldState, pano: np.ndarray) -> None:
        observe(self.states, self.state_key(ego_key, state, pano))

    def reward(self, before: WorldState, after: WorldState, pano0, pano1, ego_key1) -> float:
        ns = observe(self.states, self.state_key(ego_key1, after, pano1))
        if self.spec.change_view == View.PANO:
            c = change_code(pano0, pano1)
        else:
            c = change_code(ego_view(before), ego_view(after))
        nc = observe(self.changes, self.keyer.key(c))
        return intrinsic_reward(self.spec, ns, nc)

    def after_step(self, rng: np.random.Generator, episode_end: bool) -> None:
        maybe_reset_pair(self.states, self.changes, rng, self.policy, False, self.shared)
        if episode_end:
            maybe_reset_pair(self.states, self.changes, rng, self.policy, True, self.shared)


def pretrain(
    cfg: TrainConfig,
    reward_spec: RewardSpec,
    reset_policy: ResetPolicy,
    master_seed: int,
    keying: str = "raw",
    hash_seed: int = 0,
) -> RunResult:
    """Learn an exploration policy from intrinsic rewards only.

    Families in ``cfg.env_schedule`` are visited round-robin, one episode at
    a time, with one state table and one change table shared by all of them.
    Extrinsic rewards are recorded but never used for learning.  Episode ends
    (solved or timed out) are terminal; a run cut short by ``total_steps``
    bootstraps from the last state.
    """
    if not cfg.env_schedule:
        raise ValueError("env_schedule must not be empty")
    streams = _Streams(master_seed)
    keyer = Keyer(keying, hash_seed)
    policy = PolicyTable(keying)
    counter = _IntrinsicCounter(reward_spec, keyer, reset_policy, cfg)
    learner = NStepLearner(policy, cfg, cfg.gamma_i)
    raw_log = np.zeros(cfg.total_steps)
    episodes: list[EpisodeLog] = []

    steps = 0
    while steps < cfg.total_steps:
        family = cfg.env_schedule[len(episodes) % len(cfg.env_schedule)]
        env_seed = streams.next_env_seed()
        state = generate(family, env_seed)
        allowed = _allowed(family)
        pano = pano_view(state)
        key = keyer.key(ego_view(state))
        counter.begin(key, state, pano)
        start = steps
        ext = raw_sum = scaled_sum = 0.0
        r0, c0 = counter.states.resets_performed, counter.changes.resets_performed
        actions = [0] * N_ACTIONS
        reason = DoneReason.NONE
        while True:
            a = act(policy.f(key), streams.actions, allowed)
            actions[a] += 1
            tr = step(state, a, streams.noise)
            nxt = tr.state_after
            pano1 = pano_view(nxt)
            key1 = keyer.key(ego_view(nxt))
            r_raw = counter.reward(state, nxt, pano, pano1, key1)
            r = reward_spec.scale * r_raw
            raw_log[steps] = r_raw
            steps += 1
            ext += tr.extrinsic_reward
            raw_sum += r_raw
            scaled_sum += r
            truncated = steps >= cfg.total_steps
            episode_end = tr.done or truncated
            terminal = tr.done
            learner.push(key, a, r, key1, terminal, episode_end, None, allowed)
            counter.after_step(streams.resets, episode_end)
            state, pano, key = nxt, pano1, key1
            if episode_end:
                reason = tr.done_reason
                break
        episodes.append(
            EpisodeLog(
                episode=len(episodes),
                family=family.value,
                env_seed=env_seed,
                start_step=start,
                length=steps - start,
                done_reason=reason.value,
                extrinsic_return=ext,
                intrinsic_raw_sum=raw_sum,
                intrinsic_scaled_sum=scaled_sum,
                state_resets=counter.states.resets_performed - r0,
                change_resets=counter.changes.resets_performed - c0,
                state_keys=len(counter.states),
                action_counts=actions,
            )
        )
    return RunResult(
        policy, counter.states, counter.changes, episodes, raw_log, steps, streams.state()
    )


def compose_task_policy(f_e: np.ndarray, f_i: np.ndarray, alpha: float) -> np.ndarray:
    return alpha * np.asarray(f_i) + np.asarray(f_e)


def alpha_schedule(text: str | float | None) -> Callable[[int], float]:
    """``None`` or a number for a constant, ``linear:N`` for 1 -> 0 over N steps."""
    if text is None:
        return lambda t: 1.0
    if isinstance(text, (int, float)):
        value = float(text)
        return lambda t: value
    kind, _, arg = str(text).partition(":")
    kind = kind.strip().lower()
    if kind == "linear":
        horizon = int(float(arg))
        if horizon <= 0:
            raise ValueError("linear alpha decay needs a positive horizon")
        return lambda t: max(0.0, 1.0 - t / horizon)
    if kind in ("const", "constant"):
        value = float(arg)
        return lambda t: value
    return alpha_schedule(float(text))


@dataclass
class TransferConfig:
    env: Family = Family.DOORKEY5
    frozen_exploration: Optional[PolicyTable] = None
    alpha: Optional[str | float] = None
    tabula_rasa: bool = False

    def __post_init__(self):
        self.env = Family.parse(self.env) if isinstance(self.env, str) else Family(self.env)
        alpha_schedule(self.alpha)  # validate early


def transfer_train(
    tcfg: TransferConfig,
    cfg: TrainConfig,
    master_seed: int,
    keying: str = "raw",
    hash_seed: int = 0,
    reward_spec: Optional[RewardSpec] = None,
    reset_policy: Optional[ResetPolicy] = None,
) -> RunResult:
    """Learn a task policy on extrinsic rewards.

    With a frozen exploration table the acting and learning policy is
    ``softmax(alpha(t) * f_explore + f_task)``; the frozen table is only read.
    With ``tabula_rasa`` the learner also receives the intrinsic reward of
    ``reward_spec`` (CBET by default) and there is no frozen bias.
    """
    frozen = tcfg.frozen_exploration
    if frozen is not None and frozen.keying != keying:
        raise IncompatibleCheckpoint(
            f"checkpoint keys views with {frozen.keying!r}, run uses {keying!r}"
        )
    if frozen is not None and tcfg.tabula_rasa:
        raise ValueError("tabula-rasa training does not take a pre-trained policy")
    alpha = alpha_schedule(tcfg.alpha)
    streams = _Streams(master_seed)
    keyer = Keyer(keying, hash_seed)
    policy = PolicyTable(keying)
    learner = NStepLearner(policy, cfg, cfg.gamma)
    counter = None
    if tcfg.tabula_rasa:
        counter = _IntrinsicCounter(
            reward_spec or RewardSpec(), keyer, reset_policy or ResetPolicy(p=cfg.p), cfg
        )
    raw_log = np.zeros(cfg.total_steps)
    episodes: list[EpisodeLog] = []
    zero = np.zeros(N_ACTIONS)

    steps = 0
    while steps < cfg.total_steps:
        env_seed = streams.next_env_seed()
        state = generate(tcfg.env, env_seed)
        allowed = _allowed(tcfg.env)
        key = keyer.key(ego_view(state))
        pano = pano_view(state) if counter else None
        if counter:
            counter.begin(key, state, pano)
        start = steps
        ext = raw_sum = scaled_sum = 0.0
        actions = [0] * N_ACTIONS
        r0 = c0 = 0
        if counter:
            r0, c0 = counter.states.resets_performed, counter.changes.resets_performed
        while True:
            bias = None
            if frozen is not None:
                bias = alpha(steps) * frozen.logits.get(key, zero)
            f_e = policy.f(key)
            a = act(f_e if bias is None else bias + f_e, streams.actions, allowed)
            actions[a] += 1
            tr = step(state, a, streams.noise)
            nxt = tr.state_after
            key1 = keyer.key(ego_view(nxt))
            r = tr.extrinsic_reward
            if counter:
                pano1 = pano_view(nxt)
                r_raw = counter.reward(state, nxt, pano, pano1, key1)
                raw_log[steps] = r_raw
                raw_sum += r_raw
                scaled_sum += counter.spec.scale * r_raw
                r = r + counter.spec.scale * r_raw
                pano = pano1
            steps += 1
            ext += tr.extrinsic_reward
            truncated = steps >= cfg.total_steps
            episode_end = tr.done or truncated
            terminal = tr.done
            learner.push(key, a, r, key1, terminal, episode_end, bias, allowed)
            if counter:
                counter.after_step(streams.resets, episode_end)
            state, key = nxt, key1
            if episode_end:
                reason = tr.done_reason
                break
        episodes.append(
            EpisodeLog(
                episode=len(episodes),
                family=tcfg.env.value,
                env_seed=env_seed,
                start_step=start,
                length=steps - start,
                done_reason=reason.value,
                extrinsic_return=ext,
                intrinsic_raw_sum=raw_sum,
                intrinsic_scaled_sum=scaled_sum,
                state_resets=(counter.states.resets_performed - r0) if counter else 0,
                change_resets=(counter.changes.resets_performed - c0) if counter else 0,
                state_keys=len(counter.states) if counter else 0,
                action_counts=actions,
            )
        )
    states = counter.states if counter else CountTable()
    changes = counter.changes if counter else CountTable()
    return RunResult(policy, states, changes, episodes, raw_log, steps, streams.state())


def steps_to_success(episodes: Sequence[EpisodeLog], threshold: float = 0.5, window: int = 20) -> Optional[int]:
    """Environment steps until the rolling success rate first reaches ``threshold``.

    The rate is taken over the last ``window`` completed episodes; the step
    count is measured at the end of the episode that crosses the threshold.
    Returns None if the threshold is never reached.
    """
    recent: deque = deque(maxlen=window)
    for ep in episodes:
        recent.append(1.0 if ep.solved else 0.0)
        if len(recent) == window and sum(recent) / window >= threshold:
            return ep.start_step + ep.length
    return None
