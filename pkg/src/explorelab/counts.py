"""Visitation pseudocounts with optional resets.

Counts are read after incrementing, so a code seen for the first time has
count 1.  Reset policies:

- ``none``: counts grow forever.
- ``episodic``: counts are cleared when an episode ends.
- ``random``: before every environment step's reward is used, each table is
  cleared with probability ``p`` (an independent coin per table).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Hashable

import numpy as np


class ResetMode(str, Enum):
    NONE = "none"
    EPISODIC = "episodic"
    RANDOM = "random"


@dataclass(frozen=True)
class ResetPolicy:
    mode: ResetMode = ResetMode.RANDOM
    p: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "mode", ResetMode(self.mode))
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"reset probability must lie in [0, 1], got {self.p}")

    @classmethod
    def parse(cls, text: str, p: float | None = None) -> "ResetPolicy":
        """``none``, ``episodic``, ``random`` or ``random:<p>``."""
        mode, _, rest = text.partition(":")
        if rest:
            p = float(rest)
        if p is None:
            p = cls.p
        return cls(ResetMode(mode.strip().lower()), p)


class CountTable:
    """Map from code to visit count, with reset bookkeeping."""

    def __init__(self, p: float = 0.0, gamma_i: float = 0.99):
        self.counts: dict[Hashable, int] = {}
        self.p = float(p)
        self.total_increments = 0
        self.increments_since_reset = 0
        self.resets_performed = 0
        if self.p > 1.0 - gamma_i + 1e-12:
            warnings.warn(
                f"reset probability {self.p} exceeds 1 - gamma_i = {1.0 - gamma_i:.4g}",
                stacklevel=2,
            )

    def __len__(self) -> int:
        return len(self.counts)

    def get(self, code) -> int:
        return self.counts.get(code, 0)

    def clear(self) -> None:
        self.counts.clear()
        self.increments_since_reset = 0
        self.resets_performed += 1


def observe(table: CountTable, code) -> int:
    """Increment the count of ``code`` and return its new value."""
    n = table.counts.get(code, 0) + 1
    table.counts[code] = n
    table.total_increments += 1
    table.increments_since_reset += 1
    return n


def maybe_reset(
    table: CountTable, rng: np.random.Generator, policy: ResetPolicy, episode_end: bool = False
) -> bool:
    """Apply the reset policy for one call site.

    Call once per environment step with ``episode_end=False`` and once per
    episode end with ``episode_end=True``.  Random resets only fire on
    per-step calls and episodic resets only on episode-end calls, so each
    call site draws at most one coin.
    """
    mode = policy.mode
    if mode == ResetMode.NONE:
        return False
    if mode == ResetMode.EPISODIC:
        if episode_end:
            table.clear()
            return True
        return False
    if episode_end:
        return False
    if rng.random() < policy.p:
        table.clear()
        return True
    return False


def maybe_reset_pair(
    state_table: CountTable,
    change_table: CountTable,
    rng: np.random.Generator,
    policy: ResetPolicy,
    episode_end: bool = False,
    shared_coin: bool = False,
) -> tuple[bool, bool]:
    """Reset decision for the state and change tables of one learner.

    By default each table flips its own coin; ``shared_coin`` makes one
    draw decide both.
    """
    if shared_coin and policy.mode == ResetMode.RANDOM and not episode_end:
        if rng.random() < policy.p:
            state_table.clear()
            change_table.clear()
            return True, True
        return False, False
    return (
        maybe_reset(state_table, rng, policy, episode_end),
        maybe_reset(change_table, rng, policy, episode_end),
    )
