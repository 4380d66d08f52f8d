"""Count-based intrinsic rewards.

Every reward takes post-increment counts of the next state and of the
change the transition produced.  ``CBET`` is ``1 / (n_state + n_change)``;
the other kinds are ablations and the plain state-count baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class ContractViolation(RuntimeError):
    """Raised when a caller breaks a documented precondition."""


class RewardKind(str, Enum):
    CBET = "CBET"
    COUNT_ONLY = "CountOnly"
    CHANGE_ONLY = "ChangeOnly"
    PRODUCT = "Product"
    WEIGHTED_SUM = "WeightedSum"
    WEIGHTED_SUM_SQUARED = "WeightedSumSquared"
    SQRT_OF_SUM = "SqrtOfSum"
    CBET_UNSQUARED = "CBETUnsquared"


class View(str, Enum):
    EGO = "ego"
    PANO = "pano"


@dataclass(frozen=True)
class RewardSpec:
    kind: RewardKind = RewardKind.CBET
    scale: float = 0.005
    state_view: View = View.EGO
    change_view: View = View.PANO

    def __post_init__(self):
        object.__setattr__(self, "kind", RewardKind(self.kind))
        object.__setattr__(self, "state_view", View(self.state_view))
        object.__setattr__(self, "change_view", View(self.change_view))
        if not self.scale > 0:
            raise ValueError(f"reward scale must be positive, got {self.scale}")

    @property
    def uses_changes(self) -> bool:
        return self.kind != RewardKind.COUNT_ONLY


def intrinsic_reward(spec: RewardSpec | RewardKind, n_state: int, n_change: int) -> float:
    """Unscaled reward for post-increment counts."""
    kind = spec.kind if isinstance(spec, RewardSpec) else RewardKind(spec)
    if n_state < 1 or n_change < 1:
        raise ContractViolation(
            f"counts must be post-increment values >= 1, got ({n_state}, {n_change})"
        )
    if kind == RewardKind.CBET:
        return 1.0 / (n_state + n_change)
    if kind == RewardKind.COUNT_ONLY:
        return 1.0 / math.sqrt(n_state)
    if kind == RewardKind.CHANGE_ONLY:
        return 1.0 / math.sqrt(n_change)
    if kind == RewardKind.PRODUCT:
        return 1.0 / math.sqrt(n_state * n_change)
    if kind in (RewardKind.WEIGHTED_SUM, RewardKind.WEIGHTED_SUM_SQUARED):
        r = 0.5 / math.sqrt(n_state) + 0.5 / math.sqrt(n_change)
        return r * r if kind == RewardKind.WEIGHTED_SUM_SQUARED else r
    # SqrtOfSum and its alias
    return 1.0 / math.sqrt(n_state + n_change)


@dataclass(frozen=True)
class IntrinsicStep:
    n_state: int
    n_change: int
    r_raw: float
    r_scaled: float


def score(spec: RewardSpec, n_state: int, n_change: int) -> IntrinsicStep:
    r = intrinsic_reward(spec, n_state, n_change)
    return IntrinsicStep(n_state, n_change, r, spec.scale * r)


def reward_trend(
    log: Sequence[IntrinsicStep] | Iterable[float], window: int = 1000, stride: int | None = None
) -> list[float]:
    """Means of consecutive windows (``stride`` defaults to ``window``).

    Accepts IntrinsicStep records (their raw rewards are averaged) or plain
    numbers.  A trailing partial window is dropped unless it is the only one.
    """
    values = np.array(
        [v.r_raw if isinstance(v, IntrinsicStep) else float(v) for v in log], dtype=np.float64
    )
    if values.size == 0:
        return []
    if window < 1:
        raise ValueError("window must be at least 1")
    stride = window if stride is None else stride
    if values.size <= window:
        return [float(values.mean())]
    starts = range(0, values.size - window + 1, stride)
    return [float(values[s : s + window].mean()) for s in starts]
