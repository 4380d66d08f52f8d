"""Checkpoint files: gzip-compressed JSON with a deterministic byte layout.

Saving the same content twice gives identical bytes (sorted keys, fixed
separators, gzip header without timestamp or file name), so a
save -> load -> save round trip is byte-identical.
"""
from __future__ import annotations

import gzip
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .agent import IncompatibleCheckpoint, PolicyTable
from .counts import CountTable
from .perception import Keyer

FORMAT = "explorelab-checkpoint"
VERSION = 1


class CheckpointMissing(FileNotFoundError):
    pass


@dataclass
class Checkpoint:
    kind: str  # "pretrain" or "transfer"
    config: dict
    keying: str
    hash_seed: int
    policy: PolicyTable
    state_counts: CountTable
    change_counts: CountTable
    rng_state: dict
    steps: int
    reset_mode: str = "none"
    frozen: Optional[PolicyTable] = None
    alpha_final: float = 1.0
    extra: dict = field(default_factory=dict)


def _policy_to_json(policy: PolicyTable, keyer: Keyer, with_values: bool = True) -> dict:
    out = {
        "logits": {
            keyer.key_to_text(k): [float(x) for x in v] for k, v in policy.logits.items()
        }
    }
    if with_values:
        out["values"] = {keyer.key_to_text(k): float(v) for k, v in policy.values.items()}
    return out


def _policy_from_json(data: dict, keyer: Keyer, keying: str) -> PolicyTable:
    policy = PolicyTable(keying)
    for text, row in data.get("logits", {}).items():
        policy.logits[keyer.text_to_key(text)] = np.array(row, dtype=np.float64)
    for text, v in data.get("values", {}).items():
        policy.values[keyer.text_to_key(text)] = float(v)
    return policy


def _counts_to_json(table: CountTable, keyer: Keyer) -> dict:
    return {
        "p": table.p,
        "total_increments": table.total_increments,
        "increments_since_reset": table.increments_since_reset,
        "resets_performed": table.resets_performed,
        "entries": {keyer.key_to_text(k): int(n) for k, n in table.counts.items()},
    }


def _counts_from_json(data: dict, keyer: Keyer) -> CountTable:
    table = CountTable.__new__(CountTable)
    table.p = float(data["p"])
    table.total_increments = int(data["total_increments"])
    table.increments_since_reset = int(data["increments_since_reset"])
    table.resets_performed = int(data["resets_performed"])
    table.counts = {keyer.text_to_key(t): int(n) for t, n in data["entries"].items()}
    return table


def to_json(ckpt: Checkpoint) -> dict:
    keyer = Keyer(ckpt.keying, ckpt.hash_seed)
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": ckpt.kind,
        "config": ckpt.config,
        "keying": ckpt.keying,
        "hash_seed": ckpt.hash_seed,
        "reset_mode": ckpt.reset_mode,
        "policy": _policy_to_json(ckpt.policy, keyer),
        "frozen": None
        if ckpt.frozen is None
        else _policy_to_json(ckpt.frozen, keyer, with_values=False),
        "alpha_final": ckpt.alpha_final,
        "counts": {
            "state": _counts_to_json(ckpt.state_counts, keyer),
            "change": _counts_to_json(ckpt.change_counts, keyer),
        },
        "rng_state": ckpt.rng_state,
        "steps": ckpt.steps,
        "extra": ckpt.extra,
    }


def from_json(data: dict) -> Checkpoint:
    if data.get("format") != FORMAT:
        raise IncompatibleCheckpoint("not an explorelab checkpoint")
    if data.get("version") != VERSION:
        raise IncompatibleCheckpoint(f"unsupported checkpoint version {data.get('version')!r}")
    keying = data["keying"]
    keyer = Keyer(keying, data["hash_seed"])
    frozen = data.get("frozen")
    return Checkpoint(
        kind=data["kind"],
        config=data["config"],
        keying=keying,
        hash_seed=int(data["hash_seed"]),
        policy=_policy_from_json(data["policy"], keyer, keying),
        state_counts=_counts_from_json(data["counts"]["state"], keyer),
        change_counts=_counts_from_json(data["counts"]["change"], keyer),
        rng_state=data["rng_state"],
        steps=int(data["steps"]),
        reset_mode=data.get("reset_mode", "none"),
        frozen=None if frozen is None else _policy_from_json(frozen, keyer, keying),
        alpha_final=float(data.get("alpha_final", 1.0)),
        extra=data.get("extra", {}),
    )


def dumps(ckpt: Checkpoint) -> bytes:
    text = json.dumps(to_json(ckpt), sort_keys=True, separators=(",", ":"))
    buf = io.BytesIO()
    with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
        gz.write(text.encode("utf-8"))
    return buf.getvalue()


def loads(blob: bytes) -> Checkpoint:
    try:
        text = gzip.decompress(blob).decode("utf-8")
        data = json.loads(text)
    except (OSError, ValueError) as exc:
        raise IncompatibleCheckpoint(f"unreadable checkpoint: {exc}") from None
    return from_json(data)


def save(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    tmp.replace(path)


def load(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointMissing(f"checkpoint not found: {path}")
    return loads(path.read_bytes())


def logits_digest(policy: PolicyTable) -> str:
    """SHA-256 over the serialised logits, independent of insertion order."""
    h = hashlib.sha256()
    for k in sorted(policy.logits):
        h.update(k)
        h.update(np.ascontiguousarray(policy.logits[k], dtype=np.float64).tobytes())
    return h.hexdigest()
