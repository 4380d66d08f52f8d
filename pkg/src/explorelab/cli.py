"""Command line front end: ``explorelab pretrain|transfer|evaluate|diagnose``.

Exit codes: 0 success, 1 output could not be written, 2 bad configuration
or missing checkpoint, 3 runtime contract violation or incompatible
checkpoint.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .agent import (
    IncompatibleCheckpoint,
    NumericalError,
    RunResult,
    TransferConfig,
    alpha_schedule,
    pretrain,
    steps_to_success,
    transfer_train,
)
from .config import ConfigError, RunConfig, load, set_value, validate
from .counts import ResetPolicy
from .evaluation import (
    MAP_ACTIONS,
    ConstantActor,
    RandomActor,
    TableActor,
    chain_diagnostic,
    coverage_heatmap,
    key_reward_maps,
    heat_rgb,
    loop_rewards,
    summarize,
    evaluate as run_evaluation,
    write_ppm,
)
from .rewards import ContractViolation, RewardKind, RewardSpec, reward_trend
from .solver import ScriptedActor
from .world import N_ACTIONS, Action, Family

log = logging.getLogger("explorelab")

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_CONTRACT = 3

ACTION_COLUMNS = [f"n_{a.name.lower()}" for a in Action]
METRICS_HEADER = [
    "episode",
    "family",
    "env_seed",
    "start_step",
    "length",
    "done_reason",
    "extrinsic_return",
    "intrinsic_raw_sum",
    "intrinsic_scaled_sum",
    "state_resets",
    "change_resets",
    "state_keys",
] + ACTION_COLUMNS


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def metrics_csv(result: RunResult) -> str:
    rows = (
        [
            ep.episode,
            ep.family,
            ep.env_seed,
            ep.start_step,
            ep.length,
            ep.done_reason,
            float(ep.extrinsic_return),
            float(ep.intrinsic_raw_sum),
            float(ep.intrinsic_scaled_sum),
            ep.state_resets,
            ep.change_resets,
            ep.state_keys,
            *ep.action_counts,
        ]
        for ep in result.episodes
    )
    return _csv_text(METRICS_HEADER, rows)


def trend_csv(values: np.ndarray, window: int) -> str:
    trend = reward_trend(values, window)
    rows = ([i * window, min((i + 1) * window, len(values)), float(v)] for i, v in enumerate(trend))
    return _csv_text(["window_start", "window_end", "mean_intrinsic_raw"], rows)


class _Out:
    """Writes run outputs; on an IO error leaves an INCOMPLETE marker."""

    def __init__(self, root: Path):
        self.root = root
        self.written: list[str] = []

    def __enter__(self):
        self.root.mkdir(parents=True, exist_ok=True)
        stale = self.root / "INCOMPLETE"
        if stale.exists():
            stale.unlink()
        return self

    def text(self, name: str, content: str) -> Path:
        path = self.root / name
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(content)
        tmp.replace(path)
        self.written.append(name)
        return path

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(obj, sort_keys=True, indent=2) + "\n")

    def ppm(self, name: str, rgb) -> Path:
        path = self.root / name
        write_ppm(path, rgb)
        self.written.append(name)
        return path

    def checkpoint(self, name: str, ckpt) -> Path:
        path = self.root / name
        ckpt_io.save(ckpt, path)
        self.written.append(name)
        return path

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, OSError):
            try:
                (self.root / "INCOMPLETE").write_text(
                    f"{exc}\nwritten before the failure: {', '.join(self.written)}\n"
                )
            except OSError:
                pass
        return False


# argument handling -----------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--out", help="output directory (overrides io.out_dir)")
    p.add_argument("--seed", type=int, help="master seed (env.seed)")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config field; may be repeated",
    )
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="explorelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="learn an exploration policy from intrinsic rewards")
    _common(p)
    p.add_argument("--envs", help="comma-separated environment families, round-robin")
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--reward", help="reward kind, e.g. CBET or CountOnly")
    p.add_argument("--resets", help="none, episodic, random or random:<p>")

    p = sub.add_parser("transfer", help="train a task policy with frozen exploration logits")
    _common(p)
    p.add_argument("--from", dest="source", help="pre-training checkpoint")
    p.add_argument("--env", help="task environment family")
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--tabula-rasa", action="store_true", help="intrinsic + extrinsic, no bias")
    p.add_argument("--alpha-decay", help="bias schedule, e.g. linear:200000")
    p.add_argument("--alpha", help="constant bias weight")
    p.add_argument("--resets", help="count resets for tabula-rasa runs")

    p = sub.add_parser("evaluate", help="roll out a policy without learning")
    _common(p)
    p.add_argument("--from", dest="source", help="checkpoint to evaluate")
    p.add_argument("--env", help="environment family")
    p.add_argument("--episodes", type=int)
    p.add_argument("--greedy", action="store_true", help="take argmax actions")
    p.add_argument(
        "--policy",
        choices=["checkpoint", "scripted", "random", "done"],
        help="actor to evaluate (default: checkpoint if --from is given, else random)",
    )

    p = sub.add_parser("diagnose", help="run a canned diagnostic experiment")
    _common(p)
    p.add_argument("--which", required=True, help="chain, keymap (alias fig3) or decay")
    p.add_argument("--resets", help="none, episodic, random or random:<p>")
    p.add_argument("--steps", type=int, help="training or simulation steps")
    p.add_argument("--env", help="decay fixture: loop (default) or a family name")
    p.add_argument("--reward", help="reward kind")
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = load(args.config)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        set_value(cfg, key.strip(), value.strip())
    if args.seed is not None:
        cfg.env.seed = args.seed
    if args.out:
        cfg.io.out_dir = args.out
    envs = getattr(args, "envs", None)
    if envs:
        set_value(cfg, "env.families", envs)
    steps = getattr(args, "steps", None)
    if steps is not None:
        cfg.train.total_steps = steps
    reward = getattr(args, "reward", None)
    if reward:
        cfg.reward.kind = reward
    resets = getattr(args, "resets", None)
    if resets:
        policy = ResetPolicy.parse(resets, cfg.counts.p)
        cfg.counts.reset = policy.mode.value
        cfg.counts.p = policy.p
    if args.command == "transfer":
        if args.env:
            cfg.transfer.env = args.env
        if args.source:
            cfg.transfer.checkpoint = args.source
        if args.tabula_rasa:
            cfg.transfer.tabula_rasa = True
        if args.alpha_decay:
            cfg.transfer.alpha = args.alpha_decay
        elif args.alpha is not None:
            cfg.transfer.alpha = args.alpha
    if args.command == "evaluate":
        if args.env:
            cfg.eval.env = args.env
        if args.episodes is not None:
            cfg.eval.episodes = args.episodes
        if args.greedy:
            cfg.eval.greedy = True
    validate(cfg)
    return cfg


# commands --------------------------------------------------------------------


def _summary(result: RunResult) -> dict:
    eps = result.episodes
    solved = sum(e.solved for e in eps)
    actions = np.zeros(N_ACTIONS, dtype=np.int64)
    for e in eps:
        actions += np.asarray(e.action_counts, dtype=np.int64)
    return {
        "steps": result.steps,
        "episodes": len(eps),
        "solved_episodes": solved,
        "policy_states": len(result.policy),
        "state_count_entries": len(result.state_counts),
        "change_count_entries": len(result.change_counts),
        "state_resets": result.state_counts.resets_performed,
        "change_resets": result.change_counts.resets_performed,
        "mean_intrinsic_raw": float(result.intrinsic_raw.mean()) if result.steps else 0.0,
        "action_counts": [int(x) for x in actions],
    }


def cmd_pretrain(cfg: RunConfig) -> int:
    result = pretrain(
        cfg.train_config(),
        cfg.reward_spec(),
        cfg.reset_policy(),
        cfg.env.seed,
        keying=cfg.counts.keying,
        hash_seed=cfg.counts.hash_seed,
    )
    ckpt = ckpt_io.Checkpoint(
        kind="pretrain",
        config=cfg.to_dict(),
        keying=cfg.counts.keying,
        hash_seed=cfg.counts.hash_seed,
        policy=result.policy,
        state_counts=result.state_counts,
        change_counts=result.change_counts,
        rng_state=result.rng_state,
        steps=result.steps,
        reset_mode=cfg.counts.reset,
    )
    with _Out(cfg.out_dir()) as out:
        out.text("config.yaml", cfg.dump())
        out.text("metrics.csv", metrics_csv(result))
        out.text("trend.csv", trend_csv(result.intrinsic_raw, cfg.io.trend_window))
        out.checkpoint("checkpoint.json.gz", ckpt)
        out.json("summary.json", {"command": "pretrain", "complete": True, **_summary(result)})
    log.info("pretrain finished: %d steps, %d episodes", result.steps, len(result.episodes))
    return EXIT_OK


def cmd_transfer(cfg: RunConfig) -> int:
    frozen = None
    if not cfg.transfer.tabula_rasa:
        if not cfg.transfer.checkpoint:
            raise ConfigError("transfer needs --from CHECKPOINT unless --tabula-rasa is given")
        source = ckpt_io.load(cfg.transfer.checkpoint)
        if source.kind != "pretrain":
            raise IncompatibleCheckpoint("transfer expects a pre-training checkpoint")
        if source.keying != cfg.counts.keying or source.hash_seed != cfg.counts.hash_seed:
            raise IncompatibleCheckpoint(
                f"checkpoint keys views with {source.keying!r} (hash seed {source.hash_seed}), "
                f"run uses {cfg.counts.keying!r} (hash seed {cfg.counts.hash_seed})"
            )
        frozen = source.policy
    tcfg = TransferConfig(
        env=cfg.transfer.env,
        frozen_exploration=frozen,
        alpha=cfg.transfer.alpha,
        tabula_rasa=cfg.transfer.tabula_rasa,
    )
    digest_before = ckpt_io.logits_digest(frozen) if frozen is not None else None
    result = transfer_train(
        tcfg,
        cfg.train_config([cfg.transfer.env]),
        cfg.env.seed,
        keying=cfg.counts.keying,
        hash_seed=cfg.counts.hash_seed,
        reward_spec=cfg.reward_spec(),
        reset_policy=cfg.reset_policy(),
    )
    digest_after = ckpt_io.logits_digest(frozen) if frozen is not None else None
    if digest_before != digest_after:
        raise ContractViolation("frozen exploration logits changed during transfer")
    alpha_final = alpha_schedule(cfg.transfer.alpha)(result.steps)
    ckpt = ckpt_io.Checkpoint(
        kind="transfer",
        config=cfg.to_dict(),
        keying=cfg.counts.keying,
        hash_seed=cfg.counts.hash_seed,
        policy=result.policy,
        state_counts=result.state_counts,
        change_counts=result.change_counts,
        rng_state=result.rng_state,
        steps=result.steps,
        reset_mode=cfg.counts.reset if cfg.transfer.tabula_rasa else "none",
        frozen=frozen,
        alpha_final=alpha_final,
    )
    summary = {
        "command": "transfer",
        "complete": True,
        "env": cfg.transfer.env,
        "tabula_rasa": cfg.transfer.tabula_rasa,
        "frozen_logits_sha256": digest_after,
        "alpha_final": alpha_final,
        "steps_to_50pct_success": steps_to_success(result.episodes),
        **_summary(result),
    }
    with _Out(cfg.out_dir()) as out:
        out.text("config.yaml", cfg.dump())
        out.text("metrics.csv", metrics_csv(result))
        if cfg.transfer.tabula_rasa:
            out.text("trend.csv", trend_csv(result.intrinsic_raw, cfg.io.trend_window))
        out.checkpoint("checkpoint.json.gz", ckpt)
        out.json("summary.json", summary)
    return EXIT_OK


EVAL_HEADER = [
    "episode",
    "family",
    "env_seed",
    "length",
    "done_reason",
    "extrinsic_return",
    "intrinsic_raw_sum",
    "interactions",
] + ACTION_COLUMNS


def cmd_evaluate(cfg: RunConfig, policy_kind: Optional[str], source: Optional[str]) -> int:
    rng = np.random.default_rng([cfg.eval.seed, 7])
    family = cfg.eval.env
    kind = policy_kind or ("checkpoint" if source else "random")
    if kind == "checkpoint":
        if not source:
            raise ConfigError("--policy checkpoint needs --from CHECKPOINT")
        ck = ckpt_io.load(source)
        if ck.keying != cfg.counts.keying:
            # the checkpoint decides how views are keyed
            cfg.counts.keying = ck.keying
            cfg.counts.hash_seed = ck.hash_seed
        if family is None and ck.kind == "transfer":
            family = ck.config.get("transfer", {}).get("env")
        if family is None:
            family = ck.config.get("env", {}).get("families", [None])[0]
        actor = TableActor(
            ck.policy, rng, cfg.eval.greedy, frozen=ck.frozen, alpha=ck.alpha_final
        )
    elif kind == "scripted":
        actor = ScriptedActor()
    elif kind == "done":
        actor = ConstantActor(Action.DONE)
    else:
        actor = RandomActor(rng)
        actor.use_greedy = False
    if family is None:
        raise ConfigError("evaluate needs --env (or a checkpoint that names one)")
    family = Family.parse(family)
    records = run_evaluation(
        actor,
        family,
        cfg.eval.episodes,
        seed=cfg.eval.seed,
        keying=cfg.counts.keying,
        hash_seed=cfg.counts.hash_seed,
    )
    summary = summarize(records)
    cov = coverage_heatmap(records)
    rows = []
    for i, rec in enumerate(records):
        counts = np.bincount(np.asarray(rec.actions, dtype=np.int64), minlength=N_ACTIONS)
        rows.append(
            [
                i,
                rec.family,
                rec.env_seed,
                rec.length,
                rec.done_reason,
                float(sum(rec.extrinsic)),
                float(sum(rec.intrinsic_raw)),
                int(sum(rec.interactions)),
                *[int(c) for c in counts],
            ]
        )
    with _Out(cfg.out_dir()) as out:
        out.text("config.yaml", cfg.dump())
        out.text("metrics.csv", _csv_text(EVAL_HEADER, rows))
        out.ppm("coverage.ppm", heat_rgb(cov.counts, cov.reachable))
        out.json(
            "summary.json",
            {"command": "evaluate", "complete": True, "policy": kind, "env": family.value,
             "greedy": cfg.eval.greedy, **summary.to_json()},
        )
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig, which: str, env: Optional[str], steps_given: bool) -> int:
    which = which.lower()
    if which == "chain":
        return _diag_chain(cfg, steps_given)
    if which in ("keymap", "fig3"):
        return _diag_keymap(cfg)
    if which == "decay":
        return _diag_decay(cfg, env, steps_given)
    raise ConfigError(f"unknown diagnostic {which!r}; choose chain, keymap or decay")


# settings of the chain experiment; see README for why these differ from the
# general training defaults
CHAIN_STEPS = 20_000
CHAIN_LR = 0.5
CHAIN_N_STEP = 4


def _diag_chain(cfg: RunConfig, steps_given: bool) -> int:
    spec = cfg.reward_spec()
    if cfg.reward.kind == "CBET" and "reward" not in _explicit:
        spec = RewardSpec(RewardKind.COUNT_ONLY, cfg.reward.scale)
    tcfg = cfg.train_config(["ChainWorld"])
    tcfg.total_steps = cfg.train.total_steps if steps_given else CHAIN_STEPS
    if "train.actor_lr" not in _explicit:
        tcfg.actor_lr = CHAIN_LR
    if "train.critic_lr" not in _explicit:
        tcfg.critic_lr = CHAIN_LR
    if "train.n_step" not in _explicit:
        tcfg.n_step = CHAIN_N_STEP
    report = chain_diagnostic(cfg.reset_policy(), spec, 5, tcfg if tcfg.total_steps else None,
                              seed=cfg.env.seed)
    rows = sorted(report.returns.items())
    with _Out(cfg.out_dir()) as out:
        out.text("config.yaml", cfg.dump())
        out.text("chain_returns.csv", _csv_text(["trajectory", "return"], rows))
        out.json(
            "summary.json",
            {
                "command": "diagnose",
                "which": "chain",
                "complete": True,
                "reward": spec.kind.value,
                "resets": cfg.counts.reset,
                "best_trajectory": report.best,
                "loop_return": report.loop_return,
                "d_return": report.d_return,
                "preferred_branch": "B" if report.loop_return > report.d_return else "D",
                "greedy_at_a": report.greedy_at_a,
                "p_d_at_a": report.p_d_at_a,
                "d_occupancy": report.d_occupancy,
            },
        )
    return EXIT_OK


def _diag_keymap(cfg: RunConfig) -> int:
    maps = key_reward_maps(seed=cfg.env.seed)
    with _Out(cfg.out_dir()) as out:
        out.text("config.yaml", cfg.dump())
        summary = {"command": "diagnose", "which": "keymap", "complete": True, "maps": {}}
        for name, m in maps.items():
            rows = []
            h, w, _ = m.values.shape
            for r in range(h):
                for c in range(w):
                    for j, a in enumerate(MAP_ACTIONS):
                        v = m.values[r, c, j]
                        if not np.isnan(v):
                            rows.append([r, c, a.name.lower(), float(v)])
            out.text(f"keymap_{name}.csv", _csv_text(["row", "col", "action", "reward"], rows))
            panels = []
            for j in range(len(MAP_ACTIONS)):
                vals = np.nan_to_num(m.values[..., j], nan=0.0)
                panels.append(heat_rgb(vals, ~np.isnan(m.values[..., j])))
                panels.append(np.full((panels[-1].shape[0], 8, 3), 255, dtype=np.uint8))
            out.ppm(f"keymap_{name}.ppm", np.concatenate(panels[:-1], axis=1))
            r, c, a = m.argmax()
            summary["maps"][name] = {
                "argmax": [r, c, a.name.lower()],
                "mean_by_action": {x.name.lower(): m.mean(x) for x in MAP_ACTIONS},
            }
        out.json("summary.json", summary)
    return EXIT_OK


def _diag_decay(cfg: RunConfig, env: Optional[str], steps_given: bool) -> int:
    spec = cfg.reward_spec()
    policy = cfg.reset_policy()
    fixture = (env or "loop").strip()
    if fixture.lower() == "loop":
        steps = cfg.train.total_steps if steps_given else 20_000
        values = loop_rewards(spec, policy, steps, np.random.default_rng(cfg.env.seed))
        window = min(cfg.io.trend_window, max(1, steps // 20))
    else:
        family = Family.parse(fixture)
        tcfg = cfg.train_config([family.value])
        values = pretrain(tcfg, spec, policy, cfg.env.seed, cfg.counts.keying,
                          cfg.counts.hash_seed).intrinsic_raw
        window = cfg.io.trend_window
    trend = reward_trend(values, window)
    with _Out(cfg.out_dir()) as out:
        out.text("config.yaml", cfg.dump())
        out.text("trend.csv", trend_csv(np.asarray(values), window))
        out.json(
            "summary.json",
            {
                "command": "diagnose",
                "which": "decay",
                "complete": True,
                "fixture": fixture,
                "resets": policy.mode.value,
                "window": window,
                "first_window": trend[0] if trend else None,
                "last_window": trend[-1] if trend else None,
                "ratio": (trend[-1] / trend[0]) if trend and trend[0] else None,
            },
        )
    return EXIT_OK


_explicit: set = set()


def _record_explicit(args: argparse.Namespace) -> None:
    _explicit.clear()
    for item in args.set:
        _explicit.add(item.partition("=")[0].strip())
    if getattr(args, "reward", None):
        _explicit.add("reward")
    if args.config:
        try:
            import yaml

            data = yaml.safe_load(Path(args.config).read_text()) or {}
            for sec, body in data.items():
                for key in (body or {}):
                    _explicit.add(f"{sec}.{key}")
                if sec == "reward" and body and "kind" in body:
                    _explicit.add("reward")
        except (OSError, AttributeError):
            pass


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _record_explicit(args)
        cfg = resolve(args)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "transfer":
            return cmd_transfer(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.policy, args.source)
        return cmd_diagnose(cfg, args.which, args.env, args.steps is not None)
    except (ConfigError, ckpt_io.CheckpointMissing) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractViolation, IncompatibleCheckpoint, NumericalError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
