"""Command-line front end for the pipeline, simulator, training, and studies.

Subcommands: overlay (composite one mask onto one frame), collect (record
scripted demonstrations), train (fit a policy on a recorded dataset), eval
(closed-loop success rate), ablate / transfer / wrist / data-eff (the seeded
studies with CSV reports), bench (overlay plus detection throughput), and
detect-echo (a loopback detector speaking the wire protocol on stdio).

Exit codes: 0 success, 1 usage or input error, 2 for runs that completed but
whose calibration or expected orderings failed. Diagnostics go to stderr;
files are written only under --out. SEVO_SEED supplies the default master
seed wherever --seed is omitted.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .dataset_io import list_episodes, read_episode, write_episode
from .detector import DEFAULT_NOISE, echo_server_loop, mock_detect, select_target
from .observation import (
    DEFAULT_ALPHA,
    DEFAULT_COLOR,
    Frame,
    OverlayConfig,
    compose_overlay,
    read_pgm,
    read_ppm,
    write_ppm,
)
from .policy import KIND_FROZEN, KIND_NAMES, KIND_TRAINABLE, load_policy, save_policy
from .sim_env import ProtocolFlags, default_rig, initial_state, sample_scene

USAGE_EXIT = 1
ORDERING_EXIT = 2

_FLAG_TOKENS = {
    "overlay": "overlay",
    "red-light": "red_light",
    "varied-bg": "varied_bg",
    "wrist-camera": "wrist_camera",
}


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _color_arg(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected R,G,B, got {text!r}")
    values = []
    for p in parts:
        try:
            v = int(p)
        except ValueError:
            raise argparse.ArgumentTypeError(f"color channel {p!r} is not an integer") from None
        if not 0 <= v <= 255:
            raise argparse.ArgumentTypeError(f"color channel {v} outside [0, 255]")
        values.append(v)
    return tuple(values)


def _flags_arg(text: str) -> ProtocolFlags:
    enabled = {}
    for token in filter(None, (t.strip() for t in text.split(","))):
        if token not in _FLAG_TOKENS:
            raise argparse.ArgumentTypeError(
                f"unknown protocol flag {token!r} (choose from {', '.join(sorted(_FLAG_TOKENS))})"
            )
        enabled[_FLAG_TOKENS[token]] = True
    return ProtocolFlags(
        overlay=enabled.get("overlay", False),
        red_light=enabled.get("red_light", False),
        varied_bg=enabled.get("varied_bg", False),
        wrist_camera=enabled.get("wrist_camera", False),
    )


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive count, got {value}")
    return value


def _resolve_seed(value) -> int:
    if value is not None:
        return value
    raw = os.environ.get("SEVO_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"SEVO_SEED={raw!r} is not an integer") from None


def _study_seeds(args) -> list[int]:
    base = _resolve_seed(args.seed)
    return [base + i for i in range(args.seeds)]


def _env_arg(text: str) -> str:
    env = text.replace("-", "_")
    if env not in ("train", "novel_similar", "novel_extreme"):
        raise argparse.ArgumentTypeError(f"unknown environment class {text!r}")
    return env


def _note(message: str) -> None:
    print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_overlay(args) -> int:
    frame = read_ppm(args.infile)
    mask = read_pgm(args.mask)
    if (mask.height, mask.width) != (frame.height, frame.width):
        raise ValueError(
            f"mask {mask.width}x{mask.height} does not match frame {frame.width}x{frame.height}"
        )
    out = compose_overlay(frame, mask, OverlayConfig(alpha=args.alpha, color=args.color))
    write_ppm(out, args.out)
    _note(f"composited {args.infile} + {args.mask} -> {args.out}")
    return 0


def _cmd_collect(args) -> int:
    seed = _resolve_seed(args.seed)
    flags = args.flags if args.flags is not None else harness.FULL_FLAGS
    if args.no_null_episodes:
        flags = replace(flags, null_episodes=False)
    out = Path(args.out)
    records = harness.build_dataset(flags, args.episodes, harness.collection_rng(seed))
    for rec in records:
        write_episode(rec, out / rec.episode_id)
    nulls = sum(1 for r in records if r.scene.bottle is None)
    print(f"collected {len(records)} episodes ({nulls} null) under {harness.condition_name(flags)} -> {out}")
    return 0


def _cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    paths = list_episodes(args.data)
    if not paths:
        raise ValueError(f"{args.data} holds no episode directories")
    records = [read_episode(p) for p in paths]
    kind = KIND_TRAINABLE if args.policy == "trainable" else KIND_FROZEN
    params = harness.train_policy(records, kind, seed, steps=args.steps, chunk_len=args.chunk)
    save_policy(params, args.out)
    print(f"trained {args.policy} policy on {len(records)} episodes ({args.steps} steps) -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    seed = _resolve_seed(args.seed)
    params = load_policy(args.policy)
    flags = args.flags if args.flags is not None else harness.FULL_FLAGS
    result = harness.evaluate(params, flags, args.env, args.trials, [seed])[0]
    print(
        f"{args.env} {KIND_NAMES[params.kind]} seed={seed}: "
        f"success_rate {result.success_rate:.4f} "
        f"({result.successes}/{result.scored_trials} scored, {result.null_trials} null, "
        f"{result.false_triggers} false triggers)"
    )
    return 0


def _majority(flags_held: list[bool]) -> bool:
    return sum(flags_held) * 2 > len(flags_held)


def _cmd_ablate(args) -> int:
    seeds = _study_seeds(args)
    t0 = time.monotonic()
    table = harness.run_ablation(
        seeds, n_episodes=args.episodes, trials=args.trials, steps=args.steps,
        jobs=args.jobs, csv_path=args.out,
    )
    _note(f"ablation finished in {time.monotonic() - t0:.0f}s -> {args.out}")

    ranking = harness.rank_components(table)
    print(f"component ranking: {' > '.join(ranking.order)}" + (" (tie)" if ranking.tie else ""))
    print("median drops: " + ", ".join(f"{k}={v:+.3f}" for k, v in ranking.drops.items()))

    kinds = sorted({r.policy_kind for r in table})
    full_beats, varied_first, red_ge_overlay = [], [], []
    for seed in seeds:
        sub = [r for r in table if r.seed == seed]
        per_seed = harness.rank_components(sub)
        varied_first.append(per_seed.order[0] == "varied_bg")
        red_ge_overlay.append(per_seed.drops["red_light"] >= per_seed.drops["overlay"])
        beats = all(
            harness._row_rate(sub, (1, 1, 1), kind, seed, "mean")
            > harness._row_rate(sub, (0, 0, 0), kind, seed, "mean")
            for kind in kinds
        )
        full_beats.append(beats)
    checks = {
        "full beats baseline (both kinds)": full_beats,
        "varied_bg ranked first": varied_first,
        "red drop >= overlay drop": red_ge_overlay,
    }
    failed = False
    for name, held in checks.items():
        verdict = "ok" if _majority(held) else "FAILED"
        failed = failed or verdict == "FAILED"
        print(f"ordering [{name}]: {sum(held)}/{len(held)} seeds -> {verdict}")
    return ORDERING_EXIT if failed else 0


def _cmd_transfer(args) -> int:
    seeds = _study_seeds(args)
    table = harness.run_transfer(
        seeds, n_episodes=args.episodes, trials=args.trials, steps=args.steps,
        jobs=args.jobs, csv_path=args.out,
    )

    def rate(flags, kind, env, seed):
        for r in table:
            if r.flags == flags and r.policy_kind == kind and r.env_class == env and r.seed == seed:
                return r.success_rate
        raise ValueError(f"missing transfer cell {kind}/{env}/seed {seed}")

    kinds = sorted({r.policy_kind for r in table})
    gaps = [
        rate(harness.FULL_FLAGS, "trainable", "novel_similar", s)
        - rate(harness.BASELINE_FLAGS, "trainable", "novel_similar", s)
        for s in seeds
    ] if "trainable" in kinds else []
    gap_ok = _majority([g >= 0.15 for g in gaps]) if gaps else True
    ordered = all(
        harness._median([rate(flags, kind, "novel_extreme", s) for s in seeds])
        <= harness._median([rate(flags, kind, "novel_similar", s) for s in seeds])
        for kind in kinds
        for flags in (harness.FULL_FLAGS, harness.BASELINE_FLAGS)
    )
    floor = max(
        harness._median([rate(harness.BASELINE_FLAGS, kind, "novel_extreme", s) for s in seeds])
        for kind in kinds
    )
    if gaps:
        print(f"novel_similar gap (full - baseline, trainable): median {harness._median(gaps):+.3f}")
    print(f"novel_extreme <= novel_similar in every condition: {ordered}")
    print(f"baseline novel_extreme median: {floor:.3f}")
    failed = not (gap_ok and ordered and floor <= 0.05)
    print("transfer orderings: " + ("ok" if not failed else "FAILED"))
    return ORDERING_EXIT if failed else 0


def _cmd_wrist(args) -> int:
    seeds = _study_seeds(args)
    table = harness.run_wrist_ablation(
        seeds, n_episodes=args.episodes, trials=args.trials, steps=args.steps,
        jobs=args.jobs, csv_path=args.out,
    )

    def rate(kind, wrist, seed):
        for r in table:
            if (
                r.policy_kind == kind
                and r.flags.wrist_camera == wrist
                and r.env_class == "novel_similar"
                and r.seed == seed
            ):
                return r.success_rate
        raise ValueError(f"missing wrist cell {kind}/wrist={wrist}/seed {seed}")

    frozen_drop = [rate("frozen", False, s) - rate("frozen", True, s) for s in seeds]
    trainable_drop = [rate("trainable", False, s) - rate("trainable", True, s) for s in seeds]
    med_frozen = harness._median(frozen_drop)
    worse = [f > t for f, t in zip(frozen_drop, trainable_drop)]
    print(f"novel-env drop from adding the wrist view: frozen median {med_frozen:+.3f}, "
          f"trainable median {harness._median(trainable_drop):+.3f}")
    print(f"frozen drop exceeds trainable drop: {sum(worse)}/{len(worse)} seeds")
    failed = not (med_frozen >= 0.15 and _majority(worse))
    print("wrist orderings: " + ("ok" if not failed else "FAILED"))
    return ORDERING_EXIT if failed else 0


def _cmd_data_eff(args) -> int:
    seeds = _study_seeds(args)
    counts = sorted(set(args.counts))
    kinds = (
        [KIND_TRAINABLE, KIND_FROZEN]
        if args.policy == "both"
        else [KIND_TRAINABLE if args.policy == "trainable" else KIND_FROZEN]
    )
    tables = {}
    for kind in kinds:
        out = Path(args.out)
        path = out if len(kinds) == 1 else out.with_name(f"{out.stem}_{KIND_NAMES[kind]}{out.suffix}")
        tables[kind] = harness.run_data_efficiency(
            kind, counts, seeds, trials=args.trials, steps=args.steps, jobs=args.jobs, csv_path=path,
        )

    def median_at(kind, count):
        return harness._median(
            [r.success_rate for r in tables[kind] if r.episodes == count]
        )

    failed = False
    if KIND_TRAINABLE in tables:
        medians = [median_at(KIND_TRAINABLE, c) for c in counts]
        print("trainable medians: " + ", ".join(f"{c}:{m:.3f}" for c, m in zip(counts, medians)))
        checked = [c for c in (20, 40, 80) if c in counts]
        series = [median_at(KIND_TRAINABLE, c) for c in checked]
        if any(b < a for a, b in zip(series, series[1:])):
            print(f"trainable medians decrease over {checked}: FAILED")
            failed = True
    if len(tables) == 2 and counts and counts[0] <= 20:
        low = counts[0]
        frozen_lower = [
            next(r.success_rate for r in tables[KIND_FROZEN] if r.episodes == low and r.seed == s)
            < next(r.success_rate for r in tables[KIND_TRAINABLE] if r.episodes == low and r.seed == s)
            for s in seeds
        ]
        print(f"frozen < trainable at {low} episodes: {sum(frozen_lower)}/{len(frozen_lower)} seeds")
        if not _majority(frozen_lower):
            failed = True
    print("data-efficiency orderings: " + ("ok" if not failed else "FAILED"))
    return ORDERING_EXIT if failed else 0


def _cmd_bench(args) -> int:
    rng = np.random.default_rng(_resolve_seed(args.seed))
    flags = replace(harness.FULL_FLAGS, null_episodes=False)
    scene = sample_scene("train", flags, rng)
    state = initial_state(scene, rng)
    camera = default_rig().cameras[0]
    shape = (args.height, args.width)
    frame = Frame(rng.integers(0, 256, (args.height, args.width, 3), dtype=np.uint8))
    config = OverlayConfig()
    start = time.perf_counter()
    for _ in range(args.frames):
        picked = select_target(mock_detect(state, camera, DEFAULT_NOISE, rng, shape=shape))
        if picked is not None:
            compose_overlay(frame, picked, config)
    elapsed = time.perf_counter() - start
    fps = args.frames / elapsed if elapsed > 0 else float("inf")
    print(f"{fps:.1f} frames/sec ({args.frames} frames at {args.width}x{args.height} in {elapsed:.2f}s)")
    if args.min_fps > 0 and fps < args.min_fps:
        _note(f"throughput below required {args.min_fps:.1f} frames/sec")
        return ORDERING_EXIT
    return 0


def _cmd_detect_echo(args) -> int:
    echo_server_loop()
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def _add_study_options(sub, default_out):
    sub.add_argument("--seeds", type=_positive, default=5, help="number of seeds (master, master+1, ...)")
    sub.add_argument("--seed", type=int, default=None, help="master seed (default: SEVO_SEED or 0)")
    sub.add_argument("--episodes", type=_positive, default=harness.DEFAULT_EPISODES,
                     help="training episodes per condition")
    sub.add_argument("--trials", type=_positive, default=harness.EVAL_TRIALS,
                     help="evaluation trials per condition per seed")
    sub.add_argument("--steps", type=_positive, default=harness.HARNESS_STEPS, help="SGD steps per policy")
    sub.add_argument("--jobs", type=_positive, default=os.cpu_count() or 1,
                     help="condition cells trained in parallel")
    sub.add_argument("--out", default=default_out, help="report CSV path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sevo", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    overlay = commands.add_parser("overlay", help="composite a mask onto a frame")
    overlay.add_argument("--in", dest="infile", required=True, help="input frame (binary PPM)")
    overlay.add_argument("--mask", required=True, help="mask (binary PGM, zero/nonzero)")
    overlay.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="blend weight in [0, 1]")
    overlay.add_argument("--color", type=_color_arg, default=DEFAULT_COLOR, help="overlay color R,G,B")
    overlay.add_argument("--out", required=True, help="output frame (binary PPM)")
    overlay.set_defaults(func=_cmd_overlay)

    collect = commands.add_parser("collect", help="record scripted demonstration episodes")
    collect.add_argument("--episodes", type=_positive, required=True)
    collect.add_argument("--flags", type=_flags_arg, default=None,
                         help="comma list from overlay,red-light,varied-bg,wrist-camera "
                              "(default: overlay,red-light,varied-bg)")
    collect.add_argument("--no-null-episodes", action="store_true", help="skip the empty-scene fraction")
    collect.add_argument("--seed", type=int, default=None)
    collect.add_argument("--out", required=True, help="dataset directory")
    collect.set_defaults(func=_cmd_collect)

    train = commands.add_parser("train", help="fit a policy on a recorded dataset")
    train.add_argument("--data", required=True, help="dataset directory from collect")
    train.add_argument("--policy", choices=("trainable", "frozen"), default="trainable")
    train.add_argument("--steps", type=_positive, default=harness.HARNESS_STEPS)
    train.add_argument("--chunk", type=_positive, default=4, help="actions predicted per query")
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", required=True, help="policy file (.sevp)")
    train.set_defaults(func=_cmd_train)

    ev = commands.add_parser("eval", help="closed-loop evaluation of a saved policy")
    ev.add_argument("--policy", required=True, help="policy file from train")
    ev.add_argument("--env", type=_env_arg, default="train",
                    help="train | novel-similar | novel-extreme")
    ev.add_argument("--trials", type=_positive, default=harness.EVAL_TRIALS)
    ev.add_argument("--flags", type=_flags_arg, default=None,
                    help="deployment protocol (default: overlay,red-light,varied-bg)")
    ev.add_argument("--seed", type=int, default=None)
    ev.set_defaults(func=_cmd_eval)

    ablate = commands.add_parser("ablate", help="six-condition component ablation")
    _add_study_options(ablate, "ablation.csv")
    ablate.set_defaults(func=_cmd_ablate)

    transfer = commands.add_parser("transfer", help="train/novel/extreme transfer study")
    _add_study_options(transfer, "transfer.csv")
    transfer.set_defaults(func=_cmd_transfer)

    wrist = commands.add_parser("wrist", help="wrist-camera degradation study")
    _add_study_options(wrist, "wrist.csv")
    wrist.set_defaults(func=_cmd_wrist)

    data_eff = commands.add_parser("data-eff", help="success vs training-set size")
    _add_study_options(data_eff, "data_eff.csv")
    data_eff.add_argument("--counts", type=_positive, nargs="+", default=list(harness.DATA_EFF_COUNTS))
    data_eff.add_argument("--policy", choices=("trainable", "frozen", "both"), default="both")
    data_eff.set_defaults(func=_cmd_data_eff)

    bench = commands.add_parser("bench", help="overlay + detection throughput")
    bench.add_argument("--width", type=_positive, default=640)
    bench.add_argument("--height", type=_positive, default=480)
    bench.add_argument("--frames", type=_positive, default=1000)
    bench.add_argument("--min-fps", type=float, default=0.0, help="exit 2 below this rate")
    bench.add_argument("--seed", type=int, default=None)
    bench.set_defaults(func=_cmd_bench)

    echo = commands.add_parser("detect-echo", help="wire-protocol loopback detector on stdio")
    echo.set_defaults(func=_cmd_detect_echo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except harness.CalibrationError as exc:
        print(f"calibration failure: {exc}", file=sys.stderr)
        return ORDERING_EXIT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except KeyboardInterrupt:
        return 130
