"""Experiment orchestration: dataset builds, gated closed-loop rollouts, and
the ablation / transfer / wrist / data-efficiency studies with seeded,
byte-reproducible CSV reports.

Seeding discipline: every stochastic stage derives its generator from the
caller's integer seed plus a fixed stream tag, so paired comparisons (pipeline
on vs off, wrist vs no wrist) see identical scene draws wherever the flags
allow, and a rerun with the same master seed emits identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dataset_io import EpisodeRecord
from .detector import DEFAULT_NOISE, DetectorNoise, effective_noise
from .observation import JointState, make_virtual_observation
from .policy import (
    DEFAULT_CHUNK,
    KIND_FROZEN,
    KIND_NAMES,
    KIND_TRAINABLE,
    ChunkedController,
    InputSpec,
    PolicyParams,
    TrainConfig,
    encode_dataset,
    encode_observation,
    init_policy,
    train,
)
from .safety_gate import GateConfig, GateState, gate_step
from .sim_env import (
    MAX_STEPS,
    SENSOR_NOISE_SIGMA,
    SUCCESS_DISPLACEMENT,
    Action,
    ProtocolFlags,
    ZERO_ACTION,
    _oracle_action,
    default_rig,
    grasp_outcome,
    initial_state,
    observe_cameras,
    oracle_demonstrate,
    sample_scene,
    scene_is_dark,
    step,
)

# The six protocol rows of the component ablation: (overlay, red, varied).
TABLE_ROWS = ((1, 1, 1), (0, 1, 1), (1, 0, 1), (1, 0, 0), (0, 1, 0), (0, 0, 0))

FULL_FLAGS = ProtocolFlags(overlay=True, red_light=True, varied_bg=True)
BASELINE_FLAGS = ProtocolFlags(overlay=False, red_light=False, varied_bg=False)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
EVAL_TRIALS = 100
DEFAULT_EPISODES = 80
DATA_EFF_COUNTS = (20, 40, 80, 120)
HARNESS_STEPS = 50000
HARNESS_BATCH = 64
HARNESS_LR = 0.01

# calibration gate on the plain-RGB baseline's home-environment success
CALIBRATION_BAND = (0.3, 0.9)

ENV_CODES = {"train": 0, "novel_similar": 1, "novel_extreme": 2}
_DATA_STREAM = 11
_EVAL_STREAM = 5
_INIT_STREAM = 7
_BATCH_STREAM = 13

COMPONENTS = ("varied_bg", "red_light", "overlay")


class CalibrationError(RuntimeError):
    """Raised when the baseline falls outside the sane band and orderings
    would be vacuous."""


@dataclass(frozen=True)
class ConditionResult:
    """One evaluated condition cell.

    trials counts every rollout including null scenes; null scenes score
    only false_triggers, so success_rate divides by the non-null count.
    env_class "mean" pools train and novel_similar tallies. episodes is set
    by the data-efficiency study, None elsewhere.
    """

    flags: ProtocolFlags
    policy_kind: str
    env_class: str
    trials: int
    successes: int
    false_triggers: int
    seed: int
    null_trials: int = 0
    episodes: Optional[int] = None

    def __post_init__(self):
        if self.successes + self.false_triggers > self.trials:
            raise ValueError("successes + false_triggers exceed trials")
        if not 0 <= self.null_trials <= self.trials:
            raise ValueError("null_trials out of range")

    @property
    def scored_trials(self) -> int:
        return self.trials - self.null_trials

    @property
    def success_rate(self) -> float:
        return self.successes / self.scored_trials if self.scored_trials else 0.0


def _subseed(seed: int, stream: int, extra: int = 0) -> int:
    return int(np.random.default_rng([seed, stream, extra]).integers(2**31))


def collection_rng(seed: int):
    """The generator build_dataset consumes for a given master seed. The
    studies and the CLI both use it, so one seed pins one dataset."""
    return np.random.default_rng([seed, _DATA_STREAM])


# ---------------------------------------------------------------------------
# Dataset construction


def build_dataset(flags: ProtocolFlags, n_episodes: int, rng) -> list[EpisodeRecord]:
    """Record n_episodes scripted demonstrations under the given protocol.

    The rng is consumed sequentially, so one seed pins the whole dataset.
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    records = []
    for ep in range(n_episodes):
        scene = sample_scene("train", flags, rng)
        rec = oracle_demonstrate(scene, protocol=flags, rng=rng)
        records.append(replace(rec, episode_id=f"ep{ep:04d}"))
    return records


def train_policy(
    records: Sequence[EpisodeRecord],
    kind: int,
    seed: int,
    steps: int = HARNESS_STEPS,
    chunk_len: int = DEFAULT_CHUNK,
) -> PolicyParams:
    """Encode a dataset and fit one policy of the given kind."""
    cameras = len(records[0].rig.cameras)
    x, y = encode_dataset(records, chunk_len)
    params = init_policy(InputSpec(cameras=cameras), kind, chunk_len, seed=_subseed(seed, _INIT_STREAM, kind))
    config = TrainConfig(
        steps=steps, batch_size=HARNESS_BATCH, learning_rate=HARNESS_LR, seed=_subseed(seed, _BATCH_STREAM)
    )
    return train(params, x, y, config)


# ---------------------------------------------------------------------------
# Closed-loop evaluation


def _rollout(policy: Optional[PolicyParams], flags: ProtocolFlags, scene, rng, noise, sigma, gate):
    """One gated rollout; returns the outcome string.

    policy None runs the scripted operator on privileged state instead (the
    soundness reference). Detection, gating, and the observation transform
    run exactly as during data collection.
    """
    rig = default_rig(flags.wrist_camera)
    eff = effective_noise(noise, led_on=scene.lighting.led is not None, dark=scene_is_dark(scene))
    state = initial_state(scene, rng)
    start = state.gripper
    start_x = state.bottle_pos[0] if state.bottle_pos is not None else None
    gate_state = GateState()
    controller = ChunkedController(policy) if policy is not None else None
    trajectory = [state]

    for t in range(MAX_STEPS):
        frames, masks, detected = observe_cameras(state, rig, eff, rng, sigma)
        if flags.overlay:
            gate_state, active = gate_step(gate_state, detected, gate)
        else:
            active = True

        if not active:
            if controller is not None:
                controller.reset()
            action = ZERO_ACTION
        elif controller is None:
            action = _oracle_action(state, active)
        else:
            obs = make_virtual_observation(
                frames,
                masks,
                JointState(np.array([*state.gripper, state.grip])),
                enabled=flags.overlay,
                timestamp=t / gate.frame_rate,
            )
            x = encode_observation(
                np.stack([f.pixels for f in obs.frames]), np.array([*state.gripper, state.grip])
            )
            raw = controller.act(x)
            action = Action(float(raw[0]), float(raw[1]), float(min(1.0, max(0.0, raw[2]))))

        state = step(state, action)
        trajectory.append(state)
        if start_x is not None:
            if state.holding and start_x - state.bottle_pos[0] >= SUCCESS_DISPLACEMENT:
                break
        elif state.gripper != start:
            break
    return grasp_outcome(trajectory)


def _evaluate_seed(
    policy, policy_kind: str, flags: ProtocolFlags, env_class: str, n_trials: int, seed: int, noise, sigma, gate
) -> ConditionResult:
    successes = false_triggers = nulls = 0
    env_code = ENV_CODES[env_class]
    for trial in range(n_trials):
        rng = np.random.default_rng([seed, _EVAL_STREAM, env_code, trial])
        scene = sample_scene(env_class, flags, rng, lighting_drift=True)
        outcome = _rollout(policy, flags, scene, rng, noise, sigma, gate)
        if scene.bottle is None:
            nulls += 1
            false_triggers += outcome == "false_trigger"
        else:
            successes += outcome == "success"
    return ConditionResult(
        flags=flags,
        policy_kind=policy_kind,
        env_class=env_class,
        trials=n_trials,
        successes=successes,
        false_triggers=false_triggers,
        seed=seed,
        null_trials=nulls,
    )


def evaluate(
    policy: Optional[PolicyParams],
    flags: ProtocolFlags,
    env_class: str,
    n_trials: int,
    seeds: Sequence[int],
    *,
    noise: DetectorNoise = DEFAULT_NOISE,
    sigma: float = SENSOR_NOISE_SIGMA,
    gate: GateConfig = GateConfig(),
) -> list[ConditionResult]:
    """Score gated closed-loop rollouts; one ConditionResult per seed.

    Scene draws depend only on (seed, env_class, trial), never on the flags
    or the policy, so conditions compare on identical scene streams.
    """
    if env_class not in ENV_CODES:
        raise ValueError(f"unknown env_class {env_class!r}")
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    kind = "oracle" if policy is None else KIND_NAMES[policy.kind]
    return [
        _evaluate_seed(policy, kind, flags, env_class, n_trials, seed, noise, sigma, gate) for seed in seeds
    ]


def _pool(results: Sequence[ConditionResult], env_class: str) -> ConditionResult:
    first = results[0]
    return ConditionResult(
        flags=first.flags,
        policy_kind=first.policy_kind,
        env_class=env_class,
        trials=sum(r.trials for r in results),
        successes=sum(r.successes for r in results),
        false_triggers=sum(r.false_triggers for r in results),
        seed=first.seed,
        null_trials=sum(r.null_trials for r in results),
        episodes=first.episodes,
    )


# ---------------------------------------------------------------------------
# Studies


def _median(values) -> float:
    return float(np.median(np.asarray(list(values), dtype=np.float64)))


def _condition_policy(flags: ProtocolFlags, kind: int, seed: int, n_episodes: int, steps: int) -> PolicyParams:
    records = build_dataset(flags, n_episodes, collection_rng(seed))
    return train_policy(records, kind, seed, steps)


def _run_cells(cells, fn, jobs: int):
    """Run independent condition cells, optionally on a thread pool.

    Cells share nothing and derive all randomness from their own arguments,
    so results depend only on the cell list order, never on the schedule.
    """
    if jobs <= 1:
        return [fn(cell) for cell in cells]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


def check_calibration(table: Sequence[ConditionResult]) -> float:
    """Median train-env success of the trainable plain-RGB baseline; raises
    CalibrationError outside the sane band (orderings would be vacuous)."""
    rates = [
        r.success_rate
        for r in table
        if r.flags == BASELINE_FLAGS and r.policy_kind == "trainable" and r.env_class == "train"
    ]
    if not rates:
        raise CalibrationError("no baseline train-env rows to calibrate against")
    med = _median(rates)
    lo, hi = CALIBRATION_BAND
    if not lo <= med <= hi:
        raise CalibrationError(f"baseline train-env median {med:.3f} outside [{lo}, {hi}]")
    return med


def run_ablation(
    seeds: Sequence[int] = DEFAULT_SEEDS,
    *,
    kinds: Sequence[int] = (KIND_TRAINABLE, KIND_FROZEN),
    n_episodes: int = DEFAULT_EPISODES,
    trials: int = EVAL_TRIALS,
    steps: int = HARNESS_STEPS,
    jobs: int = 1,
    csv_path=None,
) -> list[ConditionResult]:
    """The six-row protocol ablation for both policy kinds.

    Each condition trains its own policy and reports train, novel_similar,
    and pooled mean rows per seed. Aborts via CalibrationError when the
    baseline is out of band.
    """

    def cell(args):
        kind, seed, row = args
        flags = ProtocolFlags(overlay=bool(row[0]), red_light=bool(row[1]), varied_bg=bool(row[2]))
        policy = _condition_policy(flags, kind, seed, n_episodes, steps)
        per_env = [
            _evaluate_seed(
                policy, KIND_NAMES[kind], flags, env, trials, seed,
                DEFAULT_NOISE, SENSOR_NOISE_SIGMA, GateConfig(),
            )
            for env in ("train", "novel_similar")
        ]
        return per_env + [_pool(per_env, "mean")]

    cells = [(kind, seed, row) for kind in kinds for seed in seeds for row in TABLE_ROWS]
    results = [r for group in _run_cells(cells, cell, jobs) for r in group]
    check_calibration(results)
    if csv_path is not None:
        write_report_csv(results, csv_path)
    return results


@dataclass(frozen=True)
class ComponentRanking:
    order: tuple[str, str, str]
    drops: dict
    tie: bool


def _row_rate(table, row, kind_name, seed, env_class) -> float:
    flags = ProtocolFlags(overlay=bool(row[0]), red_light=bool(row[1]), varied_bg=bool(row[2]))
    for r in table:
        if r.flags == flags and r.policy_kind == kind_name and r.seed == seed and r.env_class == env_class:
            return r.success_rate
    raise ValueError(f"ablation table is missing row {row} {kind_name} seed {seed} {env_class}")


def rank_components(table: Sequence[ConditionResult], env_class: str = "mean") -> ComponentRanking:
    """Importance = pooled success drop when the component alone leaves the
    full pipeline, median over (kind, seed) pairs.

    varied_bg has no direct single-removal row in the table, so its drop
    averages the two flag contexts that differ only in varied_bg. Ties break
    by the declared order varied_bg > red_light > overlay and are flagged.
    """
    kinds = sorted({r.policy_kind for r in table if r.policy_kind != "oracle"})
    seeds = sorted({r.seed for r in table})
    if not kinds or not seeds:
        raise ValueError("empty ablation table")
    per = {name: [] for name in COMPONENTS}
    for kind in kinds:
        for seed in seeds:
            full = _row_rate(table, (1, 1, 1), kind, seed, env_class)
            per["overlay"].append(full - _row_rate(table, (0, 1, 1), kind, seed, env_class))
            per["red_light"].append(full - _row_rate(table, (1, 0, 1), kind, seed, env_class))
            ctx_red = _row_rate(table, (0, 1, 1), kind, seed, env_class) - _row_rate(
                table, (0, 1, 0), kind, seed, env_class
            )
            ctx_overlay = _row_rate(table, (1, 0, 1), kind, seed, env_class) - _row_rate(
                table, (1, 0, 0), kind, seed, env_class
            )
            per["varied_bg"].append((ctx_red + ctx_overlay) / 2.0)
    drops = {name: _median(vals) for name, vals in per.items()}
    order = tuple(sorted(COMPONENTS, key=lambda n: (-drops[n], COMPONENTS.index(n))))
    tie = len(set(drops.values())) < len(COMPONENTS)
    return ComponentRanking(order=order, drops=drops, tie=tie)


def run_transfer(
    seeds: Sequence[int] = DEFAULT_SEEDS,
    *,
    kinds: Sequence[int] = (KIND_TRAINABLE, KIND_FROZEN),
    n_episodes: int = DEFAULT_EPISODES,
    trials: int = EVAL_TRIALS,
    steps: int = HARNESS_STEPS,
    jobs: int = 1,
    csv_path=None,
) -> list[ConditionResult]:
    """Full pipeline vs plain RGB across train / novel_similar / novel_extreme."""

    def cell(args):
        kind, seed, flags = args
        policy = _condition_policy(flags, kind, seed, n_episodes, steps)
        return [
            _evaluate_seed(
                policy, KIND_NAMES[kind], flags, env, trials, seed,
                DEFAULT_NOISE, SENSOR_NOISE_SIGMA, GateConfig(),
            )
            for env in ("train", "novel_similar", "novel_extreme")
        ]

    cells = [(kind, seed, flags) for kind in kinds for seed in seeds for flags in (FULL_FLAGS, BASELINE_FLAGS)]
    results = [r for group in _run_cells(cells, cell, jobs) for r in group]
    check_calibration(results)
    if csv_path is not None:
        write_report_csv(results, csv_path)
    return results


def run_wrist_ablation(
    seeds: Sequence[int] = DEFAULT_SEEDS,
    *,
    kinds: Sequence[int] = (KIND_TRAINABLE, KIND_FROZEN),
    n_episodes: int = DEFAULT_EPISODES,
    trials: int = EVAL_TRIALS,
    steps: int = HARNESS_STEPS,
    jobs: int = 1,
    csv_path=None,
) -> list[ConditionResult]:
    """Full pipeline with and without the gripper-mounted camera."""

    def cell(args):
        kind, seed, wrist = args
        flags = replace(FULL_FLAGS, wrist_camera=wrist)
        policy = _condition_policy(flags, kind, seed, n_episodes, steps)
        return [
            _evaluate_seed(
                policy, KIND_NAMES[kind], flags, env, trials, seed,
                DEFAULT_NOISE, SENSOR_NOISE_SIGMA, GateConfig(),
            )
            for env in ("train", "novel_similar")
        ]

    cells = [(kind, seed, wrist) for kind in kinds for seed in seeds for wrist in (False, True)]
    results = [r for group in _run_cells(cells, cell, jobs) for r in group]
    if csv_path is not None:
        write_report_csv(results, csv_path)
    return results


def run_data_efficiency(
    policy_kind: int,
    episode_counts: Sequence[int] = DATA_EFF_COUNTS,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    *,
    trials: int = EVAL_TRIALS,
    steps: int = HARNESS_STEPS,
    jobs: int = 1,
    csv_path=None,
) -> list[ConditionResult]:
    """Success vs training-set size on the full pipeline, train env.

    Episode sets nest: the run at count k trains on the first k episodes of
    the largest set, so the only variable is how much data the policy saw.
    """
    counts = sorted(set(int(c) for c in episode_counts))
    if not counts or counts[0] < 1:
        raise ValueError("episode_counts must be positive")

    def cell(seed):
        records = build_dataset(FULL_FLAGS, counts[-1], collection_rng(seed))
        out = []
        for count in counts:
            policy = train_policy(records[:count], policy_kind, seed, steps)
            res = _evaluate_seed(
                policy, KIND_NAMES[policy_kind], FULL_FLAGS, "train", trials, seed,
                DEFAULT_NOISE, SENSOR_NOISE_SIGMA, GateConfig(),
            )
            out.append(replace(res, episodes=count))
        return out

    results = [r for group in _run_cells(list(seeds), cell, jobs) for r in group]
    if csv_path is not None:
        write_report_csv(results, csv_path)
    return results


# ---------------------------------------------------------------------------
# Reports


CSV_COLUMNS = (
    "condition,policy,env,overlay,red_light,varied_bg,wrist,seed,trials,successes,false_triggers"
)


def condition_name(flags: ProtocolFlags) -> str:
    name = f"o{int(flags.overlay)}r{int(flags.red_light)}v{int(flags.varied_bg)}"
    return name + "+wrist" if flags.wrist_camera else name


def write_report_csv(results: Sequence[ConditionResult], path) -> None:
    """Plain-LF CSV with the fixed column set; identical inputs yield
    identical bytes. Rows carrying an episode count (the data-efficiency
    study) add one trailing `episodes` column."""
    with_episodes = any(r.episodes is not None for r in results)
    lines = [CSV_COLUMNS + ",episodes" if with_episodes else CSV_COLUMNS]
    for r in results:
        f = r.flags
        fields = [
            condition_name(f),
            r.policy_kind,
            r.env_class,
            str(int(f.overlay)),
            str(int(f.red_light)),
            str(int(f.varied_bg)),
            str(int(f.wrist_camera)),
            str(r.seed),
            str(r.trials),
            str(r.successes),
            str(r.false_triggers),
        ]
        if with_episodes:
            fields.append("" if r.episodes is None else str(r.episodes))
        lines.append(",".join(fields))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
