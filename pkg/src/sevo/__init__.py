"""SEVO: semantic-enhanced virtual observations for imitation-learned grasping.

Library surface: overlay compositing (observation), detector port and wire
protocol (detector), red-LED model (illumination), detection-gated motion
(safety_gate), the desk-scale grasp simulator (sim_env), tiny behavior-cloning
policies (policy), episode storage (dataset_io), experiment orchestration
(harness), and the command-line front end (cli).
"""

from .detector import (
    DEFAULT_NOISE,
    Detection,
    DetectorNoise,
    DetectorUnavailableError,
    ProtocolError,
    decode_reply,
    decode_request,
    encode_reply,
    encode_request,
    external_detect,
    mock_detect,
    select_target,
    spawn_detector,
)
from .dataset_io import EpisodeRecord, list_episodes, read_episode, records_equal, write_episode
from .harness import (
    CalibrationError,
    ComponentRanking,
    ConditionResult,
    build_dataset,
    evaluate,
    rank_components,
    run_ablation,
    run_data_efficiency,
    run_transfer,
    run_wrist_ablation,
    train_policy,
    write_report_csv,
)
from .illumination import LedSpec, Lighting, led_contribution, red_gain_map, specular_anchor
from .observation import (
    DEFAULT_ALPHA,
    DEFAULT_COLOR,
    Frame,
    JointState,
    OverlayConfig,
    SegmentationMask,
    VirtualObservation,
    compose_overlay,
    make_virtual_observation,
    read_pgm,
    read_ppm,
    write_pgm,
    write_ppm,
)
from .policy import (
    KIND_FROZEN,
    KIND_TRAINABLE,
    ChunkedController,
    InputSpec,
    PolicyParams,
    TrainConfig,
    encode_dataset,
    encode_observation,
    grad_check,
    init_policy,
    load_policy,
    save_policy,
    train,
)
from .safety_gate import GateConfig, GateState, gate_step
from .sim_env import (
    Action,
    BottleSpec,
    CameraRig,
    CameraSpec,
    EnvState,
    FloorTexture,
    ProtocolFlags,
    SceneSpec,
    coverage_check,
    default_rig,
    grasp_outcome,
    initial_state,
    oracle_demonstrate,
    render,
    render_all,
    sample_scene,
    step,
)

__all__ = [
    "Action",
    "BottleSpec",
    "CalibrationError",
    "CameraRig",
    "CameraSpec",
    "ChunkedController",
    "ComponentRanking",
    "ConditionResult",
    "DEFAULT_ALPHA",
    "DEFAULT_COLOR",
    "DEFAULT_NOISE",
    "Detection",
    "DetectorNoise",
    "DetectorUnavailableError",
    "EnvState",
    "EpisodeRecord",
    "FloorTexture",
    "Frame",
    "GateConfig",
    "GateState",
    "InputSpec",
    "JointState",
    "KIND_FROZEN",
    "KIND_TRAINABLE",
    "LedSpec",
    "Lighting",
    "OverlayConfig",
    "PolicyParams",
    "ProtocolError",
    "ProtocolFlags",
    "SceneSpec",
    "SegmentationMask",
    "TrainConfig",
    "VirtualObservation",
    "build_dataset",
    "compose_overlay",
    "coverage_check",
    "decode_reply",
    "decode_request",
    "default_rig",
    "encode_dataset",
    "encode_observation",
    "encode_reply",
    "encode_request",
    "evaluate",
    "external_detect",
    "gate_step",
    "grad_check",
    "grasp_outcome",
    "init_policy",
    "initial_state",
    "led_contribution",
    "list_episodes",
    "load_policy",
    "make_virtual_observation",
    "mock_detect",
    "oracle_demonstrate",
    "rank_components",
    "read_episode",
    "read_pgm",
    "read_ppm",
    "records_equal",
    "red_gain_map",
    "render",
    "render_all",
    "run_ablation",
    "run_data_efficiency",
    "run_transfer",
    "run_wrist_ablation",
    "sample_scene",
    "save_policy",
    "select_target",
    "spawn_detector",
    "specular_anchor",
    "step",
    "train",
    "train_policy",
    "write_episode",
    "write_pgm",
    "write_ppm",
    "write_report_csv",
]
