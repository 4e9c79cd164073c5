"""UAV relay placement over fragmented vehicular networks.

Road-graph connectivity accounting, an air-to-ground coverage/energy model,
a slot-based relay placement environment, PPO with a fused semantic prior,
scorer backends and evaluation tooling.
"""

from .road_graph import (
    RoadTopologyGraph,
    make_graph,
    load_map,
    dump_map_text,
    SlotOccupancy,
    make_occupancy,
    classify_connectivity,
    build_dcg,
    fragmentation,
    fragmentation_metrics,
    FragmentationReport,
    DualConnectivityGraph,
    MapFormatError,
    StructuralError,
)
from .traffic import (
    TrafficSource,
    TrafficProfile,
    generate_traffic,
    load_trajectories,
    TrafficLoadError,
)
from .channel import (
    ChannelParams,
    EnergyParams,
    p_los,
    mean_path_loss,
    received_power,
    coverage_radius,
    slot_energy,
    ChannelConfigError,
    InfeasibleMoveError,
)
from .env import EnvConfig, UavVanetEnv, VectorEnv, Transition, EnvConfigError, SnapshotError
from .policy import (
    TrainConfig,
    ActorCritic,
    normalize_llm_logits,
    fuse,
    fused_logits,
    sa_ppo_loss,
    sa_ppo_update,
    gae_advantages,
    checkpoint_save,
    checkpoint_load,
    CheckpointError,
    UpdateDiverged,
)
from .semantic import (
    serialize_state,
    deserialize_input,
    discretize_scores,
    score_actions,
    OracleScorer,
    TableScorer,
    ExternalScorer,
    StateDatabase,
    collect_states,
    build_sft_dataset,
    load_sft_jsonl,
    SerializationError,
    ScorerTransportError,
)
from .train import run_training, run_pure_semantic, run_policy_rollouts, TrainResult
from .evalkit import (
    kendall_tau,
    top_k_hit_rate,
    json_psr,
    evaluate_scorer,
    trailing_mean_curve,
    episodes_to_threshold,
    run_comparison,
    ComparisonReport,
)
from .bench import grid_graph, grid_benchmark, Benchmark
from .config import RunConfig, ScorerConfig, load_config, build_scorer, ConfigError

__version__ = "0.1.0"
