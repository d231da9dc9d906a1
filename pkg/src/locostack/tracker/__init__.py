from .env import (FALL, GOAL, OOB, TIMEOUT, EnvConfig, InitRandomization, TrackerEnv,
                  default_pose)
from .ppo import (PolicyValue, PpoConfig, RolloutBuffer, gae, load_policy, ppo_update,
                  save_policy)
from .refs import REPLAN_PERIOD, ClipRefProvider, GenRefProvider, feature_reference_arrays
from .stages import (EpisodeOutcome, StageConfig, StageCurve, closed_loop_episode,
                     clip_goal, clip_start_pose, finetune, pretrain, run_episodes,
                     sample_finetune_spec, save_trace, standing_pose)

__all__ = [
    "FALL", "GOAL", "OOB", "TIMEOUT", "EnvConfig", "InitRandomization", "TrackerEnv",
    "default_pose", "PolicyValue", "PpoConfig", "RolloutBuffer", "gae", "load_policy",
    "ppo_update", "save_policy", "REPLAN_PERIOD", "ClipRefProvider", "GenRefProvider",
    "feature_reference_arrays", "EpisodeOutcome", "StageConfig", "StageCurve",
    "closed_loop_episode", "clip_goal", "clip_start_pose", "finetune", "pretrain",
    "run_episodes", "sample_finetune_spec", "save_trace", "standing_pose",
]
