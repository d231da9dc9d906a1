from .bench import LatencyStats, bench_latency
from .evalgrid import (TASK_HEIGHTS, TASK_SKILL, TASKS, EvalArtifacts, EvalGrid,
                       GridResult, cell_terrain, compare_policies, episode_seeds,
                       eval_grid, recompute_mean_sd, reference_clip_for_task,
                       write_grid_result)

__all__ = [
    "LatencyStats", "bench_latency", "TASK_HEIGHTS", "TASK_SKILL", "TASKS",
    "EvalArtifacts", "EvalGrid", "GridResult", "cell_terrain", "compare_policies",
    "episode_seeds", "eval_grid", "recompute_mean_sd", "reference_clip_for_task",
    "write_grid_result",
]
