from safenav.gcrl.agent import (CONSTRAINED, UNCONSTRAINED, Agent, CategoricalCritic, Encoder,
                                TrainConfig, act, actor_update, collect_episode,
                                critic_backup_cost, critic_backup_distance, expected_value,
                                lagrange_update, self_sample_batch)
from safenav.gcrl.buffer import Batch, ReplayBuffer, Transition
from safenav.gcrl.categorical import AtomGrid, categorical_project, cost_grid, distance_grid
from safenav.gcrl.checkpoint import Checkpoint, CheckpointError
from safenav.gcrl.train import TrainLog, finetune, train

__all__ = [
    "Agent", "AtomGrid", "Batch", "CONSTRAINED", "CategoricalCritic", "Checkpoint",
    "CheckpointError", "Encoder", "ReplayBuffer", "TrainConfig", "TrainLog", "Transition",
    "UNCONSTRAINED", "act", "actor_update", "categorical_project", "collect_episode",
    "cost_grid", "critic_backup_cost", "critic_backup_distance", "distance_grid",
    "expected_value", "finetune", "lagrange_update", "self_sample_batch", "train",
]
