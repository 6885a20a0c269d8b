"""Updatable learned index with a balanced adjustment tree, distribution-aware
placeholders, and a Q-learning structure tuner."""

from .bmat import Adjustment, Backend, Bmat, DeleteOutcome, PerfMeasures, UpdateOutcome
from .index import IndexConfig, UplifIndex, bulk_load
from .model import LinearModel, Model, ModelConfig, predict, train
from .nullifier import (
    DensityModel,
    GappedSegment,
    expand_segment,
    fit_update_distribution,
    gap_size,
    insert_in_gap,
)
from .tuner import (
    Action,
    AgentConfig,
    QLearningTuner,
    QTable,
    State,
    load_qtable,
    observe_state,
    reward,
    save_qtable,
    select_action,
    update_q,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "Adjustment",
    "AgentConfig",
    "Backend",
    "Bmat",
    "DeleteOutcome",
    "DensityModel",
    "GappedSegment",
    "IndexConfig",
    "LinearModel",
    "Model",
    "ModelConfig",
    "PerfMeasures",
    "QLearningTuner",
    "QTable",
    "State",
    "UpdateOutcome",
    "UplifIndex",
    "bulk_load",
    "expand_segment",
    "fit_update_distribution",
    "gap_size",
    "insert_in_gap",
    "load_qtable",
    "observe_state",
    "predict",
    "reward",
    "save_qtable",
    "select_action",
    "train",
    "update_q",
]
