"""tkgmatch: temporal-KG extrapolation by matching historical structures.

Pipeline: quadruple ingestion -> history extraction (query subgraph
sequences, recent snapshots, cumulative background graph) -> three encoders
-> convolutional matcher -> timestamp-ordered training and time-aware
filtered ranking. Built on an in-package reverse-mode autodiff tape with
numba-accelerated scatter/conv kernels (numpy fallback via TKGMATCH_BACKEND).
"""

from .autodiff import (
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    clip_grad_norm,
    grad_check,
    stable_sigmoid,
    zero_grads,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import DATASET_PROFILES, TrainConfig, load_config
from .data import (
    DataError,
    Quadruple,
    SnapshotGraph,
    TkgDataset,
    augment_inverse,
    build_snapshots,
    load_dataset_dir,
    parse_dataset,
)
from .encoders import ModelState, compgcn_layer, encode_background, encode_candidates, encode_queries, encode_query, time_encode
from .evaluation import EvalReport, evaluate, rank_with_filter, truth_index
from .history import (
    BackgroundGraph,
    CandidateHistory,
    HistoryIndex,
    QueryHistory,
    build_background_graph,
    extract_candidate_history,
    extract_query_history,
    history_interval_stats,
)
from .matcher import ScoreVector, conv_trans_e, forward_timestamp, score_all, score_batch
from .training import NumericError, TrainResult, load_model, train

__version__ = "0.1.0"
