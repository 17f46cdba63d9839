"""Deterministic simulator of communication-efficient federated learning.

Clients hold heterogeneous activity-recognition shards; protocols range
from purely local training to clustered, leader-only FL with partial-layer
aggregation and a closing transfer-learning session.  Every simulated
transmission is metered bit-exactly.
"""

from .backend import backend_name
from .clustering import Clustering, cluster_clients, coarsen_to_k, louvain, modularity, select_leaders
from .cost import CostEvent, CostLedger, SizeModel, closed_form_delta, ledger_total, savings_ratio
from .data import (
    ClientShard,
    FeatureImage,
    HeterogeneityProfile,
    RawRecording,
    featurize,
    flagship_profiles,
    ingest_csv,
    slide_interval,
    synth_dataset,
    windows,
)
from .errors import ConfigurationError, InputError, ParseError
from .flcore import (
    DEFAULT_LAYER_SPECS,
    ProtocolConfig,
    RunResult,
    broadcast_base,
    fedavg_aggregate,
    run_cefl,
    run_fedper,
    run_individual,
    run_protocol,
    run_regular_fl,
    transfer_session,
)
from .model import (
    AdamState,
    Batch,
    ClientState,
    LayerSpec,
    ModelParams,
    TrainConfig,
    adam_step,
    evaluate,
    forward,
    init_model,
    loss_and_grads,
    train_episodes,
)
from .similarity import SimilarityGraph, build_graph, pair_distance

__version__ = "0.1.0"
