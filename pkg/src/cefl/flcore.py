"""The four training protocols driving the model, clustering, and cost parts.

* ``individual``: every client trains alone; nothing is transmitted.
* ``regular_fl``: all clients participate in every round; the full model
  is broadcast, trained, uploaded, and sample-count-weight averaged.
* ``fedper``: like regular FL but only the first B (base) layers travel
  and are aggregated; the remaining personalized layers never leave a
  client.
* ``cefl``: clients train briefly and upload once, get clustered on a
  weight-similarity graph, then only the cluster leaders run base-layer
  FL rounds; afterwards each leader hands its full model to its members,
  who fine-tune locally with patience-based early stopping.

Every transmission goes through the cost ledger.  Runs are pure functions
of (config, shards, seed): per-client shuffle generators are derived from
the run seed and the client id, and aggregation consumes client results
in client-index order.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .clustering import Clustering, cluster_clients
from .cost import DEFAULT_BITS_PER_PARAM, CostLedger, SizeModel
from .errors import ConfigurationError, InputError
from .model import (
    AdamState,
    Batch,
    ClientState,
    LayerSpec,
    ModelParams,
    TrainConfig,
    evaluate,
    init_model,
    train_episodes,
    validate_specs,
)
from .similarity import build_graph

log = logging.getLogger(__name__)

PROTOCOLS = ("individual", "regular_fl", "fedper", "cefl")

# flattened 20x20x3 feature image in, 8 activity classes out
DEFAULT_LAYER_SPECS = (
    LayerSpec(1200, 128, "relu"),
    LayerSpec(128, 64, "relu"),
    LayerSpec(64, 8, "softmax"),
)


@dataclass
class ProtocolConfig:
    protocol: str
    N: int
    K: int = 2
    T: int = 100
    epsilon: int = 8
    epsilon_init: int = 1
    eta: int = 350
    B: int | None = None               # None -> all but the final layer
    a_k: list | None = None            # None -> uniform 1/K
    individual_episodes: int = 350
    patience: int = 10
    min_delta: float = 1e-3
    bits_per_param: int = DEFAULT_BITS_PER_PARAM
    layer_specs: tuple = DEFAULT_LAYER_SPECS
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigurationError(f"unknown protocol {self.protocol!r}")
        self.layer_specs = validate_specs(self.layer_specs)
        if len(self.layer_specs) < 2:
            raise ConfigurationError("protocols need at least 2 layers")
        if self.N < 1:
            raise ConfigurationError("N must be >= 1")
        if not 1 <= self.K <= self.N:
            raise ConfigurationError(f"K={self.K} must lie in [1, N={self.N}]")
        if min(self.T, self.epsilon, self.epsilon_init, self.eta,
               self.individual_episodes) < 0:
            raise ConfigurationError("round/episode counts must be >= 0")
        b = self.base_layers
        if not 1 <= b <= self.n_layers:
            raise ConfigurationError(
                f"B={b} must lie in [1, L={self.n_layers}]"
            )
        if self.protocol == "fedper" and b >= self.n_layers:
            raise ConfigurationError(
                "fedper needs B < L; B = L would be regular FL"
            )
        if self.a_k is not None:
            if len(self.a_k) != self.K:
                raise ConfigurationError("a_k must have K entries")
            if abs(sum(self.a_k) - 1.0) > 1e-9:
                raise ConfigurationError("a_k must sum to 1")

    @property
    def n_layers(self) -> int:
        return len(self.layer_specs)

    @property
    def base_layers(self) -> int:
        return self.B if self.B is not None else self.n_layers - 1

    def aggregation_weights(self) -> list:
        if self.a_k is not None:
            return list(self.a_k)
        return [1.0 / self.K] * self.K


@dataclass
class RoundMetrics:
    round: int
    mean_acc: float
    std_acc: float
    cum_bits: int


@dataclass
class RunResult:
    protocol: str
    rows: list
    ledger: CostLedger
    final_client_acc: dict
    clients: list
    clustering: Clustering | None = None
    degenerate_clustering: bool = False
    partial_layer_violations: int = 0

    def metrics_rows(self) -> list:
        return [
            (r.round, self.protocol, r.mean_acc, r.std_acc, r.cum_bits)
            for r in self.rows
        ]


# -- aggregation primitives --

def fedavg_aggregate(models, weights, n_layers: int) -> np.ndarray:
    """Convex combination of the first ``n_layers`` layers' flat blocks."""
    models = list(models)
    weights = [float(w) for w in weights]
    if len(models) != len(weights) or not models:
        raise InputError("need one weight per model")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise InputError(f"aggregation weights sum to {sum(weights)!r}, not 1")
    first = models[0]
    if not 1 <= n_layers <= first.n_layers:
        raise InputError(f"layer range 1..{n_layers} out of bounds")
    for m in models[1:]:
        if not first.same_structure(m):
            raise InputError("models must share an identical layer structure")
    end = int(first.offsets[n_layers])
    out = np.zeros(end)
    for m, w in zip(models, weights):
        out += w * m.theta[:end]
    return out


def broadcast_base(g: np.ndarray, participants, n_layers: int) -> list:
    """Overwrite layers 1..n_layers of every participant with ``g``.

    Later layers stay bitwise untouched.  Optimizer state is reset because
    the incoming weights invalidate the accumulated moments.
    """
    participants = list(participants)
    if participants and g.shape != (int(participants[0].model.offsets[n_layers]),):
        raise InputError("aggregated block does not cover layers 1..B")
    for c in participants:
        c.model.theta[: g.size] = g
        c.adam.reset()
    return participants


# -- shared driver pieces --

def _make_clients(cfg: ProtocolConfig, shards, seed: int) -> list:
    shards = list(shards)
    if len(shards) != cfg.N:
        raise ConfigurationError(f"config says N={cfg.N}, got {len(shards)} shards")
    base = init_model(cfg.layer_specs, seed)
    clients = []
    for pos, shard in enumerate(shards):
        x_tr, y_tr = shard.train_arrays()
        x_te, y_te = shard.test_arrays()
        clients.append(
            ClientState(
                client_id=shard.client_id,
                train=Batch(x_tr, y_tr),
                test=Batch(x_te, y_te),
                model=base.copy(),
                adam=AdamState.zeros(base.n_params),
                rng=np.random.default_rng([seed, pos]),
            )
        )
    return clients


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("CEFL_WORKERS", "1")))
    except ValueError:
        return 1


def _train_many(clients, n_episodes: int, cfg: TrainConfig) -> None:
    """Local training for a set of clients, optionally on worker threads.

    Clients are independent and the jitted kernels release the GIL, so a
    small pool (env ``CEFL_WORKERS``) overlaps their work without changing
    any result; the serial loop is the reference behavior."""
    workers = min(_workers(), len(clients))
    if workers <= 1:
        for c in clients:
            train_episodes(c, n_episodes, cfg)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda c: train_episodes(c, n_episodes, cfg), clients))


def _client_acc(c: ClientState) -> float:
    return evaluate(c.model, c.test) if len(c.test) else float("nan")


def _metrics_row(round_idx: int, clients, cum_bits: int) -> RoundMetrics:
    accs = np.array([_client_acc(c) for c in clients])
    with np.errstate(invalid="ignore"):
        return RoundMetrics(
            round_idx,
            float(np.nanmean(accs)),
            float(np.nanstd(accs)),
            cum_bits,
        )


def _sample_weights(clients) -> list:
    counts = [len(c.train) for c in clients]
    total = sum(counts)
    if total == 0:
        raise InputError("no client has training data")
    return [Fraction(n, total) for n in counts]


class _PersonalizedGuard:
    """Asserts aggregation/broadcast never touch layers B+1..L."""

    def __init__(self, n_base_layers: int):
        self.n_base = n_base_layers
        self.violations = 0
        self._snap = None

    def snapshot(self, clients) -> None:
        self._snap = [
            c.model.theta[c.model.offsets[self.n_base] :].copy() for c in clients
        ]

    def check(self, clients) -> None:
        for c, before in zip(clients, self._snap):
            after = c.model.theta[c.model.offsets[self.n_base] :]
            if not np.array_equal(before, after):
                self.violations += 1
                log.error("personalized layers of client %d were modified "
                          "by aggregation/broadcast", c.client_id)
        self._snap = None


# -- protocols --

def run_individual(cfg: ProtocolConfig, shards, seed: int) -> RunResult:
    """Purely local training; the ledger stays empty."""
    if cfg.protocol != "individual":
        raise ConfigurationError("config is not for individual training")
    clients = _make_clients(cfg, shards, seed)
    model = init_model(cfg.layer_specs, seed)
    ledger = CostLedger(SizeModel.for_model(model, cfg.bits_per_param))
    rows = [_metrics_row(0, clients, 0)]
    _train_many(clients, cfg.individual_episodes, cfg.train)
    for ep in range(1, cfg.individual_episodes + 1):
        accs = np.array([
            c.acc_history[ep - 1] if len(c.acc_history) >= ep else float("nan")
            for c in clients
        ])
        with np.errstate(invalid="ignore"):
            rows.append(RoundMetrics(ep, float(np.nanmean(accs)),
                                     float(np.nanstd(accs)), 0))
    final = {pos: _client_acc(c) for pos, c in enumerate(clients)}
    return RunResult("individual", rows, ledger, final, clients)


def _run_server_rounds(cfg: ProtocolConfig, shards, seed: int,
                       n_layers_shared: int) -> RunResult:
    """Common loop for regular FL (all layers) and FedPer (base only)."""
    clients = _make_clients(cfg, shards, seed)
    lmax = cfg.n_layers
    init = init_model(cfg.layer_specs, seed)
    ledger = CostLedger(SizeModel.for_model(init, cfg.bits_per_param))
    weights = _sample_weights(clients)
    guard = _PersonalizedGuard(n_layers_shared) if n_layers_shared < lmax else None
    global_block = init.theta[: int(init.offsets[n_layers_shared])].copy()
    rows = [_metrics_row(0, clients, 0)]
    for t in range(1, cfg.T + 1):
        ledger.record("fl_broadcast", "server", "broadcast", n_layers_shared)
        if guard:
            guard.snapshot(clients)
        broadcast_base(global_block, clients, n_layers_shared)
        if guard:
            guard.check(clients)
        _train_many(clients, cfg.epsilon, cfg.train)
        for c in clients:
            ledger.record("fl_upload", c.client_id, "server", n_layers_shared)
        global_block = fedavg_aggregate(
            [c.model for c in clients], weights, n_layers_shared
        )
        rows.append(_metrics_row(t, clients, ledger.total_bits))
    final = {pos: _client_acc(c) for pos, c in enumerate(clients)}
    return RunResult(
        cfg.protocol, rows, ledger, final, clients,
        partial_layer_violations=guard.violations if guard else 0,
    )


def run_regular_fl(cfg: ProtocolConfig, shards, seed: int) -> RunResult:
    """Conventional FL: everyone uploads and receives the full model."""
    if cfg.protocol != "regular_fl":
        raise ConfigurationError("config is not for regular FL")
    return _run_server_rounds(cfg, shards, seed, cfg.n_layers)


def run_fedper(cfg: ProtocolConfig, shards, seed: int) -> RunResult:
    """Base-layer-only FL; personalized layers never leave the clients."""
    if cfg.protocol != "fedper":
        raise ConfigurationError("config is not for fedper")
    return _run_server_rounds(cfg, shards, seed, cfg.base_layers)


def transfer_session(clients, clustering: Clustering, eta: int,
                     patience: int, min_delta: float, train_cfg: TrainConfig,
                     ledger: CostLedger | None = None) -> dict:
    """Copy each leader's full model to its members, then fine-tune them.

    Fine-tuning stops early once held-out accuracy fails to improve by
    more than ``min_delta`` for ``patience`` consecutive episodes.  Only
    the initial per-leader transmission is communication.
    """
    n_layers = clients[0].model.n_layers
    member_positions = []
    for k, members in enumerate(clustering.clusters()):
        leader_pos = clustering.leaders[k]
        if ledger is not None:
            ledger.record("transfer", clients[leader_pos].client_id,
                          f"cluster{k}", n_layers)
        leader_model = clients[leader_pos].model
        for pos in members:
            if pos == leader_pos:
                continue
            clients[pos].model = leader_model.copy()
            clients[pos].adam.reset()
            member_positions.append(pos)
    workers = min(_workers(), max(len(member_positions), 1))
    if workers <= 1:
        for pos in member_positions:
            _fine_tune(clients[pos], eta, patience, min_delta, train_cfg)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(
                lambda pos: _fine_tune(clients[pos], eta, patience,
                                       min_delta, train_cfg),
                member_positions,
            ))
    return {pos: _client_acc(clients[pos]) for pos in sorted(member_positions)}


def _fine_tune(c: ClientState, eta: int, patience: int, min_delta: float,
               train_cfg: TrainConfig) -> None:
    if len(c.train) == 0:
        train_episodes(c, 0, train_cfg)   # records the skip warning
        return
    best = _client_acc(c)
    stall = 0
    for _ in range(eta):
        train_episodes(c, 1, train_cfg)
        acc = c.acc_history[-1]
        if acc > best + min_delta:
            best = acc
            stall = 0
        else:
            stall += 1
        if stall >= patience:
            break


def run_cefl(cfg: ProtocolConfig, shards, seed: int) -> RunResult:
    """Clustered leader-only FL with a closing transfer session."""
    if cfg.protocol != "cefl":
        raise ConfigurationError("config is not for cefl")
    clients = _make_clients(cfg, shards, seed)
    lmax = cfg.n_layers
    b = cfg.base_layers
    init = init_model(cfg.layer_specs, seed)
    ledger = CostLedger(SizeModel.for_model(init, cfg.bits_per_param))

    # 1: short local training, then every client uploads its full model
    _train_many(clients, cfg.epsilon_init, cfg.train)
    for c in clients:
        ledger.record("init_upload", c.client_id, "server", lmax)
    rows = [_metrics_row(0, clients, ledger.total_bits)]

    # 2: similarity graph -> communities -> leaders
    graph = build_graph([c.model for c in clients])
    if graph.degenerate:
        log.warning("similarity graph is degenerate; using the balanced "
                    "contiguous clustering fallback")
    clustering = cluster_clients(graph, cfg.K, seed)
    leaders = [clients[pos] for pos in clustering.leaders]
    a_k = cfg.aggregation_weights()

    # 3: FL rounds among leaders only, base layers only
    guard = _PersonalizedGuard(b) if b < lmax else None
    for t in range(1, cfg.T + 1):
        for ldr in leaders:
            ledger.record("fl_upload", ldr.client_id, "server", b)
        block = fedavg_aggregate([ldr.model for ldr in leaders], a_k, b)
        ledger.record("fl_broadcast", "server", "broadcast", b)
        if guard:
            guard.snapshot(clients)
        broadcast_base(block, leaders, b)
        if guard:
            guard.check(clients)
        _train_many(leaders, cfg.epsilon, cfg.train)
        rows.append(_metrics_row(t, leaders, ledger.total_bits))

    # 4: leaders hand their models to members, who fine-tune locally
    transfer_session(clients, clustering, cfg.eta, cfg.patience,
                     cfg.min_delta, cfg.train, ledger)
    rows.append(_metrics_row(cfg.T + 1, clients, ledger.total_bits))
    final = {pos: _client_acc(c) for pos, c in enumerate(clients)}
    return RunResult(
        "cefl", rows, ledger, final, clients,
        clustering=clustering,
        degenerate_clustering=graph.degenerate,
        partial_layer_violations=guard.violations if guard else 0,
    )


RUNNERS = {
    "individual": run_individual,
    "regular_fl": run_regular_fl,
    "fedper": run_fedper,
    "cefl": run_cefl,
}


def run_protocol(cfg: ProtocolConfig, shards, seed: int) -> RunResult:
    return RUNNERS[cfg.protocol](cfg, shards, seed)
