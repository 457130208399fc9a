"""Round-based FedAvg / FedProx simulation and the centralized baseline.

Each round the server broadcasts ``w_t``; every client trains locally for
``local_epochs`` epochs starting from ``w_t`` and sends back an encoded
:class:`~fedsim.codec.RoundUpdate`. The server decodes all updates, checks
them against its client registry, and forms the ``N_k``-weighted mean.
The global model is then evaluated and the checkpoint with the highest
pooled AUC on the selection split is retained.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from fedsim.codec import RoundUpdate, decode_update, encode_update
from fedsim.cohort import Cohort
from fedsim.errors import EmptyAggregateError, EmptyInputError, ParameterError, ProtocolError
from fedsim.metrics import EvalReport, build_report
from fedsim.model import (
    AdamWState,
    DenseNetConfig,
    ProxTerm,
    adamw_step,
    init_params,
    loss_and_grad,
    lr_schedule,
    predict,
    predict_proba,
    sgd_step,
)
from fedsim.numkit import ParamVector, RngStream, weighted_mean

ALGORITHMS = ("fedavg", "fedprox")
OPTIMIZERS = ("sgd", "adamw")


@dataclass(frozen=True)
class FedConfig:
    algorithm: str = "fedavg"
    mu: float = 0.0
    rounds: int = 100
    local_epochs: int = 1
    batch_size: int = 16
    optimizer: str = "adamw"
    seed: int = 0
    reset_optimizer_each_round: bool = True
    base_lr: float = 0.001
    lr_decay_every: int = 30
    lr_decay_factor: float = 10.0
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ParameterError(f"unknown algorithm {self.algorithm!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.rounds < 1 or self.local_epochs < 1 or self.batch_size < 1:
            raise ParameterError("rounds, local_epochs and batch_size must be >= 1")
        if not self.mu >= 0:
            raise ParameterError(f"mu must be >= 0, got {self.mu}")
        if self.algorithm == "fedavg" and self.mu != 0:
            raise ParameterError("mu is only meaningful for fedprox")
        if not self.base_lr > 0:
            raise ParameterError("base_lr must be positive")

    @property
    def label(self) -> str:
        if self.algorithm == "fedprox":
            return f"fedprox(mu={self.mu:g})"
        return self.algorithm

    def lr(self, epoch: int) -> float:
        return lr_schedule(epoch, self.base_lr, self.lr_decay_factor, self.lr_decay_every)


@dataclass
class ClientState:
    client_id: int
    X: np.ndarray
    y: np.ndarray
    rng: RngStream
    opt_state: AdamWState | None = None

    def __post_init__(self):
        if self.y.shape[0] == 0:
            raise EmptyInputError(f"client {self.client_id} has no data")
        if self.X.shape[0] != self.y.shape[0]:
            raise ParameterError("X and y disagree on the number of examples")

    @property
    def n_samples(self) -> int:
        return int(self.y.shape[0])


@dataclass
class GlobalModelState:
    params: ParamVector
    round: int = 0
    best_params: ParamVector | None = None
    best_auc: float | None = None
    best_round: int | None = None
    best_auc_trace: list = field(default_factory=list)


def make_clients(train: Cohort, seed: int) -> list[ClientState]:
    return [ClientState(k, c.X, c.y, RngStream(seed, "shuffle", k))
            for k, c in enumerate(train.centers) if c.n > 0]


def local_update(
    client: ClientState,
    global_params: ParamVector,
    cfg: FedConfig,
    round: int,
    model_cfg: DenseNetConfig,
) -> RoundUpdate:
    """Train from ``global_params`` for ``cfg.local_epochs`` epochs of mini-batches."""
    params = np.array(global_params, dtype=np.float64)
    prox = ProxTerm(cfg.mu, global_params) if cfg.algorithm == "fedprox" else None

    if cfg.optimizer == "adamw":
        if cfg.reset_optimizer_each_round or client.opt_state is None:
            client.opt_state = AdamWState.fresh(params.size, weight_decay=cfg.weight_decay)
        state = client.opt_state

    n, bs = client.n_samples, cfg.batch_size
    gen = client.rng.child(round=round).generator()
    for e in range(cfg.local_epochs):
        lr = cfg.lr(round * cfg.local_epochs + e)
        perm = gen.permutation(n)
        if bs >= n:
            # a single full batch: keep data order so the gradient is the plain local mean
            perm = np.arange(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            _, grad = loss_and_grad(params, model_cfg, (client.X[idx], client.y[idx]), prox)
            if cfg.optimizer == "sgd":
                params = sgd_step(params, grad, lr)
            else:
                params, state = adamw_step(state, params, grad, lr)

    if cfg.optimizer == "adamw":
        client.opt_state = state
    return RoundUpdate(client.client_id, n, params, round)


def aggregate(updates: list[RoundUpdate]) -> ParamVector:
    """``N_k``-weighted parameter mean, clients taken in ascending id order."""
    if not updates:
        raise EmptyAggregateError("no updates to aggregate")
    rounds = {u.round_index for u in updates}
    if len(rounds) != 1:
        raise ProtocolError(f"updates from mixed rounds {sorted(rounds)}")
    ordered = sorted(updates, key=lambda u: u.client_id)
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise ProtocolError("duplicate client ids in one round")
    if len(ordered) == 1:
        return ordered[0].params.copy()
    return weighted_mean([u.params for u in ordered], [u.n_samples for u in ordered])


def evaluate(
    params: ParamVector,
    model_cfg: DenseNetConfig,
    eval_sets: Cohort,
    fold_id: int | None = None,
    round: int | None = None,
) -> EvalReport:
    names, labels, scores, preds = [], [], [], []
    for c in eval_sets.centers:
        names.append(c.name)
        labels.append(c.y)
        if c.n == 0:
            scores.append(np.zeros(0))
            preds.append(np.zeros(0, dtype=np.int64))
            continue
        preds.append(predict(params, model_cfg, c.X))
        if model_cfg.num_classes == 2:
            scores.append(predict_proba(params, model_cfg, c.X)[:, 1])
    return build_report(names, labels, scores if model_cfg.num_classes == 2 else None,
                        preds, fold_id=fold_id, round=round)


def _run_rounds(cfg, clients, eval_sets, model_cfg, select_sets, init, max_workers):
    if not clients:
        raise EmptyInputError("need at least one client")
    w = init if init is not None else init_params(model_cfg, RngStream(cfg.seed, "init"))
    w = np.array(w, dtype=np.float64)
    registry = {c.client_id: c.n_samples for c in clients}
    state = GlobalModelState(params=w)
    history: list[EvalReport] = []

    pool = ThreadPoolExecutor(max_workers) if max_workers > 1 else None
    try:
        for r in range(cfg.rounds):
            def work(c, w_t=w, r=r):
                return c.client_id, encode_update(local_update(c, w_t, cfg, r, model_cfg))

            results = list(pool.map(work, clients)) if pool else [work(c) for c in clients]
            updates = [
                decode_update(buf, expect_client=cid, expect_round=r,
                              expect_n_samples=registry[cid], expect_len=w.size)
                for cid, buf in sorted(results)
            ]
            w = aggregate(updates)
            state.params, state.round = w, r + 1

            report = evaluate(w, model_cfg, eval_sets, round=r)
            history.append(report)
            sel = report if select_sets is None else evaluate(w, model_cfg, select_sets, round=r)
            if sel.global_auc is not None and (state.best_auc is None or sel.global_auc > state.best_auc):
                state.best_auc, state.best_params, state.best_round = sel.global_auc, w.copy(), r
            state.best_auc_trace.append(state.best_auc)
    finally:
        if pool:
            pool.shutdown()

    if state.best_params is None:
        # AUC never defined on the selection split: keep the final model
        state.best_params, state.best_round = w.copy(), cfg.rounds - 1
    return state, history


def run_federated(
    cfg: FedConfig,
    clients: list[ClientState],
    eval_sets: Cohort,
    model_cfg: DenseNetConfig,
    select_sets: Cohort | None = None,
    init: ParamVector | None = None,
    max_workers: int = 1,
) -> tuple[GlobalModelState, list[EvalReport]]:
    """Run ``cfg.rounds`` communication rounds with full participation.

    ``history`` holds the global model's report on ``eval_sets`` after every
    round. Checkpoints are chosen on ``select_sets`` when given, otherwise on
    ``eval_sets``; a new best needs a strictly higher pooled AUC.
    """
    return _run_rounds(cfg, clients, eval_sets, model_cfg, select_sets, init, max_workers)


def run_centralized(
    cfg: FedConfig,
    data: tuple[np.ndarray, np.ndarray],
    eval_sets: Cohort,
    model_cfg: DenseNetConfig,
    select_sets: Cohort | None = None,
    init: ParamVector | None = None,
) -> tuple[GlobalModelState, list[EvalReport]]:
    """Pooled-data baseline: the same training loop with one client holding everything.

    Training runs ``rounds * local_epochs`` epochs and evaluates every
    ``local_epochs`` epochs, so the schedule, the shuffling stream and the
    checkpoint rule match a one-client federation exactly.
    """
    X, y = data
    if len(y) == 0:
        raise EmptyInputError("centralized baseline needs data")
    client = ClientState(0, np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64),
                         RngStream(cfg.seed, "shuffle", 0))
    return _run_rounds(cfg, [client], eval_sets, model_cfg, select_sets, init, 1)
