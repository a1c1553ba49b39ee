"""Alternating optimisation of the graph loss and the sequence loss, with early stopping."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import NumericError
from .config import TrainConfig
from .data import SplitCorpus, make_sequence_batches, sample_negative_triples
from .knn import KnnAdjacency
from .metrics import MetricsReport, evaluate_model
from .model import HyperTeNet
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    loss_graph: float | None
    loss_ssn: float
    hr: float
    ndcg: float
    map: float
    seconds: float = 0.0

    def as_log_line(self) -> str:
        # wall time is kept out of the persisted log so reruns are byte-identical
        d = dataclasses.asdict(self)
        d.pop("seconds")
        return json.dumps(d, sort_keys=True)


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_ndcg: float = -1.0
    stopped_early: bool = False

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(r.as_log_line() + "\n" for r in self.epochs), encoding="utf-8")

    def write_timing(self, path: str | Path) -> None:
        Path(path).write_text(
            "".join(json.dumps({"epoch": r.epoch, "seconds": round(r.seconds, 4)}) + "\n" for r in self.epochs),
            encoding="utf-8",
        )


class EarlyStopping:
    """Tracks the best validation score; ``step`` returns True once patience runs out."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0

    def step(self, epoch: int, score: float) -> bool:
        if score > self.best:
            self.best = score
            self.best_epoch = epoch
        return epoch - self.best_epoch >= self.patience


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, stream])


def graph_epoch(model: HyperTeNet, split: SplitCorpus, state: AdamState, epoch: int) -> float:
    """One pass over positives plus freshly drawn negatives, minimising the graph loss."""
    c = model.config
    rng = _epoch_rng(c.seed, epoch, 0)
    pos = split.positive_triples()
    neg = sample_negative_triples(split.index, pos, c.graph_negatives, rng, exclude=split.train)
    triples = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    order = rng.permutation(len(triples))
    params = model.graph_params()
    total = 0.0
    for s in range(0, len(order), c.graph_batch):
        idx = order[s:s + c.graph_batch]
        loss = model.graph_loss(triples[idx], labels[idx])
        loss.backward()
        adam_step(params, state, allow_missing=True)
        total += loss.item()
    return total


def ssn_epoch(model: HyperTeNet, split: SplitCorpus, state: AdamState, epoch: int) -> float:
    c = model.config
    rng = _epoch_rng(c.seed, epoch, 1)
    drop_rng = _epoch_rng(c.seed, epoch, 2)
    params = model.ssn_params()
    total = 0.0
    for batch in make_sequence_batches(split, c.max_len, c.ssn_batch, c.ssn_negatives, rng):
        if not batch.target_mask.any():
            continue
        loss = model.ssn_loss(batch, train=True, rng=drop_rng)
        loss.backward()
        adam_step(params, state, allow_missing=True)
        total += loss.item()
    return total


def evaluate(model: HyperTeNet, split: SplitCorpus, phase: str = "valid") -> MetricsReport:
    report = evaluate_model(model.score_candidates, split, phase, model.config.eval_k)
    report.seed = model.config.seed
    return report


def train(
    split: SplitCorpus,
    adjacency: Mapping[str, KnnAdjacency],
    config: TrainConfig,
    model: HyperTeNet | None = None,
    log_path: str | Path | None = None,
) -> tuple[HyperTeNet, TrainLog]:
    """Alternate graph and sequence epochs, keep the best-validation-NDCG parameters.

    Phase A (skipped with ``ssn_only``) updates embeddings, GCN and hypergraph
    weights on the graph loss; phase B updates the sequence network and,
    since it consumes the GCN outputs, the shared tables and GCN weights too.
    """
    config.validate()
    ix = split.index
    if model is None:
        model = HyperTeNet(ix.n_users, ix.n_items, ix.n_lists, adjacency, config)
    state_graph = AdamState(lr=config.lr)
    state_ssn = AdamState(lr=config.lr)
    stopper = EarlyStopping(config.patience)
    tlog = TrainLog()
    best = model.store.snapshot()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        try:
            loss_g = None if config.ssn_only else graph_epoch(model, split, state_graph, epoch)
            loss_s = ssn_epoch(model, split, state_ssn, epoch)
            report = evaluate(model, split, "valid")
        except NumericError as e:
            model.store.restore(best)
            raise TrainingDiverged(
                f"non-finite values at epoch {epoch} ({e}); last good epoch {stopper.best_epoch}"
            ) from e
        rec = EpochRecord(epoch, loss_g, loss_s, report.hr, report.ndcg, report.map, time.perf_counter() - t0)
        tlog.epochs.append(rec)
        log.info(
            "epoch %d  L_P=%s  L_SSN=%.4f  valid %s",
            epoch, "-" if loss_g is None else f"{loss_g:.4f}", loss_s, report.summary(),
        )
        if report.ndcg > stopper.best:
            best = model.store.snapshot()
        stop = stopper.step(epoch, report.ndcg)
        if log_path is not None:
            tlog.write(log_path)
        if stop:
            tlog.stopped_early = True
            break
    model.store.restore(best)
    tlog.best_epoch = stopper.best_epoch
    tlog.best_ndcg = float(stopper.best)
    return model, tlog


VARIANTS = {
    "ssn_only": {"ssn_only": True},
    "mgnn_ssn": {"disable_uhgnn": True},
    "hypertenet": {},
    "plain_feed": {"disable_mgnn_feed": True},
}


def variant_config(config: TrainConfig, variant: str) -> TrainConfig:
    base = dataclasses.replace(config, ssn_only=False, disable_uhgnn=False, disable_mgnn_feed=False)
    return dataclasses.replace(base, **VARIANTS[variant])


def ablation_suite(
    split: SplitCorpus,
    adjacency: Mapping[str, KnnAdjacency],
    config: TrainConfig,
    variants=tuple(VARIANTS),
) -> dict[str, MetricsReport]:
    """Train each variant from the same seed and report its test metrics."""
    reports = {}
    for name in variants:
        cfg = variant_config(config, name)
        model, _ = train(split, adjacency, cfg)
        reports[name] = evaluate(model, split, "test")
    return reports
