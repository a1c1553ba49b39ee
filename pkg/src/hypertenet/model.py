"""HyperTeNet: wiring of the graph networks and the sequence network over shared tables."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import mgnn, ssn, uhgnn
from .autodiff import Tensor
from .config import TrainConfig
from .data import SequenceBatch, left_pad
from .knn import KnnAdjacency
from .params import ParameterStore

GRAPH_PREFIXES = ("embed.", "mgnn.", "uhgnn.")


class HyperTeNet:
    def __init__(
        self,
        n_users: int,
        n_items: int,
        n_lists: int,
        adjacency: Mapping[str, KnnAdjacency],
        config: TrainConfig,
        store: ParameterStore | None = None,
    ):
        self.config = config
        self.adjacency = dict(adjacency)
        self.sizes = (n_users, n_items, n_lists)
        for entity, n in zip(mgnn.ENTITIES, self.sizes):
            if self.adjacency[entity].n != n:
                raise ValueError(f"{entity} adjacency has {self.adjacency[entity].n} rows, expected {n}")
        if store is None:
            store = ParameterStore(np.random.default_rng(config.seed))
            c = config
            mgnn.init_embeddings(store, n_users, n_items, n_lists, c.dim)
            mgnn.init_mgnn(store, c.dim, c.gcn_layers)
            uhgnn.init_uhgnn(store, c.dim, c.hidden, c.heads)
            ssn.init_ssn(store, c.dim, c.max_len, c.blocks)
        self.store = store

    # parameter groups ------------------------------------------------------

    def graph_params(self) -> dict[str, Tensor]:
        prefixes = ("embed.", "mgnn.") if self.config.disable_uhgnn else GRAPH_PREFIXES
        return self.store.select(prefixes)

    def ssn_params(self) -> dict[str, Tensor]:
        c = self.config
        prefixes: tuple[str, ...] = ("ssn.", "embed.")
        if not c.disable_mgnn_feed and not c.freeze_graph_in_ssn:
            prefixes += ("mgnn.",)
        if c.freeze_graph_in_ssn:
            prefixes = ("ssn.",)
        return self.store.select(prefixes)

    # representations -------------------------------------------------------

    def gcn_tables(self) -> dict[str, Tensor]:
        return mgnn.gcn_forward(self.store, self.adjacency, self.config.gcn_layers)

    def feed_tables(self, gcn: dict[str, Tensor] | None = None) -> dict[str, Tensor]:
        """Tables consumed by the hypergraph and sequence networks."""
        if self.config.disable_mgnn_feed:
            return mgnn.plain_tables(self.store)
        return gcn if gcn is not None else self.gcn_tables()

    # graph side ------------------------------------------------------------

    def graph_scores(self, triples: np.ndarray) -> tuple[Tensor, Tensor, uhgnn.UhgnnTrace | None]:
        """(combined score, mgnn score, uhgnn trace) for (user, item, list) rows."""
        triples = np.asarray(triples, dtype=np.int64)
        gcn = self.gcn_tables()
        u, i, l = triples[:, 0], triples[:, 1], triples[:, 2]
        y_mgnn = mgnn.mgnn_score(
            ad.embedding(gcn["user"], u), ad.embedding(gcn["item"], i), ad.embedding(gcn["list"], l)
        )
        if self.config.disable_uhgnn:
            return y_mgnn, y_mgnn, None
        feed = self.feed_tables(gcn)
        v = uhgnn.stack_triple(
            ad.embedding(feed["user"], u), ad.embedding(feed["item"], i), ad.embedding(feed["list"], l)
        )
        trace = uhgnn.uhgnn_forward(v, self.store, self.config.exclude_self_in_softmax)
        return uhgnn.combined_score(y_mgnn, trace.score), y_mgnn, trace

    def graph_loss(self, triples: np.ndarray, labels: np.ndarray) -> Tensor:
        y, _, _ = self.graph_scores(triples)
        return uhgnn.graph_loss(y, labels)

    # sequence side ---------------------------------------------------------

    def sequence_outputs(
        self,
        feed: dict[str, Tensor],
        users: np.ndarray,
        lists: np.ndarray,
        items: np.ndarray,
        positions: np.ndarray,
        valid: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        c = self.config
        combined = ssn.combine_representations(
            feed["item"],
            ad.embedding(feed["user"], users),
            ad.embedding(feed["list"], lists),
            self.store["ssn.pos"],
            items,
            positions,
            valid,
        )
        return ssn.ssn_forward(
            combined, valid, self.store, c.dropout, train, rng, c.ssn_heads, c.final_norm
        )

    def ssn_loss(self, batch: SequenceBatch, train: bool = True, rng: np.random.Generator | None = None) -> Tensor:
        feed = self.feed_tables()
        pred = self.sequence_outputs(
            feed, batch.users, batch.lists, batch.items, batch.positions, batch.valid, train, rng
        )
        return ssn.ssn_loss(pred, feed["item"], batch.targets, batch.negatives, batch.target_mask)

    # inference -------------------------------------------------------------

    def predict_embeddings(self, users: np.ndarray, lists: np.ndarray, histories: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """(predicted next-item vectors (B, d), item table (n_items, d)) with frozen parameters."""
        if any(len(h) == 0 for h in histories):
            raise ValueError("cold start: cannot continue an empty list")
        with ad.no_grad():
            feed = self.feed_tables()
            items, positions, valid = left_pad(histories, self.config.max_len)
            pred = self.sequence_outputs(feed, np.asarray(users), np.asarray(lists), items, positions, valid)
            return ssn.last_position(pred).data, feed["item"].data

    def score_candidates(
        self,
        users: np.ndarray,
        lists: np.ndarray,
        histories: Sequence[np.ndarray],
        candidates: np.ndarray,
        batch_size: int = 512,
    ) -> np.ndarray:
        """Raw relevance logits (B, C) of each candidate as the next item of each list.

        Ranking uses logits rather than sigmoid outputs, which saturate to
        ties in 32-bit; the order is the same since the sigmoid is monotone.
        """
        out = []
        for s in range(0, len(lists), batch_size):
            sl = slice(s, s + batch_size)
            pred, table = self.predict_embeddings(users[sl], lists[sl], histories[sl])
            cand = candidates[sl]
            if cand.size and (cand.min() < 0 or cand.max() >= table.shape[0]):
                raise ad.ContractError("score_candidates: unknown item index")
            out.append(np.einsum("bd,bcd->bc", pred.astype(np.float64), table[cand].astype(np.float64)))
        return np.concatenate(out) if out else np.empty((0, candidates.shape[1]))

    def predict_next(self, user: int, lst: int, history: np.ndarray, candidates: np.ndarray) -> list[tuple[int, float]]:
        """(item, relevance) pairs best first; ties go to the lower item index."""
        candidates = np.asarray(candidates, dtype=np.int64)
        if candidates.size == 0:
            raise ValueError("empty candidate set")
        logits = self.score_candidates(
            np.array([user]), np.array([lst]), [np.asarray(history)], candidates[None, :]
        )[0]
        order = np.lexsort((candidates, -logits))
        r = 1.0 / (1.0 + np.exp(-logits))
        return [(int(candidates[j]), float(r[j])) for j in order]
