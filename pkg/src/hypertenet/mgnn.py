"""Multi-view GNN: entity embedding tables, per-type GCN stacks, pairwise link score."""

from __future__ import annotations

from typing import Mapping

from . import autodiff as ad
from .autodiff import Tensor
from .knn import KnnAdjacency
from .params import ParameterStore

ENTITIES = ("user", "item", "list")
TABLES = {"user": "embed.P", "item": "embed.Q", "list": "embed.T"}


def init_embeddings(store: ParameterStore, n_users: int, n_items: int, n_lists: int, dim: int) -> None:
    # row j of a table is the column p_j / q_j / t_j
    for entity, n in zip(ENTITIES, (n_users, n_items, n_lists)):
        store.uniform(TABLES[entity], (n, dim), dim)


def init_mgnn(store: ParameterStore, dim: int, layers: int = 2) -> None:
    for entity in ENTITIES:
        for k in range(layers):
            store.uniform(f"mgnn.{entity}.layer{k}.weight", (dim, dim), dim)
            store.zeros(f"mgnn.{entity}.layer{k}.bias", (dim,))


def gcn_layer(h: Tensor, adj: KnnAdjacency, weight: Tensor, bias: Tensor) -> Tensor:
    """One convolution: each row becomes the adjacency-weighted sum of transformed neighbour rows.

    Rows of the adjacency sum to one, so aggregating first and then applying
    the affine map is the same as transforming every neighbour.
    """
    return ad.matmul(ad.neighbor_aggregate(h, adj.neighbors, adj.weights), weight) + bias


def gcn_forward(
    store: ParameterStore,
    adjacency: Mapping[str, KnnAdjacency],
    layers: int = 2,
    entities=ENTITIES,
) -> dict[str, Tensor]:
    """Full-table GCN outputs per entity type; ReLU between layers, none after the last."""
    out = {}
    for entity in entities:
        h = store[TABLES[entity]]
        adj = adjacency[entity]
        if adj.n != h.shape[0]:
            raise ad.ContractError(f"{entity}: adjacency has {adj.n} rows, table has {h.shape[0]}")
        for k in range(layers):
            if k:
                h = ad.relu(h)
            h = gcn_layer(h, adj, store[f"mgnn.{entity}.layer{k}.weight"], store[f"mgnn.{entity}.layer{k}.bias"])
        out[entity] = h
    return out


def plain_tables(store: ParameterStore) -> dict[str, Tensor]:
    return {e: store[TABLES[e]] for e in ENTITIES}


def mgnn_logit(p: Tensor, q: Tensor, t: Tensor) -> Tensor:
    """Sum of the three pairwise inner products, row-wise over a batch of (B, d) inputs."""
    return ad.sum_(ad.mul(p, q) + ad.mul(q, t) + ad.mul(t, p), axis=-1)


def mgnn_score(p: Tensor, q: Tensor, t: Tensor) -> Tensor:
    return ad.sigmoid(mgnn_logit(p, q, t))
