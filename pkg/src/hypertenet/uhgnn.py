"""Hyperlink prediction on the 3-uniform user/item/list hypergraph.

Each candidate hyperedge (u, i, l) is a group of three node feature
vectors. A static embedding depends on the node alone; a dynamic one
attends over the other two nodes of the group. The squared gap between
them, scored per node and averaged, gives the hyperedge probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParameterStore


@dataclass
class UhgnnTrace:
    static: Tensor  # (B, 3, dh)
    dynamic: Tensor  # (B, 3, dh)
    energy: Tensor  # (B, H, 3, 3)
    alpha: Tensor  # (B, H, 3, 3)
    node_prob: Tensor  # (B, 3)
    score: Tensor  # (B,)


def init_uhgnn(store: ParameterStore, dim: int, hidden: int = 64, heads: int = 8) -> None:
    if hidden % heads:
        raise ValueError(f"heads ({heads}) must divide hidden size ({hidden})")
    dk = hidden // heads
    store.uniform("uhgnn.static.weight", (dim, hidden), dim)
    store.zeros("uhgnn.static.bias", (hidden,))
    for h in range(heads):
        for part in ("q", "k", "v"):
            store.uniform(f"uhgnn.head{h}.{part}.weight", (dim, dk), dim)
            store.zeros(f"uhgnn.head{h}.{part}.bias", (dk,))
    store.uniform("uhgnn.combine.weight", (hidden, hidden), hidden)
    store.zeros("uhgnn.combine.bias", (hidden,))
    store.uniform("uhgnn.score.weight", (hidden, 1), hidden)
    store.zeros("uhgnn.score.bias", (1,))


def n_heads(store: ParameterStore) -> int:
    h = 0
    while f"uhgnn.head{h}.q.weight" in store:
        h += 1
    return h


def static_embed(v: Tensor, store: ParameterStore) -> Tensor:
    """Position-wise tanh layer; applies to any (..., d) input independently per node."""
    return ad.tanh(ad.matmul(v, store["uhgnn.static.weight"]) + store["uhgnn.static.bias"])


def _stacked(store: ParameterStore, part: str, heads: int) -> tuple[Tensor, Tensor]:
    w = ad.concat([store[f"uhgnn.head{h}.{part}.weight"] for h in range(heads)], axis=1)
    b = ad.concat([store[f"uhgnn.head{h}.{part}.bias"] for h in range(heads)], axis=0)
    return w, b


def dynamic_embed(v: Tensor, store: ParameterStore, exclude_self_in_softmax: bool = False):
    """Multi-head attention inside each triple; returns (dynamic, energy, alpha).

    The softmax normaliser runs over all three nodes including the node
    itself, but the weighted sum that forms node j's embedding skips j.
    ``exclude_self_in_softmax`` drops the self energy from the normaliser too.
    """
    heads = n_heads(store)
    B, n, _ = v.shape
    hidden = store["uhgnn.combine.weight"].shape[0]
    dk = hidden // heads

    def project(part):
        w, b = _stacked(store, part, heads)
        x = ad.matmul(v, w) + b  # (B, 3, hidden)
        return ad.transpose(ad.reshape(x, (B, n, heads, dk)), (0, 2, 1, 3))  # (B, H, 3, dk)

    q, k, val = project("q"), project("k"), project("v")
    energy = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))  # (B, H, 3, 3)
    eye = np.eye(n, dtype=bool)
    logits = ad.masked_fill(energy, eye, -1e9) if exclude_self_in_softmax else energy
    alpha = ad.softmax(logits, axis=-1)
    off_diag = ad.mul(alpha, ad.Tensor._wrap((~eye).astype(alpha.dtype)))
    mixed = ad.matmul(off_diag, val)  # (B, H, 3, dk)
    mixed = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (B, n, hidden))
    dynamic = ad.tanh(ad.matmul(mixed, store["uhgnn.combine.weight"]) + store["uhgnn.combine.bias"])
    return dynamic, energy, alpha


def hyperlink_score(static: Tensor, dynamic: Tensor, store: ParameterStore) -> tuple[Tensor, Tensor]:
    """Per-node probabilities from the squared static/dynamic gap, and their mean."""
    gap = ad.square(dynamic - static)
    logit = ad.matmul(gap, store["uhgnn.score.weight"]) + store["uhgnn.score.bias"]  # (B, 3, 1)
    node_prob = ad.sigmoid(ad.reshape(logit, logit.shape[:-1]))
    return node_prob, ad.mean(node_prob, axis=-1)


def uhgnn_forward(v: Tensor, store: ParameterStore, exclude_self_in_softmax: bool = False) -> UhgnnTrace:
    """Score a batch of candidate hyperedges given node features ``v`` of shape (B, 3, d)."""
    if v.ndim != 3 or v.shape[1] != 3:
        raise ad.DimensionError(f"uhgnn: expected (B, 3, d) node features, got {v.shape}")
    static = static_embed(v, store)
    dynamic, energy, alpha = dynamic_embed(v, store, exclude_self_in_softmax)
    node_prob, score = hyperlink_score(static, dynamic, store)
    return UhgnnTrace(static, dynamic, energy, alpha, node_prob, score)


def stack_triple(p: Tensor, q: Tensor, t: Tensor) -> Tensor:
    """(B, d) x3 -> (B, 3, d) in (user, item, list) order."""
    B, d = p.shape
    return ad.concat([ad.reshape(p, (B, 1, d)), ad.reshape(q, (B, 1, d)), ad.reshape(t, (B, 1, d))], axis=1)


def combined_score(y_mgnn: Tensor, y_hgnn: Tensor) -> Tensor:
    return ad.scale(y_mgnn + y_hgnn, 0.5)


def graph_loss(scores: Tensor, labels) -> Tensor:
    """Summed cross entropy over positive (label 1) and negative (label 0) triples."""
    if scores.data.size == 0:
        raise ad.ContractError("graph_loss: empty batch")
    return ad.binary_cross_entropy(scores, labels)
