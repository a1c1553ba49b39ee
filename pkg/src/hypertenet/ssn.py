"""Self-attention sequence network over list item sequences.

Inputs are the combined user + list + item + position rows of a
left-padded list prefix. Pre-norm Transformer blocks with a causal mask
turn row t into a predicted embedding for the item at t+1, which is
scored against item embeddings by a sigmoid of the inner product.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParameterStore


def init_ssn(store: ParameterStore, dim: int, max_len: int = 300, blocks: int = 2) -> None:
    store.uniform("ssn.pos", (max_len, dim), dim)
    for b in range(blocks):
        pre = f"ssn.block{b}"
        for name in ("attn.q", "attn.k", "attn.v", "ff1", "ff2"):
            store.uniform(f"{pre}.{name}.weight", (dim, dim), dim)
            store.zeros(f"{pre}.{name}.bias", (dim,))
        for ln in ("ln1", "ln2"):
            store.ones(f"{pre}.{ln}.gain", (dim,))
            store.zeros(f"{pre}.{ln}.bias", (dim,))
    store.ones("ssn.ln_final.gain", (dim,))
    store.zeros("ssn.ln_final.bias", (dim,))


def n_blocks(store: ParameterStore) -> int:
    b = 0
    while f"ssn.block{b}.attn.q.weight" in store:
        b += 1
    return b


def combine_representations(
    q_table: Tensor,
    p_rows: Tensor,
    t_rows: Tensor,
    pos_table: Tensor,
    items: np.ndarray,
    positions: np.ndarray,
    valid: np.ndarray,
) -> Tensor:
    """Rows ``q'_item + p'_u + t'_l + rho_position``; padding rows are zeroed.

    ``p_rows``/``t_rows`` are (B, d) per-sequence user/list vectors,
    ``items``/``positions``/``valid`` are (B, L).
    """
    B, L = items.shape
    if positions.size and positions.max() >= pos_table.shape[0]:
        raise ad.ContractError(
            f"sequence position {positions.max()} exceeds max length {pos_table.shape[0]}; truncate first"
        )
    d = q_table.shape[-1]
    q = ad.embedding(q_table, np.where(valid, items, 0))
    ctx = ad.reshape(p_rows + t_rows, (B, 1, d))
    rows = q + ctx + ad.embedding(pos_table, positions)
    return ad.mul(rows, Tensor._wrap(valid[:, :, None].astype(rows.dtype)))


def attention_mask(valid: np.ndarray) -> np.ndarray:
    """True where query i may NOT look at key j: future positions and padding keys."""
    L = valid.shape[1]
    future = np.triu(np.ones((L, L), dtype=bool), k=1)
    return future[None, :, :] | ~valid[:, None, :]


def _affine_norm(x: Tensor, store: ParameterStore, name: str) -> Tensor:
    return ad.mul(ad.layer_norm(x, axis=-1), store[f"{name}.gain"]) + store[f"{name}.bias"]


def _linear(x: Tensor, store: ParameterStore, name: str) -> Tensor:
    return ad.matmul(x, store[f"{name}.weight"]) + store[f"{name}.bias"]


def _split_heads(t: Tensor, heads: int) -> Tensor:
    B, L, d = t.shape
    return ad.transpose(ad.reshape(t, (B, L, heads, d // heads)), (0, 2, 1, 3))


def attention_weights(x: Tensor, store: ParameterStore, pre: str, mask: np.ndarray, heads: int = 1) -> tuple[Tensor, Tensor]:
    """(softmax weights, value rows); weights are (B, L, L) or (B, H, L, L) with masked keys at zero."""
    q, k, v = (_linear(x, store, f"{pre}.attn.{p}") for p in "qkv")
    if heads > 1:
        q, k, v = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
        mask = mask[:, None, :, :]
    axes = tuple(range(q.ndim - 2)) + (q.ndim - 1, q.ndim - 2)
    scores = ad.scale(ad.matmul(q, ad.transpose(k, axes)), 1.0 / np.sqrt(q.shape[-1]))
    return ad.softmax(ad.masked_fill(scores, mask, -1e9), axis=-1), v


def self_attention(x: Tensor, store: ParameterStore, pre: str, mask: np.ndarray, heads: int = 1) -> Tensor:
    B, L, d = x.shape
    weights, v = attention_weights(x, store, pre, mask, heads)
    out = ad.matmul(weights, v)
    if heads > 1:
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, L, d))
    return out


def feed_forward(x: Tensor, store: ParameterStore, pre: str) -> Tensor:
    return _linear(ad.relu(_linear(x, store, f"{pre}.ff1")), store, f"{pre}.ff2")


def transformer_block(
    x: Tensor,
    store: ParameterStore,
    b: int,
    mask: np.ndarray,
    dropout: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
    heads: int = 1,
) -> Tensor:
    """x + Dropout(SA(LN(x))), then the same wrapper around the row-wise feed-forward."""
    pre = f"ssn.block{b}"
    h = self_attention(_affine_norm(x, store, f"{pre}.ln1"), store, pre, mask, heads)
    x = x + ad.dropout(h, dropout, train, rng)
    h = feed_forward(_affine_norm(x, store, f"{pre}.ln2"), store, pre)
    return x + ad.dropout(h, dropout, train, rng)


def ssn_forward(
    combined: Tensor,
    valid: np.ndarray,
    store: ParameterStore,
    dropout: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
    heads: int = 1,
    final_norm: bool = True,
) -> Tensor:
    """Predicted next-item embeddings for every position, shape (B, L, d)."""
    mask = attention_mask(valid)
    x = combined
    for b in range(n_blocks(store)):
        x = transformer_block(x, store, b, mask, dropout, train, rng, heads)
    if final_norm:
        x = _affine_norm(x, store, "ssn.ln_final")
    return x


def relevance_logits(pred: Tensor, item_rows: Tensor) -> Tensor:
    """Inner products of predictions (..., d) with candidate rows (..., C, d) -> (..., C)."""
    return ad.sum_(ad.mul(item_rows, ad.reshape(pred, pred.shape[:-1] + (1, pred.shape[-1]))), axis=-1)


def relevance_scores(pred: Tensor, candidates: np.ndarray, q_table: Tensor) -> Tensor:
    cand = np.asarray(candidates)
    if cand.size and (cand.min() < 0 or cand.max() >= q_table.shape[0]):
        raise ad.ContractError("relevance_scores: unknown item index")
    return ad.sigmoid(relevance_logits(pred, ad.embedding(q_table, cand)))


def ssn_loss(
    pred: Tensor,
    q_table: Tensor,
    targets: np.ndarray,
    negatives: np.ndarray,
    target_mask: np.ndarray,
) -> Tensor:
    """Summed BCE of next-item positives and sampled negatives over masked-in positions."""
    if not target_mask.any():
        raise ad.ContractError("ssn_loss: batch has no valid positions")
    cand = np.concatenate([np.where(target_mask, targets, 0)[..., None], negatives], axis=-1)  # (B, L, 1+m)
    probs = relevance_scores(pred, cand, q_table)
    labels = np.zeros(cand.shape)
    labels[..., 0] = 1.0
    weights = np.broadcast_to(target_mask[..., None], cand.shape)
    return ad.binary_cross_entropy(probs, labels, weights)


def last_position(pred: Tensor) -> Tensor:
    """Output row of the final slot; with left padding it belongs to the newest item."""
    B, L, d = pred.shape
    sel = np.zeros((B, 1, L))
    sel[:, 0, -1] = 1.0
    return ad.reshape(ad.matmul(Tensor._wrap(sel.astype(pred.dtype)), pred), (B, d))

