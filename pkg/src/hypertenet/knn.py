"""Same-type neighbour graphs from walk-trained node embeddings.

bipartite interaction graph -> uniform random walks -> skip-gram with
negative sampling -> cosine top-K adjacency with a self loop.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import scatter_rows
from .data import CorpusIndex

log = logging.getLogger(__name__)

KINDS = ("user-item", "list-item")


@dataclass
class BipartiteGraph:
    kind: str
    n_left: int
    n_right: int
    # CSR over tokens: left node j is token j, right node i is token n_left + i
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_left + self.n_right

    def neighbors(self, token: int) -> np.ndarray:
        return self.indices[self.indptr[token]:self.indptr[token + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edges(self) -> set[tuple[int, int]]:
        """(left, right) index pairs."""
        return {(j, int(t) - self.n_left) for j in range(self.n_left) for t in self.neighbors(j)}


def build_bipartite(index: CorpusIndex, kind: str, lists: Sequence[np.ndarray] | None = None) -> BipartiteGraph:
    """User-item or list-item graph; ``lists`` overrides the item sequences (e.g. train prefixes)."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    seqs = index.items_of_list if lists is None else lists
    if kind == "list-item":
        n_left = index.n_lists
        left = np.concatenate([np.full(len(s), l) for l, s in enumerate(seqs)])
    else:
        n_left = index.n_users
        left = np.concatenate([np.full(len(s), index.user_of_list[l]) for l, s in enumerate(seqs)])
    right = np.concatenate(seqs).astype(np.int64) + n_left
    left = left.astype(np.int64)
    n = n_left + index.n_items
    pairs = np.unique(np.stack([np.concatenate([left, right]), np.concatenate([right, left])], axis=1), axis=0)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, pairs[:, 0] + 1, 1)
    return BipartiteGraph(kind, n_left, index.n_items, np.cumsum(indptr), pairs[:, 1].copy())


@dataclass
class WalkCorpus:
    walks: np.ndarray  # (n_walks, walk_length) tokens, -1 after an isolated start
    n_left: int
    n_right: int
    walks_per_node: int
    walk_length: int

    @property
    def n_tokens(self) -> int:
        return self.n_left + self.n_right


def random_walks(graph: BipartiteGraph, walks_per_node: int = 10, walk_length: int = 80, seed: int = 0) -> WalkCorpus:
    """``walks_per_node`` uniform walks from every node, all advanced together one hop at a time."""
    if walk_length < 2:
        raise ValueError("walk_length must be >= 2")
    rng = np.random.default_rng(seed)
    deg = graph.degree()
    isolated = np.flatnonzero(deg == 0)
    if len(isolated):
        log.warning("%s graph: %d isolated nodes get length-1 walks", graph.kind, len(isolated))
    starts = np.tile(np.arange(graph.n_nodes), walks_per_node)
    walks = np.full((len(starts), walk_length), -1, dtype=np.int64)
    walks[:, 0] = starts
    alive = deg[starts] > 0
    cur = starts.copy()
    for step in range(1, walk_length):
        r = rng.random(len(cur))
        hop = graph.indptr[cur] + np.minimum((r * deg[cur]).astype(np.int64), np.maximum(deg[cur] - 1, 0))
        nxt = np.where(alive, graph.indices[np.minimum(hop, len(graph.indices) - 1)], -1)
        walks[:, step] = nxt
        cur = np.where(alive, nxt, cur)
    # group walks by start node
    order = np.argsort(starts, kind="stable")
    return WalkCorpus(walks[order], graph.n_left, graph.n_right, walks_per_node, walk_length)


def _skipgram_pairs(walks: np.ndarray, window: int) -> np.ndarray:
    pairs = []
    for off in range(1, window + 1):
        a, b = walks[:, :-off].reshape(-1), walks[:, off:].reshape(-1)
        ok = (a >= 0) & (b >= 0)
        pairs.append(np.stack([a[ok], b[ok]], axis=1))
        pairs.append(np.stack([b[ok], a[ok]], axis=1))
    return np.concatenate(pairs)


def train_skipgram(
    corpus: WalkCorpus,
    dim: int = 64,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 1,
    seed: int = 0,
    lr: float = 0.025,
    batch_size: int = 2048,
) -> np.ndarray:
    """Skip-gram with negative sampling over walk tokens; returns one ``dim`` row per token.

    Noise tokens come from the unigram distribution raised to 0.75 and the
    learning rate decays linearly to ``lr * 1e-3`` over all updates.
    """
    rng = np.random.default_rng(seed)
    n = corpus.n_tokens
    w_in = (rng.random((n, dim)) - 0.5) / dim
    w_out = np.zeros((n, dim))
    if epochs <= 0:
        return w_in
    pairs = _skipgram_pairs(corpus.walks, window)
    if len(pairs) == 0:
        raise ValueError("walk corpus produced no skip-gram pairs")
    counts = np.bincount(corpus.walks[corpus.walks >= 0], minlength=n).astype(float)
    noise = counts**0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    total = epochs * ((len(pairs) + batch_size - 1) // batch_size)
    step = 0
    for _ in range(epochs):
        perm = rng.permutation(len(pairs))
        for s in range(0, len(pairs), batch_size):
            alpha = lr * max(1e-3, 1.0 - step / total)
            step += 1
            batch = pairs[perm[s:s + batch_size]]
            centre, ctx = batch[:, 0], batch[:, 1]
            neg = np.searchsorted(noise_cdf, rng.random((len(batch), negatives)), side="right")
            neg = np.minimum(neg, n - 1)
            targets = np.concatenate([ctx[:, None], neg], axis=1)  # (B, 1+neg)
            labels = np.zeros(targets.shape)
            labels[:, 0] = 1.0
            v = w_in[centre]  # (B, d)
            u = w_out[targets]  # (B, 1+neg, d)
            score = np.einsum("bd,bkd->bk", v, u)
            # gradient ascent on label*log s(x) + (1-label)*log s(-x)
            g = alpha * (labels - 1.0 / (1.0 + np.exp(-np.clip(score, -30, 30))))
            w_in += scatter_rows(n, centre, np.einsum("bk,bkd->bd", g, u))
            w_out += scatter_rows(n, targets, (g[:, :, None] * v[:, None, :]).reshape(-1, dim))
    return w_in


@dataclass
class KnnAdjacency:
    entity: str
    k: int
    # column 0 is the node itself; rows are normalised weights over neighbours + self
    neighbors: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    def dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        for r in range(self.n):
            np.add.at(m[r], self.neighbors[r], self.weights[r])
        return m


def build_knn_adjacency(embeddings: np.ndarray, entity: str, k: int, chunk: int = 1024) -> KnnAdjacency:
    """Exact cosine top-``k`` (self excluded, ties to the lower index) plus a self loop of weight 1.

    Neighbour weights are cosines clamped at zero; each row is then
    normalised to sum to one.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    emb = np.asarray(embeddings, dtype=np.float64)
    n = emb.shape[0]
    if k >= n:
        log.warning("%s K-NN: k=%d >= %d nodes, using all %d others", entity, k, n, n - 1)
        k = n - 1
    unit = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
    neighbors = np.empty((n, k + 1), dtype=np.int64)
    weights = np.empty((n, k + 1))
    for s in range(0, n, chunk):
        rows = np.arange(s, min(n, s + chunk))
        sim = unit[rows] @ unit.T
        sim[np.arange(len(rows)), rows] = -np.inf
        top = np.argsort(-sim, axis=1, kind="stable")[:, :k]
        neighbors[rows, 0] = rows
        neighbors[rows, 1:] = top
        weights[rows, 0] = 1.0
        weights[rows, 1:] = np.maximum(np.take_along_axis(sim, top, axis=1), 0.0)
    weights /= weights.sum(axis=1, keepdims=True)
    return KnnAdjacency(entity, k, neighbors, weights)


@dataclass
class KnnParams:
    k: int = 50
    walks_per_node: int = 10
    walk_length: int = 80
    window: int = 5
    negatives: int = 5
    epochs: int = 1
    dim: int = 64
    seed: int = 0


def build_knn_graphs(
    index: CorpusIndex, params: KnnParams, lists: Sequence[np.ndarray] | None = None
) -> dict[str, KnnAdjacency]:
    """User graph from user-item walks; item and list graphs from list-item walks."""
    out = {}
    for kind, seed_off in (("list-item", 0), ("user-item", 1)):
        g = build_bipartite(index, kind, lists)
        walks = random_walks(g, params.walks_per_node, params.walk_length, params.seed * 2 + seed_off)
        emb = train_skipgram(
            walks, params.dim, params.window, params.negatives, params.epochs, params.seed * 2 + seed_off
        )
        left, right = emb[: g.n_left], emb[g.n_left:]
        if kind == "list-item":
            out["list"] = build_knn_adjacency(left, "list", params.k)
            out["item"] = build_knn_adjacency(right, "item", params.k)
        else:
            out["user"] = build_knn_adjacency(left, "user", params.k)
    return out


# cache ---------------------------------------------------------------------


def cache_key(corpus_fingerprint: str, params: KnnParams) -> str:
    blob = json.dumps({"corpus": corpus_fingerprint, **params.__dict__}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_adjacency(path: str | os.PathLike, graphs: dict[str, KnnAdjacency], key: str) -> None:
    """Text cache: a ``# key`` header, then ``entity node neighbours weights`` per line."""
    lines = [f"# hypertenet-knn/1 key={key}\n"]
    for entity in ("user", "item", "list"):
        adj = graphs[entity]
        lines.append(f"# entity={entity} k={adj.k} n={adj.n}\n")
        for r in range(adj.n):
            nb = ",".join(str(int(x)) for x in adj.neighbors[r])
            w = ",".join(repr(float(x)) for x in adj.weights[r])
            lines.append(f"{entity}\t{r}\t{nb}\t{w}\n")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(lines), encoding="utf-8")
    os.replace(tmp, path)


def load_adjacency(path: str | os.PathLike, key: str | None = None) -> dict[str, KnnAdjacency]:
    rows: dict[str, list] = {}
    ks: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
        if not head.startswith("# hypertenet-knn/1"):
            raise ValueError(f"{path}: not a K-NN cache file")
        found = head.strip().split("key=")[-1]
        if key is not None and found != key:
            raise ValueError(f"{path}: cache key {found} does not match {key}")
        for line in fh:
            if line.startswith("# entity="):
                fields = dict(f.split("=") for f in line[2:].split())
                ks[fields["entity"]] = int(fields["k"])
                continue
            entity, _, nb, w = line.rstrip("\n").split("\t")
            rows.setdefault(entity, []).append(
                ([int(x) for x in nb.split(",")], [float(x) for x in w.split(",")])
            )
    return {
        e: KnnAdjacency(e, ks[e], np.array([r[0] for r in v]), np.array([r[1] for r in v]))
        for e, v in rows.items()
    }
