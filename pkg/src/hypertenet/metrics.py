"""Leave-one-out ranking metrics (HR@N, NDCG@N, MAP@N) with one relevant item per list."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import SplitCorpus


@dataclass
class RankedCandidates:
    user: int
    list: int
    order: np.ndarray  # candidate items, best first
    ground_truth: int
    rank: int  # 1-based


def rank_candidates(scores, items, ground_truth: int, user: int = -1, lst: int = -1) -> RankedCandidates:
    """Sort descending by score; equal scores go to the lower item index first."""
    scores = np.asarray(scores, dtype=np.float64)
    items = np.asarray(items, dtype=np.int64)
    hit = np.flatnonzero(items == ground_truth)
    if len(hit) == 0:
        raise ValueError(f"ground truth {ground_truth} is not among the candidates")
    order = np.lexsort((items, -scores))
    rank = int(np.flatnonzero(order == hit[0])[0]) + 1
    return RankedCandidates(user, lst, items[order], int(ground_truth), rank)


def ranks_of_ground_truth(scores: np.ndarray, items: np.ndarray, gt_col: int = 0) -> np.ndarray:
    """Vectorised rank of column ``gt_col`` per row under the same tie rule."""
    s_gt = scores[:, gt_col:gt_col + 1]
    i_gt = items[:, gt_col:gt_col + 1]
    ahead = (scores > s_gt) | ((scores == s_gt) & (items < i_gt))
    return ahead.sum(axis=1) + 1


def metrics_at_k(rank: int, n: int = 5) -> tuple[float, float, float]:
    """(hit, ndcg, average precision) at cutoff ``n`` for a single relevant item."""
    if rank > n:
        return 0.0, 0.0, 0.0
    return 1.0, 1.0 / math.log2(rank + 1), 1.0 / rank


@dataclass
class MetricsReport:
    n: int
    hr: float
    ndcg: float
    map: float
    pairs: list[dict] = field(default_factory=list)
    phase: str = "test"
    seed: int | None = None
    config_fingerprint: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))

    def summary(self) -> str:
        return f"HR@{self.n}={self.hr:.4f}  NDCG@{self.n}={self.ndcg:.4f}  MAP@{self.n}={self.map:.4f}"


ScoreFn = Callable[[np.ndarray, np.ndarray, list, np.ndarray], np.ndarray]


def evaluate_model(score_fn: ScoreFn, split: SplitCorpus, phase: str = "test", n: int = 5) -> MetricsReport:
    """Rank every list's frozen candidate set and average the per-list metrics.

    ``score_fn(users, lists, histories, candidates)`` returns a (B, C) score
    array; any strictly increasing transform of it gives the same report.
    """
    if phase not in split.candidates:
        raise ValueError(f"no candidate sets for phase {phase!r}")
    cands = split.candidates[phase]
    lists = np.arange(split.index.n_lists)
    users = split.index.user_of_list
    scores = np.asarray(score_fn(users, lists, split.history(phase), cands), dtype=np.float64)
    if scores.shape != cands.shape:
        raise ValueError(f"score_fn returned {scores.shape}, expected {cands.shape}")
    target = split.target(phase)
    if not np.all(cands[:, 0] == target):
        raise ValueError("candidate sets do not start with the ground truth")
    ranks = ranks_of_ground_truth(scores, cands)
    pairs = []
    for l, r in enumerate(ranks):
        hr, ndcg, ap = metrics_at_k(int(r), n)
        pairs.append({
            "user": split.index.user_ids[users[l]],
            "list": split.index.list_ids[l],
            "rank": int(r),
            "hr": hr,
            "ndcg": ndcg,
            "map": ap,
        })
    means = {k: float(np.mean([p[k] for p in pairs])) if pairs else 0.0 for k in ("hr", "ndcg", "map")}
    return MetricsReport(n, means["hr"], means["ndcg"], means["map"], pairs, phase)
