"""Planted-genre list corpus for desk-scale experiments.

Items are split into genres; inside a genre the items sit on a ring. Each
user favours two genres. A list draws one genre (or, sometimes, one
segment from each favourite) and walks its ring: every step moves to the
next unused item one ring slot ahead with probability ``p_step``, else two
slots ahead. The generator's own next-item probabilities give a
near-Bayes-optimal reference scorer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import InteractionRecord


@dataclass
class PlantedTruth:
    n_genres: int
    genre_size: int
    p_step: float
    item_genre: dict[str, int]
    item_slot: dict[str, int]
    ring: list[list[str]]  # genre -> external item ids in ring order
    user_genres: dict[str, tuple[int, ...]]


def _next_unused(ring: list[str], slot: int, min_offset: int, used: set[str]) -> str | None:
    n = len(ring)
    for off in range(min_offset, n):
        cand = ring[(slot + off) % n]
        if cand not in used:
            return cand
    return None


def generate_corpus(
    n_users: int = 50,
    n_items: int = 200,
    n_lists: int = 150,
    n_genres: int = 10,
    mean_len: int = 12,
    len_spread: int = 4,
    p_step: float = 0.85,
    p_two_genres: float = 0.3,
    seed: int = 0,
) -> tuple[list[InteractionRecord], PlantedTruth]:
    if n_items % n_genres:
        raise ValueError("n_items must be a multiple of n_genres")
    size = n_items // n_genres
    if mean_len + len_spread > size:
        raise ValueError("lists longer than a genre ring are not supported")
    rng = np.random.default_rng(seed)
    ids = rng.permutation(n_items)
    ring = [[f"i{ids[g * size + k]}" for k in range(size)] for g in range(n_genres)]
    item_genre = {it: g for g, r in enumerate(ring) for it in r}
    item_slot = {it: k for r in ring for k, it in enumerate(r)}
    user_genres = {f"u{u}": tuple(int(g) for g in rng.choice(n_genres, 2, replace=False)) for u in range(n_users)}

    records: list[InteractionRecord] = []
    owners = np.concatenate([np.arange(n_users), rng.integers(0, n_users, max(0, n_lists - n_users))])
    for l, u in enumerate(owners[:n_lists]):
        user = f"u{u}"
        length = int(rng.integers(mean_len - len_spread, mean_len + len_spread + 1))
        favs = user_genres[user]
        if rng.random() < p_two_genres:
            cut = int(rng.integers(length // 3, 2 * length // 3 + 1))
            segments = [(favs[0], cut), (favs[1], length - cut)]
            if rng.random() < 0.5:
                segments = [(favs[1], cut), (favs[0], length - cut)]
        else:
            segments = [(favs[int(rng.integers(2))], length)]
        used: set[str] = set()
        seq: list[str] = []
        for g, n in segments:
            r = ring[g]
            cur = r[int(rng.integers(size))]
            seq.append(cur)
            used.add(cur)
            for _ in range(n - 1):
                step = 1 if rng.random() < p_step else 2
                nxt = _next_unused(r, item_slot[cur], step, used) or _next_unused(r, item_slot[cur], 1, used)
                seq.append(nxt)
                used.add(nxt)
                cur = nxt
        records += [InteractionRecord(user, f"l{l}", it, t) for t, it in enumerate(seq)]
    truth = PlantedTruth(n_genres, size, p_step, item_genre, item_slot, ring, user_genres)
    return records, truth


def write_corpus(records: list[InteractionRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "list_id", "item_id", "timestamp"])
        for r in records:
            w.writerow([r.user_id, r.list_id, r.item_id, r.timestamp])


def planted_scorer(truth: PlantedTruth, index):
    """Score function with the generator's next-step probabilities (ties broken downstream).

    The first unused ring successor of the last item gets ``p_step``, the
    first unused one at least two slots ahead gets ``1 - p_step``; other items
    of the user's favourite genres get a small tie-breaking mass.
    """

    def score(users, lists, histories, candidates):
        out = np.zeros(candidates.shape)
        for row, (u, hist) in enumerate(zip(users, histories)):
            ext = [index.item_ids[i] for i in hist]
            last = ext[-1]
            g = truth.item_genre[last]
            used = set(ext)
            probs: dict[str, float] = {}
            a = _next_unused(truth.ring[g], truth.item_slot[last], 1, used)
            b = _next_unused(truth.ring[g], truth.item_slot[last], 2, used)
            if a is not None:
                probs[a] = probs.get(a, 0.0) + truth.p_step
            if b is not None:
                probs[b] = probs.get(b, 0.0) + 1.0 - truth.p_step
            favs = truth.user_genres[index.user_ids[u]]
            for c, item in enumerate(candidates[row]):
                name = index.item_ids[item]
                s = probs.get(name, 0.0)
                if s == 0.0 and truth.item_genre[name] in favs:
                    s = 1e-3
                out[row, c] = s
        return out

    return score


# Run settings for the bundled corpus. The corpus has 150 lists, so the
# batch sizes and learning rate are re-tuned for it and the walk budget and
# maximum sequence length are cut to what the lists need.
SYNTHETIC_OVERRIDES = {
    "knn.k": 3,
    "knn.walks_per_node": 5,
    "knn.walk_length": 40,
    "train.max_len": 20,
    "train.lr": 0.005,
    "train.graph_batch": 2048,
    "train.ssn_batch": 16,
    "train.epochs": 200,
    "train.patience": 50,
}
