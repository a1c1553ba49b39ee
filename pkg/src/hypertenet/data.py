"""Interaction logs, the indexed corpus, leave-one-out splits and batches."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD = -1
PHASES = ("valid", "test")


class ParseError(ValueError):
    pass


class EmptyCorpusError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    list_id: str
    item_id: str
    timestamp: int


def _sort_key(key: str):
    # numeric external ids sort numerically, everything else lexicographically after them
    try:
        return (0, int(key), "")
    except ValueError:
        return (1, 0, key)


def load_interactions(path: str | os.PathLike, fmt: str | None = None) -> list[InteractionRecord]:
    """Read ``user_id,list_id,item_id,timestamp`` rows (CSV or TSV, header required).

    Repeated (list_id, item_id) pairs keep their first occurrence.
    """
    path = Path(path)
    if fmt is None:
        fmt = "tsv" if path.suffix.lower() in (".tsv", ".tab") else "csv"
    delimiter = {"csv": ",", "tsv": "\t"}.get(fmt.lower())
    if delimiter is None:
        raise ValueError(f"unsupported format {fmt!r}; use csv or tsv")

    records: list[InteractionRecord] = []
    seen: set[tuple[str, str]] = set()
    dups = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise EmptyCorpusError(f"{path}: empty file")
        header = [h.strip() for h in header]
        expected = ["user_id", "list_id", "item_id", "timestamp"]
        if header != expected:
            raise ParseError(f"{path}:1: expected header {','.join(expected)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            user, lst, item, ts = (c.strip() for c in row)
            if not (user and lst and item):
                raise ParseError(f"{path}:{lineno}: empty id field")
            try:
                stamp = int(ts)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric timestamp {ts!r}") from None
            if (lst, item) in seen:
                dups += 1
                continue
            seen.add((lst, item))
            records.append(InteractionRecord(user, lst, item, stamp))
    if dups:
        log.warning("%s: dropped %d duplicate (list, item) rows", path, dups)
    if not records:
        raise EmptyCorpusError(f"{path}: no interactions")
    return records


@dataclass
class CorpusIndex:
    user_ids: list[str]
    item_ids: list[str]
    list_ids: list[str]
    user_of_list: np.ndarray
    items_of_list: list[np.ndarray]
    lists_of_user: list[np.ndarray]
    user_index: dict[str, int] = field(repr=False)
    item_index: dict[str, int] = field(repr=False)
    list_index: dict[str, int] = field(repr=False)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_lists(self) -> int:
        return len(self.list_ids)

    def eta(self, user: int) -> int:
        return len(self.lists_of_user[user])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for l, items in enumerate(self.items_of_list):
            h.update(f"{self.user_ids[self.user_of_list[l]]}|{self.list_ids[l]}|".encode())
            h.update(",".join(self.item_ids[i] for i in items).encode())
            h.update(b"\n")
        return h.hexdigest()[:16]


def build_index(records: Sequence[InteractionRecord], min_list_len: int = 3) -> CorpusIndex:
    """Assign contiguous ids and order each list chronologically (ties keep file order)."""
    if not records:
        raise EmptyCorpusError("no records")
    by_list: dict[str, list[tuple[int, int, str]]] = {}
    owner: dict[str, str] = {}
    for pos, r in enumerate(records):
        prev = owner.setdefault(r.list_id, r.user_id)
        if prev != r.user_id:
            raise ValueError(f"list {r.list_id!r} has two owners: {prev!r} and {r.user_id!r}")
        by_list.setdefault(r.list_id, []).append((r.timestamp, pos, r.item_id))

    kept = {l: [it for _, _, it in sorted(rows)] for l, rows in by_list.items() if len(rows) >= min_list_len}
    dropped = len(by_list) - len(kept)
    if dropped:
        log.info("dropped %d lists shorter than %d", dropped, min_list_len)
    if not kept:
        raise EmptyCorpusError(f"all lists are shorter than min_list_len={min_list_len}")

    list_ids = sorted(kept, key=_sort_key)
    user_ids = sorted({owner[l] for l in list_ids}, key=_sort_key)
    item_ids = sorted({i for seq in kept.values() for i in seq}, key=_sort_key)
    user_index = {u: k for k, u in enumerate(user_ids)}
    item_index = {i: k for k, i in enumerate(item_ids)}
    list_index = {l: k for k, l in enumerate(list_ids)}

    user_of_list = np.array([user_index[owner[l]] for l in list_ids], dtype=np.int64)
    items_of_list = [np.array([item_index[i] for i in kept[l]], dtype=np.int64) for l in list_ids]
    lists_of_user = [np.flatnonzero(user_of_list == u) for u in range(len(user_ids))]
    return CorpusIndex(
        user_ids, item_ids, list_ids, user_of_list, items_of_list, lists_of_user,
        user_index, item_index, list_index,
    )


@dataclass
class SplitCorpus:
    index: CorpusIndex
    train: list[np.ndarray]
    valid_target: np.ndarray
    test_target: np.ndarray
    # phase -> (n_lists, 1 + n_negatives); column 0 is the ground truth
    candidates: dict[str, np.ndarray]
    seed: int

    def target(self, phase: str) -> np.ndarray:
        return {"valid": self.valid_target, "test": self.test_target}[phase]

    def history(self, phase: str) -> list[np.ndarray]:
        """Items known before predicting ``phase``: train prefix, plus the valid item for test."""
        if phase == "valid":
            return self.train
        if phase == "test":
            return [np.append(t, v) for t, v in zip(self.train, self.valid_target)]
        raise ValueError(f"unknown phase {phase!r}")

    def positive_triples(self) -> np.ndarray:
        """(user, item, list) rows for every training interaction."""
        rows = [
            np.column_stack([np.full(len(seq), self.index.user_of_list[l]), seq, np.full(len(seq), l)])
            for l, seq in enumerate(self.train)
        ]
        return np.concatenate(rows).astype(np.int64)


def split_leave_one_out(index: CorpusIndex, seed: int = 0, n_negatives: int = 100) -> SplitCorpus:
    """Hold out the last item of each list for test and the one before for validation."""
    if any(len(s) < 3 for s in index.items_of_list):
        raise ValueError("leave-one-out needs every list to have at least 3 items")
    rng = np.random.default_rng(seed)
    train = [s[:-2].copy() for s in index.items_of_list]
    valid = np.array([s[-2] for s in index.items_of_list], dtype=np.int64)
    test = np.array([s[-1] for s in index.items_of_list], dtype=np.int64)
    all_items = np.arange(index.n_items)
    candidates = {p: np.empty((index.n_lists, n_negatives + 1), dtype=np.int64) for p in PHASES}
    for l, seq in enumerate(index.items_of_list):
        eligible = np.setdiff1d(all_items, seq, assume_unique=True)
        if len(eligible) < n_negatives:
            raise ConfigError(
                f"list {index.list_ids[l]!r} leaves only {len(eligible)} negative items; "
                f"use a candidate size below {n_negatives}"
            )
        for phase, gt in (("valid", valid[l]), ("test", test[l])):
            candidates[phase][l, 0] = gt
            candidates[phase][l, 1:] = rng.choice(eligible, n_negatives, replace=False)
    return SplitCorpus(index, train, valid, test, candidates, seed)


class _Membership:
    """Vectorised ``item in list`` test over a fixed list → items mapping."""

    def __init__(self, seqs: Sequence[np.ndarray], n_items: int):
        self.n_items = n_items
        keys = [l * n_items + np.asarray(s, dtype=np.int64) for l, s in enumerate(seqs)]
        self.keys = np.unique(np.concatenate(keys)) if keys else np.empty(0, np.int64)
        self.sizes = np.array([len(np.unique(s)) for s in seqs], dtype=np.int64)

    def contains(self, lists: np.ndarray, items: np.ndarray) -> np.ndarray:
        q = lists * self.n_items + items
        pos = np.searchsorted(self.keys, q)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == q


def _sample_excluding(
    rng: np.random.Generator, member: _Membership, lists: np.ndarray, k: int,
    extra: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``k`` items per row uniformly among items not in that row's list (nor ``extra``)."""
    out = rng.integers(0, member.n_items, size=(len(lists), k))
    rows = np.repeat(lists[:, None], k, axis=1)

    def bad(o):
        b = member.contains(rows, o)
        if extra is not None:
            b |= o == extra[:, None]
        return b

    todo = bad(out)
    while todo.any():
        out[todo] = rng.integers(0, member.n_items, size=int(todo.sum()))
        todo[todo] = bad(out)[todo]
    return out


def sample_negative_triples(
    index: CorpusIndex,
    positives: np.ndarray,
    ratio: int,
    seed: int | np.random.Generator = 0,
    exclude: Sequence[np.ndarray] | None = None,
) -> np.ndarray:
    """``ratio`` corrupted (u, i', l) triples per positive with i' drawn uniformly from items not in l.

    ``exclude`` overrides what counts as "in l" (defaults to the full lists);
    training passes the train prefixes so held-out items stay unseen.
    """
    if ratio < 1:
        raise ConfigError("negative ratio must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    seqs = exclude if exclude is not None else index.items_of_list
    member = _Membership(seqs, index.n_items)
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    full = member.sizes[positives[:, 2]] >= index.n_items
    if full.any():
        bad_lists = sorted({index.list_ids[l] for l in positives[full, 2]})
        log.warning("skipping negatives for lists containing every item: %s", bad_lists)
        positives = positives[~full]
    items = _sample_excluding(rng, member, positives[:, 2], ratio)
    neg = np.repeat(positives, ratio, axis=0)
    neg[:, 1] = items.reshape(-1)
    return neg


def left_pad(seqs: Sequence[np.ndarray], max_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep the last ``max_len`` items of each sequence and left-pad with PAD.

    Returns (items, positions, valid). ``positions`` counts real items from 0
    at the first kept one; padding slots get position 0 and valid False.
    """
    n = len(seqs)
    items = np.full((n, max_len), PAD, dtype=np.int64)
    positions = np.zeros((n, max_len), dtype=np.int64)
    for r, s in enumerate(seqs):
        s = np.asarray(s)[-max_len:]
        k = len(s)
        if k:
            items[r, max_len - k:] = s
            positions[r, max_len - k:] = np.arange(k)
    return items, positions, items != PAD


@dataclass
class SequenceBatch:
    lists: np.ndarray  # (B,)
    users: np.ndarray  # (B,)
    items: np.ndarray  # (B, L), PAD where empty
    positions: np.ndarray  # (B, L)
    valid: np.ndarray  # (B, L) item present
    targets: np.ndarray  # (B, L) next item, PAD where no target
    negatives: np.ndarray  # (B, L, m)
    target_mask: np.ndarray  # (B, L) position contributes to the loss


def make_sequence_batches(
    split: SplitCorpus,
    max_len: int = 300,
    batch_size: int = 256,
    negatives_per_position: int = 1,
    seed: int | np.random.Generator = 0,
    shuffle: bool = True,
) -> Iterator[SequenceBatch]:
    """Stream padded training sequences; position t is trained to predict the item at t+1."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    member = _Membership(split.train, split.index.n_items)
    order = np.arange(split.index.n_lists)
    if shuffle:
        order = rng.permutation(order)
    for start in range(0, len(order), batch_size):
        lists = order[start:start + batch_size]
        items, positions, valid = left_pad([split.train[l] for l in lists], max_len)
        targets = np.full_like(items, PAD)
        targets[:, :-1] = items[:, 1:]
        target_mask = valid & (targets != PAD)
        B, L = items.shape
        negs = _sample_excluding(
            rng, member, np.repeat(lists, L), negatives_per_position
        ).reshape(B, L, negatives_per_position)
        yield SequenceBatch(
            lists=lists,
            users=split.index.user_of_list[lists],
            items=items,
            positions=positions,
            valid=valid,
            targets=targets,
            negatives=negs,
            target_mask=target_mask,
        )


# split artifact ------------------------------------------------------------


def save_split(split: SplitCorpus, directory: str | os.PathLike, meta: dict | None = None) -> None:
    """Write train/valid/test/candidates as TSV plus a small JSON header."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ix = split.index

    def ext(items) -> str:
        return " ".join(ix.item_ids[i] for i in items)

    def key(l: int) -> str:
        return f"{ix.user_ids[ix.user_of_list[l]]}\t{ix.list_ids[l]}"

    files = {
        "train.tsv": "user_id\tlist_id\titems\n"
        + "".join(f"{key(l)}\t{ext(s)}\n" for l, s in enumerate(split.train)),
        "valid.tsv": "user_id\tlist_id\titem_id\n"
        + "".join(f"{key(l)}\t{ix.item_ids[i]}\n" for l, i in enumerate(split.valid_target)),
        "test.tsv": "user_id\tlist_id\titem_id\n"
        + "".join(f"{key(l)}\t{ix.item_ids[i]}\n" for l, i in enumerate(split.test_target)),
        "candidates.tsv": "phase\tuser_id\tlist_id\titems\n"
        + "".join(
            f"{p}\t{key(l)}\t{ext(split.candidates[p][l])}\n"
            for p in PHASES
            for l in range(ix.n_lists)
        ),
        "split.json": json.dumps(
            {"seed": split.seed, "corpus": ix.fingerprint(), **(meta or {})}, sort_keys=True, indent=2
        ) + "\n",
    }
    for name, text in files.items():
        tmp = d / (name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, d / name)


def load_split(directory: str | os.PathLike) -> SplitCorpus:
    d = Path(directory)
    if not (d / "split.json").exists():
        raise FileNotFoundError(f"{d}: no split found")
    info = json.loads((d / "split.json").read_text())

    def rows(name):
        with open(d / name, encoding="utf-8") as fh:
            next(fh)
            return [line.rstrip("\n").split("\t") for line in fh if line.strip()]

    train_rows = rows("train.tsv")
    valid = {(u, l): i for u, l, i in rows("valid.tsv")}
    test = {(u, l): i for u, l, i in rows("test.tsv")}
    records = []
    for u, l, items in train_rows:
        seq = items.split() + [valid[(u, l)], test[(u, l)]]
        records += [InteractionRecord(u, l, it, t) for t, it in enumerate(seq)]
    index = build_index(records)
    train = [s[:-2].copy() for s in index.items_of_list]
    cand_rows = rows("candidates.tsv")
    n_cand = len(cand_rows[0][3].split()) if cand_rows else 0
    candidates = {p: np.empty((index.n_lists, n_cand), dtype=np.int64) for p in PHASES}
    for p, u, l, items in cand_rows:
        candidates[p][index.list_index[l]] = [index.item_index[i] for i in items.split()]
    return SplitCorpus(
        index,
        train,
        np.array([s[-2] for s in index.items_of_list], dtype=np.int64),
        np.array([s[-1] for s in index.items_of_list], dtype=np.int64),
        candidates,
        int(info["seed"]),
    )
