import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hypertenet.data import (
    PAD,
    ConfigError,
    EmptyCorpusError,
    InteractionRecord,
    ParseError,
    build_index,
    left_pad,
    load_interactions,
    load_split,
    make_sequence_batches,
    sample_negative_triples,
    save_split,
    split_leave_one_out,
)
from hypertenet.synthetic import generate_corpus


def write(tmp_path, text, name="corpus.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def small_records():
    rows = []
    for l, (u, items) in enumerate([("u1", [1, 2, 3, 4]), ("u1", [3, 5, 6]), ("u2", [2, 7, 8, 9, 1])]):
        rows += [InteractionRecord(u, f"l{l}", f"i{it}", t) for t, it in enumerate(items)]
    return rows


@pytest.fixture(scope="module")
def synth_split():
    records, _ = generate_corpus(seed=3)
    return split_leave_one_out(build_index(records), seed=3)


def test_three_item_list(tmp_path):
    p = write(tmp_path, "user_id,list_id,item_id,timestamp\nu,l,a,1\nu,l,b,2\nu,l,c,3\n")
    ix = build_index(load_interactions(p))
    sp = split_leave_one_out(ix, n_negatives=0)
    a, b, c = (ix.item_index[x] for x in "abc")
    assert sp.train[0].tolist() == [a]
    assert sp.valid_target[0] == b and sp.test_target[0] == c


def test_two_item_list_dropped(tmp_path):
    p = write(tmp_path, "user_id,list_id,item_id,timestamp\nu,l,a,1\nu,l,b,2\nu,m,a,1\nu,m,b,2\nu,m,c,3\n")
    ix = build_index(load_interactions(p))
    assert ix.list_ids == ["m"]


def test_tsv_and_timestamp_order(tmp_path):
    p = write(tmp_path, "user_id\tlist_id\titem_id\ttimestamp\nu\tl\tc\t3\nu\tl\ta\t1\nu\tl\tb\t2\n", "x.tsv")
    ix = build_index(load_interactions(p))
    assert [ix.item_ids[i] for i in ix.items_of_list[0]] == ["a", "b", "c"]


def test_parse_errors(tmp_path):
    with pytest.raises(ParseError, match=r"csv:2:"):
        load_interactions(write(tmp_path, "user_id,list_id,item_id,timestamp\nu,l,a\n"))
    with pytest.raises(ParseError):
        load_interactions(write(tmp_path, "user_id,list_id,item_id,timestamp\nu,l,a,yesterday\n"))
    with pytest.raises(EmptyCorpusError):
        load_interactions(write(tmp_path, ""))


def test_duplicates_keep_first(tmp_path):
    p = write(tmp_path, "user_id,list_id,item_id,timestamp\nu,l,a,1\nu,l,b,2\nu,l,a,3\nu,l,c,4\n")
    ix = build_index(load_interactions(p))
    assert [ix.item_ids[i] for i in ix.items_of_list[0]] == ["a", "b", "c"]


def test_two_owners_rejected():
    recs = [InteractionRecord("u", "l", "a", 0), InteractionRecord("v", "l", "b", 1)]
    with pytest.raises(ValueError, match="two owners"):
        build_index(recs)


def test_ids_independent_of_row_order():
    recs = small_records()
    a = build_index(recs)
    b = build_index(list(np.random.default_rng(0).permutation(np.array(recs, dtype=object))))
    assert a.fingerprint() == b.fingerprint()
    assert a.item_ids == b.item_ids and a.user_ids == b.user_ids


def test_index_counts():
    ix = build_index(small_records())
    assert (ix.n_users, ix.n_items, ix.n_lists) == (2, 9, 3)
    assert ix.eta(ix.user_index["u1"]) == 2
    assert sum(len(s) for s in ix.items_of_list) == 12


def test_candidates_protocol(synth_split):
    sp = synth_split
    for phase in ("valid", "test"):
        c = sp.candidates[phase]
        assert c.shape == (sp.index.n_lists, 101)
        assert np.array_equal(c[:, 0], sp.target(phase))
        for l, seq in enumerate(sp.index.items_of_list):
            assert len(set(c[l])) == 101
            assert not set(c[l, 1:]) & set(seq.tolist())


def test_too_few_negatives():
    with pytest.raises(ConfigError):
        split_leave_one_out(build_index(small_records()), n_negatives=100)


def test_split_is_deterministic(synth_split):
    again = split_leave_one_out(synth_split.index, seed=3)
    for p in ("valid", "test"):
        assert np.array_equal(again.candidates[p], synth_split.candidates[p])


def test_history_for_phases(synth_split):
    sp = synth_split
    assert all(np.array_equal(h, t) for h, t in zip(sp.history("valid"), sp.train))
    assert all(h[-1] == v for h, v in zip(sp.history("test"), sp.valid_target))


def test_split_round_trip(tmp_path, synth_split):
    save_split(synth_split, tmp_path / "s")
    back = load_split(tmp_path / "s")
    assert back.index.fingerprint() == synth_split.index.fingerprint()
    for p in ("valid", "test"):
        assert np.array_equal(back.candidates[p], synth_split.candidates[p])
    assert all(np.array_equal(a, b) for a, b in zip(back.train, synth_split.train))
    first = {f.name: f.read_bytes() for f in (tmp_path / "s").iterdir()}
    save_split(back, tmp_path / "s")
    assert first == {f.name: f.read_bytes() for f in (tmp_path / "s").iterdir()}


def test_negative_triples_exclude_list_items(synth_split):
    sp = synth_split
    pos = sp.positive_triples()
    neg = sample_negative_triples(sp.index, pos, 3, 0)
    assert len(neg) == 3 * len(pos)
    for u, i, l in neg[:2000]:
        assert i not in sp.index.items_of_list[l]
        assert sp.index.user_of_list[l] == u


def test_negative_items_are_uniform():
    # one list over items 0..2; three eligible items 3..5 should each get a third of the draws
    recs = [InteractionRecord("u", "l", str(i), i) for i in range(3)]
    recs += [InteractionRecord("v", "m", str(i), i) for i in range(3, 6)]
    ix = build_index(recs)
    pos = np.array([[0, 0, 0]] * 3000)
    neg = sample_negative_triples(ix, pos, 1, 7)
    counts = np.bincount(neg[:, 1], minlength=6)
    assert counts[:3].sum() == 0
    assert stats.chisquare(counts[3:]).pvalue > 1e-3


def test_list_with_every_item_is_skipped():
    recs = [InteractionRecord("u", "l", str(i), i) for i in range(3)]
    ix = build_index(recs)
    assert len(sample_negative_triples(ix, np.array([[0, 0, 0]]), 2, 0)) == 0


def test_left_pad():
    items, pos, valid = left_pad([np.array([4, 5]), np.array([1, 2, 3, 4, 5])], 3)
    assert items.tolist() == [[PAD, 4, 5], [3, 4, 5]]
    assert pos.tolist() == [[0, 0, 1], [0, 1, 2]]
    assert valid.tolist() == [[False, True, True], [True, True, True]]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(0, 50), min_size=1, max_size=12), min_size=1, max_size=5), st.integers(1, 8))
def test_left_pad_keeps_suffix(seqs, max_len):
    items, _, valid = left_pad([np.array(s) for s in seqs], max_len)
    for row, v, s in zip(items, valid, seqs):
        assert row[v].tolist() == s[-max_len:]
        # padding only on the left
        assert not np.any(np.diff(v.astype(int)) < 0)


def test_sequence_batches_shift(synth_split):
    sp = synth_split
    seen = []
    for b in make_sequence_batches(sp, max_len=20, batch_size=32, negatives_per_position=2, seed=1):
        assert b.negatives.shape == b.items.shape + (2,)
        for r, l in enumerate(b.lists):
            seq = sp.train[l][-20:]
            got = b.targets[r][b.target_mask[r]]
            assert got.tolist() == seq[1:].tolist()
            negs = b.negatives[r][b.target_mask[r]]
            assert not np.isin(negs, sp.train[l]).any()
        seen += b.lists.tolist()
    assert sorted(seen) == list(range(sp.index.n_lists))
