import numpy as np
import pytest

import oracles
from hypertenet import autodiff as ad
from hypertenet import mgnn, ssn, uhgnn
from hypertenet.autodiff import Tensor
from hypertenet.knn import KnnAdjacency, build_knn_adjacency
from hypertenet.params import ParameterStore


def random_adjacency(n, k, rng, entity="user"):
    return build_knn_adjacency(rng.normal(size=(n, 5)), entity, k)


def store64(seed):
    return ParameterStore(np.random.default_rng(seed))


# MGNN ----------------------------------------------------------------------


def test_gcn_single_node_identity(f64):
    s = store64(0)
    s.add("embed.P", np.array([[0.3, -1.2]]))
    s.add("mgnn.user.layer0.weight", np.eye(2))
    s.zeros("mgnn.user.layer0.bias", (2,))
    adj = KnnAdjacency("user", 0, np.array([[0]]), np.array([[1.0]]))
    out = mgnn.gcn_forward(s, {"user": adj}, layers=1, entities=("user",))["user"]
    np.testing.assert_allclose(out.data, [[0.3, -1.2]])


def test_gcn_two_nodes_average(f64):
    s = store64(0)
    s.add("embed.P", np.array([[1.0, 0.0], [0.0, 3.0]]))
    s.add("mgnn.user.layer0.weight", np.eye(2))
    s.zeros("mgnn.user.layer0.bias", (2,))
    adj = KnnAdjacency("user", 1, np.array([[0, 1], [1, 0]]), np.full((2, 2), 0.5))
    out = mgnn.gcn_forward(s, {"user": adj}, layers=1, entities=("user",))["user"]
    np.testing.assert_allclose(out.data, [[0.5, 1.5], [0.5, 1.5]])


@pytest.mark.parametrize("seed", range(3))
def test_gcn_matches_loop_oracle(f64, seed):
    rng = np.random.default_rng(seed)
    s = store64(seed)
    mgnn.init_embeddings(s, 10, 1, 1, 4)
    mgnn.init_mgnn(s, 4, 2)
    s["mgnn.user.layer0.bias"].data[:] = rng.normal(size=4)
    adj = random_adjacency(10, 3, rng)
    got = mgnn.gcn_forward(s, {"user": adj}, 2, ("user",))["user"].data
    layers = [(s[f"mgnn.user.layer{k}.weight"].data, s[f"mgnn.user.layer{k}.bias"].data) for k in range(2)]
    want = oracles.gcn(s["embed.P"].data, adj.neighbors, adj.weights, layers)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_gcn_size_mismatch(f64):
    s = store64(0)
    mgnn.init_embeddings(s, 4, 1, 1, 2)
    mgnn.init_mgnn(s, 2, 1)
    with pytest.raises(ad.ContractError):
        mgnn.gcn_forward(s, {"user": random_adjacency(5, 2, np.random.default_rng(0))}, 1, ("user",))


def test_mgnn_score_examples(f64):
    z = Tensor(np.zeros((1, 3)))
    assert mgnn.mgnn_score(z, z, z).item() == 0.5
    e = Tensor(np.array([[1.0, 0.0, 0.0]]))
    assert mgnn.mgnn_score(e, e, e).item() == pytest.approx(0.9526, abs=1e-4)


def test_mgnn_score_symmetries(f64, rng):
    p, q, t = (rng.normal(size=(4, 6)) for _ in range(3))
    base = mgnn.mgnn_score(Tensor(p), Tensor(q), Tensor(t)).data
    np.testing.assert_allclose(mgnn.mgnn_score(Tensor(-p), Tensor(-q), Tensor(-t)).data, base)
    np.testing.assert_allclose(mgnn.mgnn_score(Tensor(t), Tensor(p), Tensor(q)).data, base)
    for r in range(4):
        assert base[r] == pytest.approx(oracles.mgnn_score(p[r], q[r], t[r]), abs=1e-12)


# UHGNN ---------------------------------------------------------------------


def uhgnn_store(seed, dim=5, hidden=8, heads=2):
    s = store64(seed)
    uhgnn.init_uhgnn(s, dim, hidden, heads)
    rng = np.random.default_rng(seed + 100)
    for name, p in s.items():
        if name.endswith("bias"):
            p.data[:] = rng.normal(scale=0.3, size=p.shape)
    return s


def test_static_zero_input(f64):
    s = store64(0)
    uhgnn.init_uhgnn(s, 4, 8, 2)
    out = uhgnn.static_embed(Tensor(np.zeros((2, 3, 4))), s)
    np.testing.assert_array_equal(out.data, 0.0)


def test_static_is_triple_independent(f64, rng):
    s = uhgnn_store(1)
    node = rng.normal(size=5)
    a = np.stack([node, rng.normal(size=5), rng.normal(size=5)])[None]
    b = np.stack([rng.normal(size=5), rng.normal(size=5), node])[None]
    np.testing.assert_allclose(uhgnn.static_embed(Tensor(a), s).data[0, 0], uhgnn.static_embed(Tensor(b), s).data[0, 2])


def test_equal_energies_give_thirds(f64, rng):
    s = store64(0)
    uhgnn.init_uhgnn(s, 3, 3, 1)
    s["uhgnn.head0.q.weight"].data[:] = 0.0
    s["uhgnn.head0.v.weight"].data[:] = np.eye(3)
    s["uhgnn.combine.weight"].data[:] = np.eye(3)
    v = rng.normal(size=(1, 3, 3))
    dyn, _, alpha = uhgnn.dynamic_embed(Tensor(v), s)
    np.testing.assert_allclose(alpha.data, 1 / 3)
    np.testing.assert_allclose(dyn.data[0, 0], np.tanh((v[0, 1] + v[0, 2]) / 3))


@pytest.mark.parametrize("exclude_self", [False, True])
@pytest.mark.parametrize("seed", range(3))
def test_uhgnn_matches_scalar_oracle(f64, seed, exclude_self):
    s = uhgnn_store(seed)
    v = np.random.default_rng(seed).normal(size=(4, 3, 5))
    trace = uhgnn.uhgnn_forward(Tensor(v), s, exclude_self)
    params = {k: p.data for k, p in s.items()}
    for b in range(4):
        st, dy, al, pr, sc = oracles.uhgnn_triple(v[b], params, 2, exclude_self)
        np.testing.assert_allclose(trace.static.data[b], st, atol=1e-10)
        np.testing.assert_allclose(trace.dynamic.data[b], dy, atol=1e-10)
        np.testing.assert_allclose(trace.alpha.data[b], al, atol=1e-10)
        np.testing.assert_allclose(trace.node_prob.data[b], pr, atol=1e-10)
        assert trace.score.data[b] == pytest.approx(sc, abs=1e-10)
    np.testing.assert_allclose(trace.alpha.data.sum(-1), 1.0, atol=1e-12)


def test_identical_static_dynamic_gives_half(f64):
    static = Tensor(np.full((1, 3, 4), 0.2))
    s = store64(0)
    uhgnn.init_uhgnn(s, 4, 4, 1)
    probs, score = uhgnn.hyperlink_score(static, static, s)
    np.testing.assert_allclose(probs.data, 0.5)
    assert score.item() == 0.5


def test_node_order_does_not_change_score(f64, rng):
    s = uhgnn_store(2)
    v = rng.normal(size=(1, 3, 5))
    a = uhgnn.uhgnn_forward(Tensor(v), s).score.item()
    b = uhgnn.uhgnn_forward(Tensor(v[:, [2, 0, 1]]), s).score.item()
    assert a == pytest.approx(b, abs=1e-12)


def test_combined_score_examples(f64):
    def comb(a, b):
        return uhgnn.combined_score(Tensor([a]), Tensor([b])).item()

    assert comb(0.5, 0.5) == 0.5
    assert comb(1.0, 0.0) == 0.5
    assert comb(0.9526, 0.5) == pytest.approx(0.7263)


def test_graph_loss_examples(f64, rng):
    assert uhgnn.graph_loss(Tensor([1 - 1e-7]), [1.0]).item() == pytest.approx(1e-7, rel=1e-3)
    assert uhgnn.graph_loss(Tensor([0.5, 0.5]), [1.0, 0.0]).item() == pytest.approx(2 * np.log(2))
    y = rng.uniform(size=50)
    lab = rng.integers(0, 2, 50).astype(float)
    assert uhgnn.graph_loss(Tensor(y), lab).item() == pytest.approx(oracles.bce(y, lab), abs=1e-8)
    with pytest.raises(ad.ContractError):
        uhgnn.graph_loss(Tensor(np.zeros(0)), np.zeros(0))


# SSN -----------------------------------------------------------------------


def ssn_store(seed, dim=6, max_len=10, blocks=2):
    s = store64(seed)
    ssn.init_ssn(s, dim, max_len, blocks)
    return s


def test_combine_representations(f64, rng):
    q = rng.normal(size=(7, 4))
    p = rng.normal(size=(2, 4))
    t = rng.normal(size=(2, 4))
    pos = rng.normal(size=(5, 4))
    items = np.array([[-1, 3, 1], [2, 2, 6]])
    positions = np.array([[0, 0, 1], [0, 1, 2]])
    valid = items >= 0
    out = ssn.combine_representations(Tensor(q), Tensor(p), Tensor(t), Tensor(pos), items, positions, valid).data
    for b in range(2):
        for l in range(3):
            want = q[items[b, l]] + p[b] + t[b] + pos[positions[b, l]] if valid[b, l] else 0.0
            np.testing.assert_allclose(out[b, l], want, atol=1e-12)
    zero = np.zeros((2, 4))
    only_q = ssn.combine_representations(Tensor(q), Tensor(zero), Tensor(zero), Tensor(np.zeros((5, 4))), items, positions, valid)
    np.testing.assert_allclose(only_q.data[1], q[[2, 2, 6]])
    with pytest.raises(ad.ContractError):
        ssn.combine_representations(Tensor(q), Tensor(p), Tensor(t), Tensor(pos), items, positions + 4, valid)


def test_causality_by_perturbation(f64, rng):
    s = ssn_store(0)
    x = rng.normal(size=(1, 8, 6))
    valid = np.ones((1, 8), dtype=bool)
    base = ssn.ssn_forward(Tensor(x), valid, s).data
    for t in range(7):
        y = x.copy()
        y[0, t + 1:] += rng.normal(size=(7 - t, 6))
        np.testing.assert_allclose(ssn.ssn_forward(Tensor(y), valid, s).data[0, : t + 1], base[0, : t + 1], atol=1e-12)


def test_causality_by_gradient(f64, rng):
    s = ssn_store(1)
    x = Tensor(rng.normal(size=(1, 6, 6)), requires_grad=True)
    valid = np.ones((1, 6), dtype=bool)
    w = rng.normal(size=6)  # a plain row sum of a normalised output has zero gradient
    for t in range(6):
        xt = Tensor(x.data, requires_grad=True)
        sel = np.zeros((1, 6, 6))
        sel[0, t] = w
        ad.sum_(ad.mul(ssn.ssn_forward(xt, valid, s), Tensor(sel))).backward()
        assert np.all(xt.grad[0, t + 1:] == 0.0)
        assert np.any(xt.grad[0, : t + 1] != 0.0)


def test_pure_residual(f64, rng):
    s = ssn_store(2)
    for name, p in s.items():
        if not name.endswith(("gain", "ln1.bias", "ln2.bias")):
            p.data[:] = 0.0
    x = rng.normal(size=(2, 5, 6))
    out = ssn.ssn_forward(Tensor(x), np.ones((2, 5), dtype=bool), s, final_norm=False)
    np.testing.assert_allclose(out.data, x)


def test_single_row_attention_is_value_projection(f64, rng):
    s = ssn_store(3, blocks=1)
    x = rng.normal(size=(1, 1, 6))
    h = ssn._affine_norm(Tensor(x), s, "ssn.block0.ln1").data
    attn = ssn.self_attention(Tensor(h), s, "ssn.block0", np.zeros((1, 1, 1), dtype=bool)).data
    want = h[0, 0] @ s["ssn.block0.attn.v.weight"].data + s["ssn.block0.attn.v.bias"].data
    np.testing.assert_allclose(attn[0, 0], want, atol=1e-12)


def test_padding_keys_get_no_attention(f64, rng):
    s = ssn_store(4)
    valid = np.array([[False, False, True, True, True]])
    x = rng.normal(size=(1, 5, 6)) * valid[..., None]
    y = x.copy()
    y[0, :2] = rng.normal(size=(2, 6))
    a = ssn.ssn_forward(Tensor(x), valid, s).data[0, 2:]
    b = ssn.ssn_forward(Tensor(y), valid, s).data[0, 2:]
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_relevance_examples(f64):
    table = Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert ssn.relevance_scores(Tensor(np.zeros(2)), np.array([0, 1]), table).data.tolist() == [0.5, 0.5]
    r = ssn.relevance_scores(Tensor(np.array([1.0, 0.0])), np.array([0, 1]), table).data
    assert r[0] == pytest.approx(0.7311, abs=1e-4) and r[0] > r[1]
    with pytest.raises(ad.ContractError):
        ssn.relevance_scores(Tensor(np.zeros(2)), np.array([2]), table)


def test_ssn_loss_examples(f64):
    q = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    pred = Tensor(np.zeros((1, 1, 2)))
    loss = ssn.ssn_loss(pred, q, np.array([[0]]), np.array([[[1]]]), np.array([[True]]))
    assert loss.item() == pytest.approx(2 * np.log(2))
    with pytest.raises(ad.ContractError):
        ssn.ssn_loss(pred, q, np.array([[0]]), np.array([[[1]]]), np.array([[False]]))


@pytest.mark.parametrize("seed", range(3))
def test_ssn_loss_matches_position_loop(f64, seed):
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(3, 10, 4))
    q = rng.normal(size=(12, 4))
    targets = rng.integers(0, 12, (3, 10))
    negs = rng.integers(0, 12, (3, 10, 2))
    mask = rng.random((3, 10)) < 0.7
    got = ssn.ssn_loss(Tensor(pred), Tensor(q), targets, negs, mask).item()
    assert got == pytest.approx(oracles.ssn_loss(pred, q, targets, negs, mask), abs=1e-8)


def test_last_position(f64, rng):
    x = rng.normal(size=(2, 4, 3))
    np.testing.assert_array_equal(ssn.last_position(Tensor(x)).data, x[:, -1])


def test_dropout_only_changes_training_mode(f64, rng):
    s = ssn_store(5)
    x = Tensor(rng.normal(size=(1, 4, 6)))
    valid = np.ones((1, 4), dtype=bool)
    a = ssn.ssn_forward(x, valid, s, dropout=0.5, train=False).data
    b = ssn.ssn_forward(x, valid, s, dropout=0.5, train=False).data
    np.testing.assert_array_equal(a, b)
    c = ssn.ssn_forward(x, valid, s, dropout=0.5, train=True, rng=np.random.default_rng(0)).data
    assert not np.allclose(a, c)
