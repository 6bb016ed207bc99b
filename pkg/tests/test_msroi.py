import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semjpeg import msroi as M
from semjpeg import tensor as T
from test_tensor import conv_oracle

TINY = M.NetworkSpec(feature_counts=(4, 6), categories=3, head_features=2)


def random_head(rng, c=6, d=4, h=3, w=3):
    return rng.normal(size=(c, d, h, w))


def scores_oracle(head):
    c, d, h, w = head.shape
    z = np.zeros(c)
    for ci in range(c):
        for di in range(d):
            for x in range(h):
                for y in range(w):
                    z[ci] += head[ci, di, x, y]
    return z


def test_head_shape_for_64px_input():
    net = M.MSROINet(seed=0)
    head = net.forward(M.preprocess(np.zeros((64, 64, 3), np.uint8)))
    assert head.shape == (1, 6, 4, 2, 2)


def test_zero_trunk_output_zero_bias_gives_zero_head():
    head = T.LayerParams.glorot(8, 5, 3, np.random.default_rng(0))
    out = M.head_forward(np.zeros((1, 5, 4, 4)), head, 2)
    assert out.shape == (1, 2, 4, 4, 4) and not out.any()


def test_single_category_head_is_plain_conv():
    rng = np.random.default_rng(1)
    head = T.LayerParams.glorot(3, 2, 3, rng)
    head.bias[...] = rng.normal(size=3)
    x = rng.normal(size=(1, 2, 5, 5))
    out = M.head_forward(x, head, 1)
    np.testing.assert_allclose(out[:, 0], conv_oracle(x, head.kernel, head.bias, 1), atol=1e-12)


def test_head_split_mismatch_rejected():
    head = T.LayerParams.glorot(7, 2, 3, np.random.default_rng(0))
    with pytest.raises(T.ShapeError):
        M.head_forward(np.zeros((1, 2, 3, 3)), head, 3)


def test_class_scores_trivial_cases():
    np.testing.assert_array_equal(M.class_scores(np.zeros((6, 4, 2, 2))), np.zeros(6))
    head = np.zeros((6, 4, 2, 2))
    head[2, 1, 0, 1] = 3.5
    np.testing.assert_array_equal(M.class_scores(head), [0, 0, 3.5, 0, 0, 0])


def test_class_scores_match_summation_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        head = random_head(rng, c=int(rng.integers(1, 7)), d=int(rng.integers(1, 5)))
        np.testing.assert_allclose(M.class_scores(head), scores_oracle(head), atol=1e-10)


def test_class_scores_rejects_bad_rank():
    with pytest.raises(T.ShapeError):
        M.class_scores(np.zeros((3, 3)))


def test_sigmoid_likelihood():
    assert M.sigmoid_likelihood(np.zeros(3)).tolist() == [0.5, 0.5, 0.5]
    p = M.sigmoid_likelihood(np.linspace(-30, 30, 601))
    assert np.all(np.diff(p) >= 0) and p[-1] > 0.999999


def test_multilabel_loss_matches_explicit_cross_entropy():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(4, 6)) * 3
    y = (rng.random((4, 6)) > 0.5).astype(float)
    p = 1 / (1 + np.exp(-z))
    want = -(y * np.log(p) + (1 - y) * np.log(1 - p)).sum() / 4
    loss, _ = M.multilabel_loss(z, y)
    assert loss == pytest.approx(want, rel=1e-12)


def test_multilabel_loss_gradient_finite_differences():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(3, 6))
    y = (rng.random((3, 6)) > 0.5).astype(float)
    _, grad = M.multilabel_loss(z, y)
    eps = 1e-6
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += eps
        zm[idx] -= eps
        numeric = (M.multilabel_loss(zp, y)[0] - M.multilabel_loss(zm, y)[0]) / (2 * eps)
        assert T.relative_error(grad[idx], numeric) < 1e-4


def test_normalize_map_rules():
    assert not M.normalize_map(np.zeros((2, 2))).any()
    np.testing.assert_array_equal(M.normalize_map(np.full((2, 2), 0.3)), np.ones((2, 2)))
    np.testing.assert_allclose(M.normalize_map(np.array([[-1.0, 0.0], [1.0, 2.0]])), [[0, 1 / 3], [2 / 3, 1]])
    # an all-negative map keeps its shape: max is 1 unless the raw map is identically zero
    np.testing.assert_allclose(M.normalize_map(np.array([[-4.0, -2.0], [-3.0, -1.0]])), [[0, 2 / 3], [1 / 3, 1]])
    np.testing.assert_array_equal(M.normalize_map(-np.ones((2, 2))), np.ones((2, 2)))


def test_cam_map_uniform_weights_single_feature():
    f = np.random.default_rng(5).random((1, 3, 3)) + 0.1
    got = M.cam_map(f, np.ones((2, 1)), 0)
    np.testing.assert_allclose(got, M.normalize_map(f[0]))
    ratio = got[got > 0] / (f[0] - f[0].min())[got > 0]
    np.testing.assert_allclose(ratio, ratio[0])


def test_cam_map_zero_weights_and_oracle():
    rng = np.random.default_rng(6)
    f = rng.normal(size=(2, 4, 4))
    assert not M.cam_map(f, np.zeros((3, 2)), 1).any()
    w = rng.normal(size=(3, 2))
    raw = w[2, 0] * f[0] + w[2, 1] * f[1]
    np.testing.assert_allclose(M.cam_map(f, w, 2), M.normalize_map(raw), atol=1e-12)


def test_cam_map_unknown_category():
    with pytest.raises(ValueError, match="unknown category"):
        M.cam_map(np.zeros((2, 2, 2)), np.zeros((3, 2)), 3)


def test_threshold_single_passing_category():
    rng = np.random.default_rng(7)
    head = random_head(rng, c=3)
    z = np.array([-5.0, 2.0, -1.0])
    np.testing.assert_allclose(M.msroi_map(head, z, "threshold", threshold=0.0),
                               M.normalize_map(head[1].sum(axis=0)))


def test_threshold_none_passing_is_zero():
    head = random_head(np.random.default_rng(8), c=3)
    assert not M.msroi_map(head, np.array([-1.0, -2.0, -3.0]), "threshold", threshold=0.0).any()


def test_threshold_matches_masked_sum_oracle():
    rng = np.random.default_rng(9)
    for _ in range(20):
        head = random_head(rng, c=3)
        z = M.class_scores(head)
        s = np.sort(z)
        t = 0.5 * (s[0] + s[1])
        raw = np.zeros(head.shape[2:])
        for c in range(3):
            if z[c] > t:
                for d in range(head.shape[1]):
                    raw += head[c, d]
        np.testing.assert_allclose(M.msroi_raw(head, z, "threshold", threshold=t), raw, atol=1e-10)


def test_topk_rank_weights_oracle():
    rng = np.random.default_rng(10)
    head = random_head(rng)
    z = M.class_scores(head)
    order = np.argsort(-z)
    raw = sum((5 + 1 - r) / 5 * head[order[r - 1]].sum(axis=0) for r in range(1, 6))
    np.testing.assert_allclose(M.msroi_raw(head, z, "topk", top_k=5), raw, atol=1e-12)
    assert M.rank_weights(5).tolist() == [1.0, 0.8, 0.6, 0.4, 0.2]


def test_topk_larger_than_categories_rejected():
    head = random_head(np.random.default_rng(0), c=3)
    with pytest.raises(ValueError):
        M.msroi_map(head, M.class_scores(head), "topk", top_k=4)
    with pytest.raises(ValueError):
        M.msroi_map(head, M.class_scores(head), "bogus")


def test_topk_all_unweighted_equals_threshold_minus_infinity():
    rng = np.random.default_rng(11)
    for _ in range(20):
        head = random_head(rng)
        z = M.class_scores(head)
        a = M.msroi_map(head, z, "topk", top_k=6, weighted=False)
        b = M.msroi_map(head, z, "threshold", threshold=-np.inf)
        np.testing.assert_allclose(a, b, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_map_argmax_scale_equivariant(seed, s):
    head = random_head(np.random.default_rng(seed))
    z = M.class_scores(head)
    raw = M.msroi_raw(head, z)
    raw_s = M.msroi_raw(s * head, M.class_scores(s * head))
    assert np.argmax(raw) == np.argmax(raw_s)
    np.testing.assert_allclose(M.msroi_map(head, z), M.msroi_map(s * head, s * z), atol=1e-9)


def test_upsample_identity_and_constant():
    m = np.random.default_rng(12).random((3, 4))
    np.testing.assert_array_equal(M.upsample_map(m, 4, 3), m)
    np.testing.assert_array_equal(M.upsample_map(np.array([[0.7]]), 5, 3), np.full((3, 5), 0.7))


def test_upsample_hand_bilinear_grid():
    got = M.upsample_map(np.array([[0.0, 1.0], [2.0, 3.0]]), 4, 4)
    want = np.array([[0, 1, 2, 3], [2, 3, 4, 5], [4, 5, 6, 7], [6, 7, 8, 9]]) / 3
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_upsample_rejects_bad_targets():
    with pytest.raises(ValueError):
        M.upsample_map(np.ones((2, 2)), 0, 4)
    with pytest.raises(ValueError):
        M.upsample_map(np.ones((4, 4)), 2, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(1, 4), st.integers(0, 20), st.integers(0, 20))
def test_upsample_preserves_range(seed, h, w, dh, dw):
    m = np.random.default_rng(seed).random((h, w))
    out = M.upsample_map(m, w + dw, h + dh)
    assert out.min() >= m.min() and out.max() <= m.max()
    assert out[0, 0] == m[0, 0] and out[-1, -1] == pytest.approx(m[-1, -1])


def test_merge_table_roundtrip_and_errors():
    table = M.ClassMergeTable.parse("# comment\ncat 0\nkitten 0\ndog 1  # trailing\n")
    assert table.categories == 2
    np.testing.assert_array_equal(table.merge(["kitten", "dog"]), [1, 1])
    assert M.ClassMergeTable.parse(table.dumps()) == table
    with pytest.raises(KeyError):
        table.merge(["horse"])
    with pytest.raises(ValueError):
        M.ClassMergeTable({"a": 0, "b": 2})
    with pytest.raises(ValueError):
        M.ClassMergeTable.parse("a b c\n")


def _tiny_data(n=4, size=16, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, size, size, 3), dtype=np.uint8)
    labels = [["a"], ["b", "c"], ["c"], ["a", "b"]][:n]
    return images, labels, M.ClassMergeTable({"a": 0, "b": 1, "c": 2})


def test_train_rejects_empty_and_unknown_labels():
    images, labels, table = _tiny_data()
    net = M.MSROINet(TINY, seed=0)
    with pytest.raises(ValueError, match="empty"):
        M.train(net, images[:0], [], table, 1, 0.01, 0)
    with pytest.raises(KeyError):
        M.train(net, images[:1], [["zebra"]], table, 1, 0.01, 0)
    with pytest.raises(ValueError):
        M.train(net, images[:1], [[]], table, 1, 0.01, 0)
    with pytest.raises(ValueError):
        M.train(net, images, labels, table, 1, 0.01, 0, optimizer="lbfgs")


def test_train_zero_lr_leaves_loss_unchanged():
    images, labels, table = _tiny_data()
    net = M.MSROINet(TINY, seed=0)
    before = [p.kernel.copy() for p in net.params]
    hist = M.train(net, images, labels, table, epochs=1, lr=0.0, seed=0, batch_size=2)
    assert hist.losses[0] == pytest.approx(hist.initial_loss, rel=1e-12)
    for b, p in zip(before, net.params):
        np.testing.assert_array_equal(b, p.kernel)


def test_single_image_loss_strictly_decreases():
    images, labels, table = _tiny_data(1)
    net = M.MSROINet(TINY, seed=0)
    hist = M.train(net, images, labels, table, epochs=8, lr=0.01, seed=0, optimizer="sgd")
    # each recorded loss is measured before that epoch's update
    assert hist.losses[0] == pytest.approx(hist.initial_loss)
    curve = hist.losses
    assert all(b < a for a, b in zip(curve, curve[1:]))


def test_training_is_deterministic():
    images, labels, table = _tiny_data()
    nets = [M.MSROINet(TINY, seed=3) for _ in range(2)]
    hists = [M.train(n, images, labels, table, epochs=2, lr=1e-3, seed=5, batch_size=3, optimizer="adam")
             for n in nets]
    assert hists[0].losses == hists[1].losses
    for a, b in zip(*(n.params for n in nets)):
        np.testing.assert_array_equal(a.kernel, b.kernel)


def test_full_network_gradcheck_32px():
    net = M.MSROINet(seed=0)
    rng = np.random.default_rng(0)
    x = M.preprocess(rng.integers(0, 256, size=(2, 32, 32, 3), dtype=np.uint8))
    y = np.array([[1, 0, 1, 0, 0, 0], [0, 1, 0, 0, 0, 1]], dtype=float)

    def fn(inp):
        loss, _, dx = net.loss_and_grad(inp, y)
        return loss, dx
    assert T.gradcheck(fn, net.params, x, epsilon=1e-6, samples=4, seed=1) < 1e-4


def test_cam_network_gradcheck():
    net = M.CAMNet(TINY, seed=0)
    rng = np.random.default_rng(1)
    x = M.preprocess(rng.integers(0, 256, size=(2, 8, 8, 3), dtype=np.uint8))
    y = np.array([[1, 0, 1], [0, 1, 0]], dtype=float)

    def fn(inp):
        loss, _, dx = net.loss_and_grad(inp, y)
        return loss, dx
    assert T.gradcheck(fn, net.params, x, epsilon=1e-6, samples=6) < 1e-4


def test_saliency_shape_range_and_checkpoint(tmp_path):
    net = M.MSROINet(TINY, seed=0)
    img = np.random.default_rng(2).integers(0, 256, size=(24, 40, 3), dtype=np.uint8)
    sal = net.saliency(img, top_k=2)
    assert sal.shape == (24, 40) and sal.min() >= 0 and sal.max() <= 1
    net.save(tmp_path / "n.ckpt")
    again = M.MSROINet.load(tmp_path / "n.ckpt", TINY)
    np.testing.assert_array_equal(again.saliency(img, top_k=2), sal)
    cam = M.CAMNet(TINY, seed=0)
    cam_sal = cam.saliency(img)
    assert cam_sal.shape == (24, 40)
    cam.save(tmp_path / "c.ckpt")
    np.testing.assert_array_equal(M.CAMNet.load(tmp_path / "c.ckpt", TINY).saliency(img), cam_sal)


def test_load_wrong_layer_count(tmp_path):
    T.save_checkpoint(tmp_path / "x.ckpt", [T.LayerParams.glorot(2, 3, 3, np.random.default_rng(0))])
    with pytest.raises(T.ShapeError):
        M.MSROINet.load(tmp_path / "x.ckpt")


# full-scale recipe: 2000 synthetic 64 px images, Adam, batch 16; about 40 minutes on one core
SHAPES_RECIPE = dict(count=2000, seed=1, epochs=16, lr=1e-3)
SHAPES_MIN_ACCURACY = 0.9


@pytest.mark.slow
def test_training_on_synthetic_shapes_reaches_accuracy():
    from semjpeg.synthetic import SyntheticSpec, default_merge_table, make_synthetic_dataset
    r = SHAPES_RECIPE
    data = make_synthetic_dataset(SyntheticSpec(count=r["count"], seed=r["seed"]))
    table = M.ClassMergeTable(default_merge_table())
    hist = M.train(M.MSROINet(seed=0), data.images, data.labels, table,
                   epochs=r["epochs"], lr=r["lr"], seed=r["seed"], optimizer="adam")
    assert hist.losses[-1] < hist.initial_loss
    assert hist.accuracies[-1] >= SHAPES_MIN_ACCURACY, hist.accuracies
