import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snk.errors import DivisibilityError, ShapeError
from snk.kernels import (
    BnParams,
    ConvSpec,
    avg_pool,
    batch_norm,
    channel_shuffle,
    channel_shuffle_perm,
    conv2d_fast,
    conv2d_naive,
    fold_bn,
    fully_connected,
    global_avg_pool,
    max_pool,
    relu,
)
from snk.kernels.threads import backend_threads, check_env, single_thread
from snk.errors import ThreadingError
from snk.tensor import Tensor
from snk.verify import dyadic


def rel_err(a, b):
    a, b = a.data.astype(np.float64), b.data.astype(np.float64)
    return float(np.max(np.abs(a - b) / (np.abs(b) + 1e-6)))


# -- ConvSpec ----------------------------------------------------------------

def test_convspec_validation():
    with pytest.raises(DivisibilityError):
        ConvSpec(6, 4, 1, groups=4)
    with pytest.raises(DivisibilityError):
        ConvSpec(8, 6, 1, groups=4)
    with pytest.raises(ShapeError):
        ConvSpec(4, 4, 1, groups=4, depthwise=True)  # depthwise must be 3x3
    with pytest.raises(ShapeError):
        ConvSpec(4, 4, 3, stride=3)
    assert ConvSpec.depthwise3x3(8).weight_shape == (8, 1, 3, 3)


def test_output_dims_formula():
    assert ConvSpec(3, 24, 3, 2, 1).output_hw(224, 224) == (112, 112)
    assert ConvSpec(3, 24, 3, 2, 1).output_hw(7, 9) == (4, 5)


# -- naive conv ----------------------------------------------------------------

def test_naive_dot_product():
    x = Tensor.from_flat((1, 2, 1, 1), [1, 2])
    w = np.array([3, 4], np.float32).reshape(1, 2, 1, 1)
    assert conv2d_naive(x, w, ConvSpec(2, 1, 1)).data.ravel().tolist() == [11.0]


def test_naive_grouped_is_block_diagonal():
    x = Tensor.from_flat((1, 2, 1, 1), [5, 7])
    w = np.array([2, 3], np.float32).reshape(2, 1, 1, 1)
    assert conv2d_naive(x, w, ConvSpec(2, 2, 1, groups=2)).data.ravel().tolist() == [10.0, 21.0]


def test_identity_kernel(rng):
    x = Tensor(rng.standard_normal((1, 5, 6, 7)))
    w = np.eye(5, dtype=np.float32).reshape(5, 5, 1, 1)
    for fn in (conv2d_naive, conv2d_fast):
        assert fn(x, w, ConvSpec(5, 5, 1)) == x


def test_shape_errors(rng):
    x = Tensor(rng.standard_normal((1, 4, 5, 5)))
    with pytest.raises(ShapeError):
        conv2d_naive(x, np.zeros((4, 3, 1, 1)), ConvSpec(3, 4, 1))
    with pytest.raises(ShapeError):
        conv2d_fast(x, np.zeros((4, 4, 3, 3)), ConvSpec(4, 4, 1))
    with pytest.raises(ShapeError):
        conv2d_fast(Tensor(np.zeros((1, 4, 2, 2))), np.zeros((4, 4, 5, 5)), ConvSpec(4, 4, 5))


def test_naive_grouped_g1_equals_dense_bitwise(rng):
    x = Tensor(rng.standard_normal((1, 6, 7, 7)))
    w = rng.standard_normal((4, 6, 3, 3)).astype(np.float32)
    a = conv2d_naive(x, w, ConvSpec(6, 4, 3, 1, 1, groups=1))
    # dense conv written as an explicit sum over input channels
    ref = sum(conv2d_naive(Tensor(x.data[:, i : i + 1]), w[:, i : i + 1], ConvSpec(1, 4, 3, 1, 1)).data.astype(np.float64)
              for i in range(6))
    assert np.allclose(a.data, ref, atol=1e-5)


def test_naive_depthwise_equals_grouped(rng):
    x = Tensor(rng.standard_normal((2, 6, 9, 8)))
    w = rng.standard_normal((6, 1, 3, 3)).astype(np.float32)
    for s in (1, 2):
        dw = conv2d_naive(x, w, ConvSpec.depthwise3x3(6, s))
        grouped = conv2d_naive(x, w, ConvSpec(6, 6, 3, s, 1, groups=6))
        assert dw == grouped


# -- fast conv -----------------------------------------------------------------

def test_fast_grouped_pointwise_matches_naive(rng):
    spec = ConvSpec(8, 8, 1, groups=4)
    x = Tensor(dyadic(rng, (1, 8, 14, 14), 16))
    w = dyadic(rng, spec.weight_shape, 8)
    assert rel_err(conv2d_fast(x, w, spec), conv2d_naive(x, w, spec)) <= 1e-4


def test_fast_dense_3x3_matches_naive(rng):
    spec = ConvSpec(3, 5, 3, 1, 1)
    x = Tensor(dyadic(rng, (1, 3, 8, 8), 16))
    w = dyadic(rng, spec.weight_shape, 8)
    assert rel_err(conv2d_fast(x, w, spec), conv2d_naive(x, w, spec)) <= 1e-4


def test_depthwise_all_ones_interior():
    x = Tensor(np.ones((1, 3, 5, 5)))
    w = np.ones((3, 1, 3, 3), np.float32)
    out = conv2d_fast(x, w, ConvSpec.depthwise3x3(3))
    assert out.data[0, :, 2, 2].tolist() == [9.0, 9.0, 9.0]
    assert out.data[0, 0, 0, 0] == 4.0  # corner sees a 2x2 window


def test_fast_tiles_large_outputs(rng, monkeypatch):
    from snk.kernels import conv as conv_mod

    monkeypatch.setattr(conv_mod, "TILE_COLUMNS", 7)
    spec = ConvSpec(4, 6, 3, 2, 1, groups=2)
    x = Tensor(dyadic(rng, (2, 4, 13, 11), 16))
    w = dyadic(rng, spec.weight_shape, 8)
    assert conv2d_fast(x, w, spec) == conv2d_naive(x, w, spec)


@settings(max_examples=60, deadline=None)
@given(g=st.sampled_from([1, 2, 3, 4]), cin=st.integers(1, 3), cout=st.integers(1, 3), k=st.sampled_from([1, 3]),
       s=st.sampled_from([1, 2]), h=st.integers(3, 10), w=st.integers(3, 10), seed=st.integers(0, 2**16))
def test_fast_equals_naive_property(g, cin, cout, k, s, h, w, seed):
    rng = np.random.default_rng(seed)
    spec = ConvSpec(g * cin, g * cout, k, s, k // 2, g)
    x = Tensor(dyadic(rng, (1, spec.in_channels, h, w), 16))
    wt = dyadic(rng, spec.weight_shape, 8)
    assert rel_err(conv2d_fast(x, wt, spec), conv2d_naive(x, wt, spec)) <= 1e-4


def test_fast_gaussian_inputs_scale_aware(rng):
    # with continuous inputs the fp32 fast path differs only by reassociation
    spec = ConvSpec(24, 24, 3, 1, 1, groups=3)
    x = Tensor(rng.standard_normal((1, 24, 12, 12)))
    w = rng.standard_normal(spec.weight_shape).astype(np.float32)
    a, b = conv2d_fast(x, w, spec).data, conv2d_naive(x, w, spec).data
    assert np.max(np.abs(a - b)) <= 1e-4 * np.max(np.abs(b))


@pytest.mark.parametrize("fn", [conv2d_naive, conv2d_fast])
def test_zero_input_zero_output(fn):
    spec = ConvSpec(6, 6, 3, 2, 1, groups=3)
    out = fn(Tensor.zeros((1, 6, 5, 5)), np.ones(spec.weight_shape, np.float32), spec)
    assert not out.data.any()


def test_bias_added(rng):
    spec = ConvSpec(2, 3, 1)
    x = Tensor.zeros((1, 2, 2, 2))
    b = np.array([1, 2, 3], np.float32)
    for fn in (conv2d_naive, conv2d_fast):
        out = fn(x, np.zeros(spec.weight_shape), spec, b)
        assert out.data[0, :, 1, 1].tolist() == [1, 2, 3]


# -- shuffle -------------------------------------------------------------------

def test_perm_examples():
    assert channel_shuffle_perm(4, 2).tolist() == [0, 2, 1, 3]
    assert channel_shuffle_perm(6, 3).tolist() == [0, 2, 4, 1, 3, 5]
    assert channel_shuffle_perm(7, 1).tolist() == list(range(7))
    with pytest.raises(DivisibilityError):
        channel_shuffle_perm(6, 4)


def test_perm_matches_closed_form():
    for c in range(1, 40):
        for g in (d for d in range(1, c + 1) if c % d == 0):
            n = c // g
            assert channel_shuffle_perm(c, g).tolist() == [(i % g) * n + i // g for i in range(c)]


def test_shuffle_tensor():
    x = Tensor(np.arange(4).reshape(1, 4, 1, 1))  # channels A, B, C, D
    assert channel_shuffle(x, 2).data.ravel().tolist() == [0, 2, 1, 3]
    assert channel_shuffle(x, 1) == x
    with pytest.raises(DivisibilityError):
        channel_shuffle(x, 3)


@given(n=st.integers(1, 6), g=st.integers(1, 6), seed=st.integers(0, 1000))
def test_shuffle_inverts_and_preserves_planes(n, g, seed):
    c = n * g
    x = Tensor(np.random.default_rng(seed).standard_normal((1, c, 3, 2)))
    y = channel_shuffle(x, g)
    assert channel_shuffle(y, c // g) == x
    perm = channel_shuffle_perm(c, g)
    for i in range(c):
        assert np.array_equal(y.data[0, i], x.data[0, perm[i]])


# -- batch norm ----------------------------------------------------------------

def test_fold_identity_bn(rng):
    w = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    wf, bf = fold_bn(w, b, BnParams.identity(4, eps=0.0))
    assert np.array_equal(wf, w) and np.array_equal(bf, b)


def test_fold_gamma2_beta1(rng):
    w = rng.standard_normal((3, 1, 1, 1)).astype(np.float32)
    bn = BnParams(np.full(3, 2.0), np.ones(3), np.zeros(3), np.ones(3), eps=0.0)
    wf, bf = fold_bn(w, np.zeros(3), bn)
    assert np.array_equal(wf, 2 * w)
    assert bf.tolist() == [1.0, 1.0, 1.0]


def test_fold_matches_conv_then_normalize(rng):
    spec = ConvSpec(8, 6, 3, 1, 1, groups=2)
    x = Tensor(rng.uniform(-1, 1, (1, 8, 10, 10)))
    w = (rng.standard_normal(spec.weight_shape) / np.sqrt(36)).astype(np.float32)
    bn = BnParams(rng.uniform(0.5, 2, 6), rng.normal(size=6), rng.normal(size=6), rng.uniform(0.5, 2, 6))
    # oracle written out by hand rather than through batch_norm
    raw = conv2d_naive(x, w, spec).data.astype(np.float64)
    expected = (raw - bn.mean[None, :, None, None]) / np.sqrt(bn.var[None, :, None, None] + bn.eps) \
        * bn.gamma[None, :, None, None] + bn.beta[None, :, None, None]
    wf, bf = fold_bn(w, None, bn)
    assert np.max(np.abs(conv2d_naive(x, wf, spec, bf).data - expected)) <= 1e-5
    assert np.max(np.abs(batch_norm(conv2d_naive(x, w, spec), bn).data - expected)) <= 1e-5


def test_fold_length_mismatch():
    with pytest.raises(ShapeError):
        fold_bn(np.zeros((4, 1, 1, 1)), None, BnParams.identity(3))
    with pytest.raises(ShapeError):
        BnParams(np.ones(3), np.ones(2), np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        BnParams(np.ones(2), np.ones(2), np.ones(2), np.array([-1.0, 1.0]), eps=0.0)


# -- pooling, fc, relu ---------------------------------------------------------

def test_pool_dims():
    x = Tensor.zeros((1, 2, 112, 112))
    assert max_pool(x, 3, 2, 1).shape == (1, 2, 56, 56)
    assert avg_pool(x, 3, 2, 1).shape == (1, 2, 56, 56)
    with pytest.raises(ShapeError):
        max_pool(Tensor.zeros((1, 1, 2, 2)), 5, 1, 0)


def test_pool_constant_preserved_including_borders():
    x = Tensor(np.full((1, 3, 7, 6), 2.5))
    for pool in (avg_pool, max_pool):
        assert np.all(pool(x, 3, 2, 1).data == 2.5)


def test_avg_pool_hand_value():
    x = Tensor.from_flat((1, 1, 2, 2), [1, 2, 3, 4])
    assert avg_pool(x, 2, 2, 0).data.ravel().tolist() == [2.5]


def test_avg_pool_border_counts_in_bounds_only():
    x = Tensor.from_flat((1, 1, 2, 2), [1, 2, 3, 4])
    # top-left window with pad 1 covers only the single element 1
    assert avg_pool(x, 3, 2, 1).data[0, 0, 0, 0] == pytest.approx(2.5)
    assert avg_pool(x, 2, 2, 1).data[0, 0, 0, 0] == 1.0


def test_max_pool_ignores_padding_with_negatives():
    x = Tensor(-np.ones((1, 1, 3, 3)))
    assert np.all(max_pool(x, 3, 2, 1).data == -1)


def test_global_pool():
    assert global_avg_pool(Tensor.zeros((1, 576, 7, 7))).shape == (1, 576, 1, 1)
    assert global_avg_pool(Tensor(np.full((1, 2, 3, 3), 4.0))).data.ravel().tolist() == [4.0, 4.0]
    x = Tensor(np.arange(49).reshape(1, 1, 7, 7))
    assert global_avg_pool(x).data.item() == 24.0


def test_fully_connected():
    x = Tensor.from_flat((1, 3, 1, 1), [1, 2, 3])
    assert fully_connected(x, np.eye(3), np.zeros(3)).tolist() == [[1, 2, 3]]
    assert fully_connected(x, np.ones((4, 3)), np.zeros(4)).tolist() == [[6, 6, 6, 6]]
    assert fully_connected(Tensor.zeros((1, 576, 1, 1)), np.zeros((1000, 576)), np.zeros(1000)).shape == (1, 1000)
    with pytest.raises(ShapeError):
        fully_connected(Tensor.zeros((1, 3, 2, 2)), np.eye(3), np.zeros(3))
    with pytest.raises(ShapeError):
        fully_connected(x, np.eye(4), np.zeros(4))


def test_relu():
    x = Tensor.from_flat((1, 3, 1, 1), [-1, 0, 2])
    assert relu(x).data.ravel().tolist() == [0, 0, 2]
    pos = Tensor(np.abs(np.random.default_rng(0).standard_normal((1, 2, 3, 3))))
    assert relu(pos) == pos
    assert relu(relu(x)) == relu(x)


# -- threading guard -----------------------------------------------------------

def test_single_thread_context():
    with single_thread():
        assert backend_threads() == 1


def test_env_guard(monkeypatch):
    monkeypatch.setenv("SNK_THREADS", "4")
    with pytest.raises(ThreadingError):
        check_env()
    monkeypatch.setenv("SNK_THREADS", "1")
    check_env()
