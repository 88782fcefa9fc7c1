import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fusionsketch.exceptions import DimensionError, FusionConfigError, NumericalConsistencyError
from fusionsketch.sketch import (
    CountSketchParams,
    circular_convolve,
    circular_convolve_direct,
    count_sketch,
    count_sketch_backward,
    dft,
    dft_direct,
    idft,
    make_params,
    tensor_sketch,
    tensor_sketch_backward,
)

from oracles import (
    circular_convolution_loop,
    count_sketch_loop,
    dft_loop,
    max_relative_error,
    numeric_gradient,
    sketched_outer_product,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2**32)


def vec(n):
    return arrays(np.float64, n, elements=finite)


# --- params -----------------------------------------------------------------

def test_make_params_deterministic_and_streams_independent():
    a = make_params(50, 16, seed=3, stream=(1,))
    assert a == make_params(50, 16, seed=3, stream=(1,))
    assert a != make_params(50, 16, seed=3, stream=(2,))
    assert a != make_params(50, 16, seed=4, stream=(1,))


def test_params_are_immutable():
    p = make_params(5, 4, 0)
    with pytest.raises(ValueError):
        p.buckets[0] = 1
    with pytest.raises(AttributeError):
        p.sketch_dim = 3


@pytest.mark.parametrize(
    "buckets,signs,d",
    [([0, 4], [1, 1], 4), ([0, -1], [1, 1], 4), ([0, 1], [1, 0], 4), ([0, 1], [1, 2], 4), ([0], [1], 0), ([], [], 3)],
)
def test_params_validation(buckets, signs, d):
    with pytest.raises(ValueError):
        CountSketchParams(buckets, signs, d)


def test_params_length_mismatch():
    with pytest.raises(DimensionError):
        CountSketchParams([0, 1], [1], 4)


def test_params_dict_round_trip():
    p = make_params(7, 5, seed=11, stream=(2, 0, 1))
    q = CountSketchParams.from_dict(p.to_dict())
    assert q == p and hash(q) == hash(p) and q.stream == (2, 0, 1)


@given(c=st.integers(1, 200), d=st.integers(1, 64), seed=seeds)
def test_params_ranges(c, d, seed):
    p = make_params(c, d, seed)
    assert p.buckets.min() >= 0 and p.buckets.max() < d
    assert set(np.unique(p.signs)) <= {-1, 1}


def test_params_roughly_uniform():
    p = make_params(64000, 16, seed=1)
    counts = np.bincount(p.buckets, minlength=16)
    assert np.all(np.abs(counts - 4000) < 5 * np.sqrt(4000))
    assert abs(p.signs.mean()) < 5 / np.sqrt(64000)


# --- count sketch -------------------------------------------------------------

@given(st.data())
def test_count_sketch_matches_loop(data):
    c = data.draw(st.integers(1, 64))
    d = data.draw(st.integers(1, 32))
    x = data.draw(vec(c))
    p = make_params(c, d, data.draw(seeds))
    np.testing.assert_allclose(count_sketch(x, p), count_sketch_loop(x, p.buckets, p.signs, d), atol=1e-12)


@given(st.data())
def test_count_sketch_linear(data):
    c, d = data.draw(st.integers(1, 30)), data.draw(st.integers(1, 20))
    p = make_params(c, d, data.draw(seeds))
    x, y = data.draw(vec(c)), data.draw(vec(c))
    a = data.draw(st.floats(-5, 5))
    np.testing.assert_allclose(count_sketch(a * x + y, p), a * count_sketch(x, p) + count_sketch(y, p), atol=1e-9)


@given(st.data())
def test_count_sketch_adjoint(data):
    # <CS(x), g> == <x, CS^T(g)>
    c, d = data.draw(st.integers(1, 30)), data.draw(st.integers(1, 20))
    p = make_params(c, d, data.draw(seeds))
    x, g = data.draw(vec(c)), data.draw(vec(d))
    assert np.dot(count_sketch(x, p), g) == pytest.approx(np.dot(x, count_sketch_backward(g, p)), rel=1e-9, abs=1e-6)


def test_count_sketch_batch_equals_rows():
    rng = np.random.default_rng(0)
    p = make_params(9, 5, 2)
    X = rng.standard_normal((4, 9))
    np.testing.assert_allclose(count_sketch(X, p), np.stack([count_sketch(x, p) for x in X]), atol=1e-14)
    G = rng.standard_normal((4, 5))
    np.testing.assert_allclose(count_sketch_backward(G, p), np.stack([count_sketch_backward(g, p) for g in G]))


def test_count_sketch_preserves_single_precision():
    p = make_params(6, 4, 0)
    assert count_sketch(np.ones(6, np.float32), p).dtype == np.float32


def test_count_sketch_shape_errors():
    p = make_params(6, 4, 0)
    with pytest.raises(DimensionError):
        count_sketch(np.ones(5), p)
    with pytest.raises(DimensionError):
        count_sketch(np.ones((2, 2, 6)), p)
    with pytest.raises(DimensionError):
        count_sketch_backward(np.ones(3), p)


# --- transforms ---------------------------------------------------------------

@given(st.integers(1, 24).flatmap(vec))
def test_dft_matches_loop(x):
    scale = max(1.0, np.abs(x).sum())
    np.testing.assert_allclose(dft(x), dft_loop(x), atol=1e-9 * scale)
    np.testing.assert_allclose(dft_direct(x), dft_loop(x), atol=1e-9 * scale)


@given(st.integers(1, 40).flatmap(vec))
def test_idft_inverts_dft(x):
    np.testing.assert_allclose(idft(dft(x)), x, atol=1e-9 * max(1.0, np.abs(x).max()))


def test_idft_rejects_complex_residue():
    X = dft(np.arange(8.0))
    X[1] += 1j  # breaks Hermitian symmetry
    with pytest.raises(NumericalConsistencyError):
        idft(X)


@given(st.integers(1, 24).flatmap(lambda d: st.tuples(vec(d), vec(d))))
def test_circular_convolution(ab):
    a, b = ab
    ref = circular_convolution_loop(a, b)
    tol = 1e-9 * max(1.0, np.abs(a).sum() * np.abs(b).max())
    np.testing.assert_allclose(circular_convolve(a, b), ref, atol=tol)
    np.testing.assert_allclose(circular_convolve_direct(a, b), ref, atol=tol)
    np.testing.assert_allclose(circular_convolve(a, b), circular_convolve(b, a), atol=tol)


def test_convolution_length_mismatch():
    with pytest.raises(DimensionError):
        circular_convolve(np.ones(3), np.ones(4))
    with pytest.raises(DimensionError):
        circular_convolve_direct(np.ones(3), np.ones(4))


# --- tensor sketch --------------------------------------------------------------

@given(st.data())
def test_tensor_sketch_is_sketched_outer_product(data):
    n = data.draw(st.integers(2, 3))
    cs = [data.draw(st.integers(1, 8)) for _ in range(n)]
    d = data.draw(st.integers(1, 32))
    seed = data.draw(seeds)
    ps = [make_params(c, d, seed, stream=(m,)) for m, c in enumerate(cs)]
    xs = [data.draw(vec(c)) for c in cs]
    ref = sketched_outer_product(xs, [p.buckets for p in ps], [p.signs for p in ps], d)
    got = tensor_sketch(xs, ps)
    scale = max(1.0, float(np.prod([np.abs(x).sum() for x in xs])))
    np.testing.assert_allclose(got, ref, atol=1e-9 * scale)


@given(st.data())
def test_tensor_sketch_multilinear(data):
    d = data.draw(st.integers(1, 16))
    ps = [make_params(4, d, 1, (0,)), make_params(3, d, 1, (1,))]
    x1, x1b, x2 = data.draw(vec(4)), data.draw(vec(4)), data.draw(vec(3))
    a = data.draw(st.floats(-3, 3))
    lhs = tensor_sketch([a * x1 + x1b, x2], ps)
    rhs = a * tensor_sketch([x1, x2], ps) + tensor_sketch([x1b, x2], ps)
    np.testing.assert_allclose(lhs, rhs, atol=1e-7 * max(1.0, np.abs(lhs).max()))


def test_tensor_sketch_batch_equals_rows():
    rng = np.random.default_rng(1)
    ps = [make_params(5, 8, 0, (0,)), make_params(6, 8, 0, (1,))]
    X = [rng.standard_normal((3, 5)), rng.standard_normal((3, 6))]
    rows = np.stack([tensor_sketch([X[0][i], X[1][i]], ps) for i in range(3)])
    np.testing.assert_allclose(tensor_sketch(X, ps), rows, atol=1e-12)


def test_tensor_sketch_errors():
    p8, q8, p4 = make_params(3, 8, 0), make_params(3, 8, 1), make_params(3, 4, 0)
    x = np.ones(3)
    with pytest.raises(ValueError):
        tensor_sketch([x], [p8])
    with pytest.raises(ValueError):
        tensor_sketch([x, x], [p8])
    with pytest.raises(FusionConfigError):
        tensor_sketch([x, x], [p8, p4])
    with pytest.raises(DimensionError):
        tensor_sketch([x, np.ones(4)], [p8, q8])


def test_unbiased_inner_product_estimate():
    rng = np.random.default_rng(5)
    x1, x2, y1, y2 = (rng.standard_normal(8) for _ in range(4))
    est = []
    for seed in range(1000):
        ps = [make_params(8, 32, seed, (0,)), make_params(8, 32, seed, (1,))]
        est.append(tensor_sketch([x1, x2], ps) @ tensor_sketch([y1, y2], ps))
    est = np.array(est)
    target = (x1 @ y1) * (x2 @ y2)
    assert abs(est.mean() - target) <= 3 * est.std(ddof=1) / np.sqrt(len(est))


# --- backward ---------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("seed", range(5))
def test_tensor_sketch_backward_matches_numeric(n, seed):
    rng = np.random.default_rng(seed)
    cs = [4, 3, 5][:n]
    d = 8
    ps = [make_params(c, d, seed, (m,)) for m, c in enumerate(cs)]
    xs = [rng.standard_normal(c) for c in cs]
    w = rng.standard_normal(d)
    for k in range(n):
        def f(xk, k=k):
            return float(w @ tensor_sketch(xs[:k] + [xk] + xs[k + 1:], ps))
        num = numeric_gradient(f, xs[k])
        for method in ("fft", "direct"):
            assert max_relative_error(tensor_sketch_backward(w, xs, ps, k, method=method), num) < 1e-6


@given(st.data())
def test_backward_methods_agree(data):
    n = data.draw(st.integers(2, 3))
    d = data.draw(st.integers(1, 24))
    seed = data.draw(seeds)
    cs = [data.draw(st.integers(1, 10)) for _ in range(n)]
    ps = [make_params(c, d, seed, (m,)) for m, c in enumerate(cs)]
    xs = [data.draw(vec(c)) for c in cs]
    g = data.draw(vec(d))
    k = data.draw(st.integers(0, n - 1))
    a = tensor_sketch_backward(g, xs, ps, k, method="fft")
    b = tensor_sketch_backward(g, xs, ps, k, method="direct")
    scale = max(1.0, np.abs(g).max() * float(np.prod([np.abs(x).sum() for i, x in enumerate(xs) if i != k])))
    np.testing.assert_allclose(a, b, atol=1e-9 * scale)


def test_backward_batch_and_errors():
    rng = np.random.default_rng(2)
    ps = [make_params(4, 8, 0, (0,)), make_params(3, 8, 0, (1,))]
    X = [rng.standard_normal((2, 4)), rng.standard_normal((2, 3))]
    G = rng.standard_normal((2, 8))
    batch = tensor_sketch_backward(G, X, ps, 1)
    rows = np.stack([tensor_sketch_backward(G[i], [X[0][i], X[1][i]], ps, 1) for i in range(2)])
    np.testing.assert_allclose(batch, rows, atol=1e-12)
    with pytest.raises(ValueError):
        tensor_sketch_backward(G, X, ps, 2)
    with pytest.raises(ValueError):
        tensor_sketch_backward(G, X, ps, 0, method="magic")
