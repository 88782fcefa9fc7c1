import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fusionsketch.exceptions import CapacityError, DimensionError, FusionConfigError
from fusionsketch.fusion import (
    FusionKind,
    FusionLayer,
    FusionSpec,
    all_subsets,
    derive_subset_params,
    fuse,
    fuse_backward,
    fuse_bilinear,
    fuse_concat,
    fuse_generalized,
    fuse_tensor_sketch,
    output_dim,
)
from fusionsketch.sketch import make_params

from oracles import max_relative_error, numeric_gradient, outer_product_flat, sketched_outer_product

dims_st = st.lists(st.integers(1, 6), min_size=2, max_size=4)


def rand_inputs(dims, seed=0, batch=None):
    rng = np.random.default_rng(seed)
    shape = () if batch is None else (batch,)
    return [rng.standard_normal(shape + (c,)) for c in dims]


# --- spec ---------------------------------------------------------------------

def test_spec_defaults():
    s = FusionSpec()
    assert s.kind is FusionKind.GENERALIZED and s.sketch_dim == 4096 and s.subsets is None


def test_spec_canonicalises_subsets():
    s = FusionSpec("generalized", 8, subsets=[[2, 0, 1], [1, 0], [2, 1]])
    assert s.subsets == ((0, 1), (1, 2), (0, 1, 2))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="outer"),
        dict(sketch_dim=0),
        dict(subsets=[[0]]),
        dict(subsets=[[0, 0]]),
        dict(subsets=[[0, -1]]),
        dict(subsets=[[0, 1], [1, 0]]),
        dict(bilinear_cap=0),
    ],
)
def test_spec_rejects(kwargs):
    with pytest.raises(FusionConfigError):
        FusionSpec(**kwargs)


def test_spec_dict_round_trip_and_unknown_keys():
    s = FusionSpec("generalized", 16, [[0, 2]], seed=9)
    assert FusionSpec.from_dict(s.to_dict()) == s
    with pytest.raises(FusionConfigError):
        FusionSpec.from_dict({"kind": "concat", "weights": [1]})


def test_subset_out_of_range():
    with pytest.raises(FusionConfigError):
        FusionLayer(FusionSpec("generalized", 8, [[0, 3]]), [2, 2, 2])


def test_all_subsets_order():
    assert all_subsets(3) == ((0, 1), (0, 2), (1, 2), (0, 1, 2))
    assert all_subsets(1) == ()


# --- output dims and layout ------------------------------------------------------

def test_three_modality_generalized_layout():
    layer = FusionLayer(FusionSpec("generalized", 4096), [1024, 1024, 1024])
    assert layer.output_dim == 19456
    kinds = [s.kind for s in layer.layout]
    assert kinds.count("single") == 3
    assert [s.sources for s in layer.layout if s.kind == "sketch"] == [(0, 1), (0, 2), (1, 2), (0, 1, 2)]
    offsets = [s.offset for s in layer.layout]
    assert offsets == [0, 1024, 2048, 3072, 7168, 11264, 15360]
    assert layer.layout[-1].stop == 19456


@given(dims=dims_st, d=st.integers(1, 64))
def test_output_dim_formulae(dims, d):
    n = len(dims)
    assert output_dim(FusionSpec("concat"), dims) == sum(dims)
    assert output_dim(FusionSpec("bilinear"), dims) == int(np.prod(dims))
    assert output_dim(FusionSpec("tensor_sketch", d), dims) == d
    assert output_dim(FusionSpec("generalized", d), dims) == sum(dims) + (2**n - n - 1) * d


@given(dims=dims_st, d=st.integers(1, 16), kind=st.sampled_from(list(FusionKind)))
def test_layout_tiles_output(dims, d, kind):
    layer = FusionLayer(FusionSpec(kind, d), dims)
    pos = 0
    for seg in layer.layout:
        assert seg.offset == pos
        pos = seg.stop
    assert pos == layer.output_dim == len(layer.fuse(rand_inputs(dims)))


# --- forward against oracles ------------------------------------------------------

@given(dims=dims_st, seed=st.integers(0, 100))
def test_concat_and_bilinear_match_oracles(dims, seed):
    xs = rand_inputs(dims, seed)
    np.testing.assert_array_equal(fuse_concat(xs).values, np.concatenate(xs))
    np.testing.assert_allclose(fuse_bilinear(xs).values, outer_product_flat(xs), rtol=1e-12, atol=1e-14)


@given(dims=st.lists(st.integers(1, 5), min_size=2, max_size=3), d=st.integers(1, 16), seed=st.integers(0, 50))
def test_generalized_segments_match_oracle(dims, d, seed):
    spec = FusionSpec("generalized", d, seed=seed)
    layer = FusionLayer(spec, dims)
    xs = rand_inputs(dims, seed)
    fused = layer.fuse(xs)
    for seg in fused.layout:
        got = fused.segment(seg)
        if seg.kind == "single":
            np.testing.assert_array_equal(got, xs[seg.sources[0]])
        else:
            ps = layer.params[seg.sources]
            ref = sketched_outer_product([xs[m] for m in seg.sources], [p.buckets for p in ps], [p.signs for p in ps], d)
            np.testing.assert_allclose(got, ref, atol=1e-10 * max(1, np.abs(ref).max()))


def test_tensor_sketch_equals_generalized_full_subset_segment():
    dims = [3, 4, 5]
    spec_g = FusionSpec("generalized", 16, seed=2)
    spec_t = FusionSpec("tensor_sketch", 16, seed=2)
    xs = rand_inputs(dims, 1)
    g = fuse_generalized(xs, spec_g)
    t = fuse_tensor_sketch(xs, spec_t)
    np.testing.assert_array_equal(g.segment(g.layout[-1]), t.values)


def test_subset_params_independent_of_other_subsets():
    # a subset's hashes depend only on (seed, subset, member)
    dims = [3, 4, 5]
    full = FusionLayer(FusionSpec("generalized", 8, seed=4), dims)
    only = FusionLayer(FusionSpec("generalized", 8, [[0, 2]], seed=4), dims)
    assert full.params[(0, 2)] == only.params[(0, 2)]
    assert full.params[(0, 1)][0] != full.params[(0, 2)][0]
    assert derive_subset_params(FusionSpec("generalized", 8, seed=4), dims, (0, 2)) == only.params[(0, 2)]


def test_batch_matches_rows():
    dims = [3, 2, 4]
    layer = FusionLayer(FusionSpec("generalized", 8), dims)
    X = rand_inputs(dims, 0, batch=5)
    rows = np.stack([layer.forward([x[i] for x in X]) for i in range(5)])
    np.testing.assert_allclose(layer.forward(X), rows, atol=1e-12)


def test_bilinear_cap():
    with pytest.raises(CapacityError):
        FusionLayer(FusionSpec("bilinear", bilinear_cap=100), [10, 11])
    FusionLayer(FusionSpec("bilinear", bilinear_cap=110), [10, 11])


def test_single_modality_rules():
    with pytest.raises(ValueError):
        FusionLayer(FusionSpec("bilinear"), [3])
    with pytest.raises(ValueError):
        FusionLayer(FusionSpec("tensor_sketch", 8), [3])
    assert FusionLayer(FusionSpec("generalized", 8), [3]).output_dim == 3


def test_input_errors():
    layer = FusionLayer(FusionSpec("concat"), [2, 3])
    with pytest.raises(DimensionError):
        layer.forward([np.ones(2)])
    with pytest.raises(DimensionError):
        layer.forward([np.ones(2), np.ones(4)])
    with pytest.raises(DimensionError):
        layer.forward([np.ones((2, 2)), np.ones((3, 3))])
    with pytest.raises(DimensionError):
        layer.backward(np.ones(4), [np.ones(2), np.ones(3)])


def test_explicit_params_validated():
    dims = [3, 4]
    spec = FusionSpec("tensor_sketch", 8)
    with pytest.raises(FusionConfigError):
        FusionLayer(spec, dims, {(0, 1): [make_params(3, 8, 0)]})
    with pytest.raises(FusionConfigError):
        FusionLayer(spec, dims, {(0, 1): [make_params(3, 8, 0), make_params(4, 16, 0)]})
    with pytest.raises(FusionConfigError):
        FusionLayer(spec, dims, {(0, 2): [make_params(3, 8, 0), make_params(4, 8, 0)]})
    ps = [make_params(3, 8, 5), make_params(4, 8, 6)]
    assert FusionLayer(spec, dims, {(0, 1): ps}).params[(0, 1)] == ps


def test_fuse_wrappers_check_kind():
    xs = rand_inputs([2, 2])
    with pytest.raises(FusionConfigError):
        fuse_tensor_sketch(xs, FusionSpec("concat"))
    with pytest.raises(FusionConfigError):
        fuse_generalized(xs, FusionSpec("concat"))
    with pytest.raises(ValueError):
        fuse_concat([])
    with pytest.raises(ValueError):
        fuse_bilinear(xs[:1])


# --- backward ----------------------------------------------------------------------

@pytest.mark.parametrize("kind", [k.value for k in FusionKind])
@pytest.mark.parametrize("dims", [[3, 4], [2, 3, 4]])
def test_backward_matches_numeric(kind, dims):
    spec = FusionSpec(kind, 8, seed=3)
    layer = FusionLayer(spec, dims)
    xs = rand_inputs(dims, 7)
    w = np.random.default_rng(8).standard_normal(layer.output_dim)
    grads = layer.backward(w, xs)
    for k in range(len(dims)):
        def f(xk, k=k):
            return float(w @ layer.forward(xs[:k] + [xk] + xs[k + 1:]))
        assert max_relative_error(grads[k], numeric_gradient(f, xs[k])) < 1e-6


def test_backward_batch_and_methods():
    dims = [3, 2, 4]
    layer = FusionLayer(FusionSpec("generalized", 8), dims)
    X = rand_inputs(dims, 3, batch=4)
    G = np.random.default_rng(4).standard_normal((4, layer.output_dim))
    a = layer.backward(G, X)
    b = layer.backward(G, X, method="direct")
    for ga, gb in zip(a, b):
        np.testing.assert_allclose(ga, gb, atol=1e-10)
    np.testing.assert_allclose(fuse_backward(G, X, FusionSpec("generalized", 8))[0], a[0])


def test_concat_backward_is_slicing():
    xs = rand_inputs([2, 3])
    g = np.arange(5.0)
    g0, g1 = fuse_backward(g, xs, FusionSpec("concat"))
    np.testing.assert_array_equal(g0, [0, 1])
    np.testing.assert_array_equal(g1, [2, 3, 4])


def test_fuse_returns_fused_vector():
    fused = fuse(rand_inputs([2, 3]), FusionSpec("generalized", 4))
    assert len(fused) == 2 + 3 + 4
    assert [s.kind for s in fused.layout] == ["single", "single", "sketch"]
