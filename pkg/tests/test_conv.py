import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitgemm.conv import MODES, AllocationMeter, ConvProblem, parse_layer, spconv
from bitgemm.errors import ConfigError, ShapeError
from bitgemm.formats import encode_single
from bitgemm.generate import make_rng, random_conv_problem
from bitgemm.im2col import ConvShape, flatten_weights, lowered_dims

from oracles import conv_f32


def build_problem(seed, mode, **layer_kw):
    layer = dict(name="t", H=10, W=10, C=3, N=8, Kh=3, Kw=3, S=1,
                 act_density=0.4, wgt_density=0.6, mode=mode)
    layer.update(layer_kw)
    return random_conv_problem(layer, make_rng(seed))


@pytest.mark.parametrize("mode", MODES)
def test_spconv_matches_direct_convolution(mode):
    problem, stack, weights = build_problem(0, mode)
    out, trace = spconv(problem)
    assert np.array_equal(out, conv_f32(stack, weights, 3, 3, 1))
    assert trace.executed_total <= trace.baseline_total


def test_modes_share_one_value_path():
    outs, traces = {}, {}
    for mode in MODES:
        problem, _, _ = build_problem(1, mode)
        outs[mode], traces[mode] = spconv(problem)
    assert np.array_equal(outs["dense"], outs["single"])
    assert np.array_equal(outs["single"], outs["dual"])
    # accounting only ever tightens: dense >= single >= dual
    assert traces["dense"].executed_total == traces["dense"].baseline_total
    assert traces["single"].executed_total <= traces["dense"].executed_total
    assert traces["dual"].executed_total <= traces["single"].executed_total
    assert traces["dual"].dual_side and not traces["single"].dual_side


@pytest.mark.parametrize("mode,h,w,s,n,c,kh", [
    ("dual", 9, 9, 2, 8, 2, 3),
    ("dual", 14, 10, 1, 40, 2, 5),   # two column tiles, ragged N
    ("single", 8, 8, 1, 16, 4, 1),
    ("dense", 11, 7, 2, 3, 1, 3),
])
def test_spconv_shapes_and_strides(mode, h, w, s, n, c, kh):
    problem, stack, weights = build_problem(
        2, mode, H=h, W=w, S=s, N=n, C=c, Kh=kh, Kw=kh)
    out, trace = spconv(problem)
    shape = problem.shape
    assert out.shape == (shape.Ho * shape.Wo, n)
    assert np.array_equal(out, conv_f32(stack, weights, kh, kh, s))
    # trace covers every (band, column tile, k) set exactly once
    m = shape.Ho * shape.Wo
    bands = -(-m // 32)
    k_g = kh * kh * c
    assert len(trace) == bands * -(-n // 32) * k_g


def test_empty_activation_channel_is_fine():
    problem, stack, weights = build_problem(3, "dual", act_density=0.0)
    out, trace = spconv(problem)
    assert np.all(out == 0)
    assert trace.executed_total == 0


def test_dual_mode_skips_weight_warp_tiles():
    # weights with a dead 32-row stripe of k: those sets never execute
    shape = ConvShape(H=12, W=12, C=6, N=8, Kh=3, Kw=3, S=1)  # K_g = 54
    rng = make_rng(4)
    stack = rng.uniform(0.5, 1.0, (12, 12, 6)).astype(np.float32)
    weights = rng.uniform(0.5, 1.0, (8, 54)).astype(np.float32)
    weights[:, 32:] = 0.0          # second k-tile entirely dead
    problem = ConvProblem(
        shape=shape,
        activations=[encode_single(stack[:, :, c]) for c in range(6)],
        weights=flatten_weights(weights),
        mode="dual",
    )
    out, trace = spconv(problem)
    assert np.array_equal(out, conv_f32(stack, weights, 3, 3, 1))
    data = trace.data
    dead = data[data[:, 2] >= 32]
    assert np.all(dead[:, 5] == 1)           # flagged, not silently dropped
    assert np.all(dead[:, 3] == 0)
    assert np.all(data[data[:, 2] < 32][:, 5] == 0)
    assert trace.live_set_count == len(data) - len(dead)


def test_dense_mode_never_skips():
    problem, _, _ = build_problem(5, "dense", act_density=0.05, wgt_density=0.05)
    _, trace = spconv(problem)
    assert np.all(trace.column("skipped_by_warp_bit") == 0)
    assert np.all(trace.column("executed_substeps")
                  == trace.column("baseline_substeps"))


def test_allocation_meter_stays_at_lane_scale():
    problem, _, _ = build_problem(6, "dual", H=16, W=16, C=4)
    meter = AllocationMeter()
    spconv(problem, meter=meter)
    rows, cols = lowered_dims(problem.shape)
    assert rows * cols > 1000        # dense lowering would be this big
    assert meter.peak == 32          # one warp lane at a time
    assert meter.current == 0        # everything released
    assert meter.total_charged >= 32


def test_single_mode_b_side_quantization_frozen():
    # 32 outputs, full-band activations, weights with <=16 nonzeros per k row:
    # every set runs 4 x 1 sub-steps against a 4 x 2 baseline
    shape = ConvShape(H=9, W=9, C=2, N=32, Kh=3, Kw=3, S=1)   # M = 49
    rng = make_rng(7)
    stack = rng.uniform(0.5, 1.0, (9, 9, 2)).astype(np.float32)
    weights = np.zeros((32, 18), dtype=np.float32)
    weights[:10, :] = rng.uniform(0.5, 1.0, (10, 18))  # 10 nonzeros per k row
    problem = ConvProblem(
        shape=shape,
        activations=[encode_single(stack[:, :, c]) for c in range(2)],
        weights=flatten_weights(weights),
        mode="single",
    )
    _, trace = spconv(problem)
    data = trace.data
    band0 = data[(data[:, 0] == 0)]
    assert np.all(band0[:, 3] == 4)          # ceil(32/8) * ceil(10/16)
    assert np.all(band0[:, 4] == 8)          # ceil(32/8) * ceil(32/16)
    band1 = data[(data[:, 0] == 1)]          # 17 trailing rows
    assert np.all(band1[:, 3] == 3)          # ceil(17/8) * 1
    assert np.all(band1[:, 4] == 6)


def test_parse_layer_validation():
    base = dict(name="x", H=8, W=8, C=1, N=1, Kh=3, Kw=3, S=1,
                act_density=0.5, wgt_density=0.5, mode="dual")
    assert parse_layer(base)["mode"] == "dual"
    assert parse_layer({**base, "mode": "dual-sparse"})["mode"] == "dual"
    assert parse_layer({**base, "mode": "single-sparse"})["mode"] == "single"

    with pytest.raises(ConfigError, match="missing"):
        parse_layer({k: v for k, v in base.items() if k != "H"})
    with pytest.raises(ConfigError):
        parse_layer({**base, "C": "4"})
    with pytest.raises(ConfigError):
        parse_layer({**base, "N": True})     # bools are not sizes
    with pytest.raises(ConfigError):
        parse_layer({**base, "act_density": 1.5})
    with pytest.raises(ConfigError):
        parse_layer({**base, "mode": "both"})
    with pytest.raises(ShapeError):          # (8-3) % 2 != 0
        parse_layer({**base, "S": 2})


def test_conv_problem_validation():
    shape = ConvShape(H=8, W=8, C=2, N=4, Kh=3, Kw=3, S=1)
    maps = [encode_single(np.ones((8, 8), dtype=np.float32)) for _ in range(2)]
    weights = flatten_weights(np.ones((4, 18), dtype=np.float32))
    ConvProblem(shape=shape, activations=maps, weights=weights)  # fine

    with pytest.raises(ShapeError):
        ConvProblem(shape=shape, activations=maps[:1], weights=weights)
    bad_map = encode_single(np.ones((4, 8), dtype=np.float32))
    with pytest.raises(ShapeError):
        ConvProblem(shape=shape, activations=[maps[0], bad_map], weights=weights)
    bad_w = flatten_weights(np.ones((4, 9), dtype=np.float32))
    with pytest.raises(ShapeError):
        ConvProblem(shape=shape, activations=maps, weights=bad_w)
    with pytest.raises(ConfigError):
        ConvProblem(shape=shape, activations=maps, weights=weights, mode="fast")


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
@settings(max_examples=15)
def test_spconv_randomized_against_oracle(seed, act_d, wgt_d):
    problem, stack, weights = build_problem(
        seed, "dual", act_density=act_d, wgt_density=wgt_d)
    out, _ = spconv(problem)
    assert np.array_equal(out, conv_f32(stack, weights, 3, 3, 1))
