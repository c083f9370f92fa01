"""Quantized GEMM kernels and weight packing."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from winoq.errors import InvalidShape, InvalidSpec
from winoq.kernels import (
    check_no_overflow, gemm_q8_batched, gemm_q8_fast, gemm_q8_scalar, pack_batched, pack_weights,
    set_threads, unpack_weights,
)
from winoq.quantizer import GroupQuantized, GroupSpec, dequantize_array, quantize_array


def operands(rng, m, k, n, gs, bits=8):
    a = quantize_array(rng.standard_normal((m, k)), 1, gs)
    b = quantize_array(rng.standard_normal((k, n)), 0, gs, bits)
    return a, b


def int_operand(ints, axis):
    ints = np.asarray(ints, np.int8)
    shape = list(ints.shape)
    shape[axis] = 1
    return GroupQuantized(ints, np.ones(shape, np.float32), GroupSpec(ints.shape[axis], axis), 8, ints.shape)


def test_identity_permutation_is_exact():
    rng = np.random.default_rng(0)
    a_int = rng.integers(-127, 128, (5, 7))
    perm = np.eye(7, dtype=np.int8)[rng.permutation(7)]
    out = gemm_q8_scalar(int_operand(a_int, 1), int_operand(perm, 0)).data
    assert np.array_equal(out, (a_int @ perm).astype(np.float32))
    fast = gemm_q8_fast(int_operand(a_int, 1), pack_weights(int_operand(perm, 0), 4)).data
    assert np.array_equal(fast, out)


def test_single_group_matches_f64_oracle():
    rng = np.random.default_rng(1)
    a, b = operands(rng, 33, 64, 29, 64)
    ref = dequantize_array(a) @ dequantize_array(b)
    out = gemm_q8_scalar(a, b).data
    assert np.max(np.abs(out - ref)) <= 1e-6 * np.max(np.abs(ref))


def test_multi_group_is_sum_of_group_products():
    rng = np.random.default_rng(2)
    a, b = operands(rng, 6, 96, 5, 32)
    total = np.zeros((6, 5))
    for g in range(3):
        ag = dequantize_array(quantize_array(dequantize_array(a)[:, 32 * g:32 * g + 32], 1, 32))
        bg = dequantize_array(quantize_array(dequantize_array(b)[32 * g:32 * g + 32], 0, 32))
        total += ag @ bg
    np.testing.assert_allclose(gemm_q8_scalar(a, b).data, total, rtol=1e-6, atol=1e-6)


def test_degenerate_scalar_product():
    a = quantize_array(np.array([[3.0]]), 1, 1)
    b = quantize_array(np.array([[-2.0]]), 0, 1)
    assert gemm_q8_fast(a, pack_weights(b)).data.tolist() == [[np.float32(-6.0)]]


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 40), st.integers(1, 80), st.integers(1, 40), st.sampled_from([1, 8, 16, 32]),
       st.sampled_from([1, 4, 16]), st.sampled_from([8, 4]), st.integers(0, 2**32 - 1))
def test_fast_bit_equals_scalar(m, k, n, gs, v, bits, seed):
    a, b = operands(np.random.default_rng(seed), m, k, n, gs, bits)
    assert gemm_q8_fast(a, pack_weights(b, v)) == gemm_q8_scalar(a, b)


def test_small_sweep_bit_equality():
    rng = np.random.default_rng(3)
    for m in (1, 4, 5):
        for k in range(1, 18):
            for n in (1, 16, 17):
                for gs in (k, 8):
                    a, b = operands(rng, m, k, n, gs)
                    assert gemm_q8_fast(a, pack_weights(b)) == gemm_q8_scalar(a, b), (m, k, n, gs)


def test_thread_count_does_not_change_results():
    rng = np.random.default_rng(4)
    a, b = operands(rng, 64, 256, 96, 64)
    p = pack_weights(b)
    before = set_threads(None)
    try:
        one = (set_threads(1), gemm_q8_fast(a, p))[1]
        many = (set_threads(before), gemm_q8_fast(a, p))[1]
    finally:
        set_threads(before)
    assert one == many


def test_pack_roundtrip_and_offsets():
    rng = np.random.default_rng(5)
    b = quantize_array(rng.standard_normal((96, 37)), 0, 32)
    p = pack_weights(b, 8)
    back = unpack_weights(p)
    assert np.array_equal(back.ints, b.ints) and np.array_equal(back.scales, b.scales)
    flat = p.data.ravel()
    for _ in range(10):
        k, j = int(rng.integers(96)), int(rng.integers(37))
        assert flat[p.offset(k, j)] == b.ints[k, j]
        g, v = divmod(k, 32)[0], j % 8
        assert p.scales[j // 8, g, v] == b.scales[g, j]
    # padded lanes hold zero weights with unit scale
    assert (p.data[-1, :, :, 37 % 8:] == 0).all() and (p.scales[-1, :, 37 % 8:] == 1).all()


def test_vector_width_one_keeps_each_column_in_order():
    rng = np.random.default_rng(6)
    b = quantize_array(rng.standard_normal((64, 5)), 0, 32)
    p = pack_weights(b, 1)
    # no lane interleave: output channel j's reduction vector is contiguous, in k order
    assert np.array_equal(p.data.reshape(5, 64), b.ints.T)


def test_batched_matches_per_tap_gemms():
    rng = np.random.default_rng(7)
    a = quantize_array(rng.standard_normal((4, 10, 64)), 2, 32)
    b = quantize_array(rng.standard_normal((4, 64, 9)), 1, 32)
    out = gemm_q8_batched(a.ints, a.scales, pack_batched(b.ints, b.scales, 32), 9)
    for t in range(4):
        at = GroupQuantized(a.ints[t], a.scales[t], GroupSpec(32, 1), 8, (10, 64))
        bt = GroupQuantized(b.ints[t], b.scales[t], GroupSpec(32, 0), 8, (64, 9))
        assert np.array_equal(out[t], gemm_q8_scalar(at, bt).data)


def test_errors():
    rng = np.random.default_rng(8)
    a, b = operands(rng, 3, 64, 4, 32)
    a16 = quantize_array(rng.standard_normal((3, 64)), 1, 16)
    with pytest.raises(InvalidSpec):
        gemm_q8_scalar(a16, b)
    a_short = quantize_array(rng.standard_normal((3, 32)), 1, 32)
    with pytest.raises(InvalidShape):
        gemm_q8_fast(a_short, pack_weights(b))
    with pytest.raises(InvalidSpec):
        pack_weights(a)  # grouped along the wrong axis
    with pytest.raises(InvalidSpec):
        check_no_overflow(2**20)
    check_no_overflow(256)
