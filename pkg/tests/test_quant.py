"""Randomized lattice quantization: unbiasedness, worst-case distortion,
stream discipline and the bit-cost bookkeeping.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsmgp.quant import (
    QuantizedVector,
    Quantizer,
    bits_required,
    quantize,
    quantize_vector,
    saving_ratio,
)


class TestScalarQuantizer:
    def test_rounds_to_adjacent_lattice_points(self):
        qz = Quantizer(0.25, np.random.default_rng(0))
        for _ in range(200):
            v = quantize(0.6, qz)
            assert v == pytest.approx(0.5) or v == pytest.approx(0.75)

    def test_exact_lattice_points_pass_through(self):
        qz = Quantizer(0.5, np.random.default_rng(1))
        for k in (-4, 0, 3, 11):
            assert quantize(k * 0.5, qz) == k * 0.5

    def test_unbiased_and_bounded_distortion(self):
        """Dithered rounding is unbiased and its mean squared error never
        exceeds a quarter of the squared cell width."""
        qz = Quantizer(0.1, np.random.default_rng(2))
        x = 0.5173
        draws = np.array([quantize(x, qz) for _ in range(20000)])
        stderr = draws.std(ddof=1) / np.sqrt(draws.size)
        assert abs(draws.mean() - x) <= 3.5 * stderr
        assert np.mean((draws - x) ** 2) <= 0.1**2 / 4 + 1e-4

    @given(
        x=st.floats(-50, 50, allow_nan=False),
        delta=st.sampled_from([0.01, 0.1, 1.0, 2.5]),
        seed=st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=80, deadline=None)
    def test_never_further_than_one_cell(self, x, delta, seed):
        qz = Quantizer(delta, np.random.default_rng(seed))
        assert abs(quantize(x, qz) - x) <= delta * (1 + 1e-9) + 1e-12

    def test_invalid_width_rejected(self):
        with pytest.raises(ValueError):
            Quantizer(0.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            Quantizer(-0.5, np.random.default_rng(0))


class TestVectorQuantizer:
    def test_stream_alignment_is_independent_of_values(self):
        """Each entry always consumes exactly one uniform draw, so the
        randomness used for entry k never depends on earlier entries --
        including entries that happen to sit exactly on the lattice."""
        x_a = np.array([0.3, 0.123, 0.7])
        x_b = np.array([0.5, 0.123, 0.7])  # first entry exact on lattice
        qa = quantize_vector(x_a, Quantizer(0.5, np.random.default_rng(3)))
        qb = quantize_vector(x_b, Quantizer(0.5, np.random.default_rng(3)))
        np.testing.assert_array_equal(qa.indices[1:], qb.indices[1:])

    def test_reproducible_from_seed(self):
        x = np.random.default_rng(4).uniform(-2, 2, size=32)
        qa = quantize_vector(x, Quantizer(0.1, np.random.default_rng(7)))
        qb = quantize_vector(x, Quantizer(0.1, np.random.default_rng(7)))
        np.testing.assert_array_equal(qa.indices, qb.indices)

    def test_values_reconstruct_lattice(self):
        x = np.array([0.0, -1.3, 2.61])
        q = quantize_vector(x, Quantizer(0.1, np.random.default_rng(5)))
        np.testing.assert_allclose(q.values(), q.indices * 0.1)
        assert np.max(np.abs(q.values() - x)) <= 0.1 + 1e-12

    def test_empty_vector_is_allowed(self):
        q = quantize_vector(np.array([]), Quantizer(0.1, np.random.default_rng(6)))
        assert len(q) == 0
        assert bits_required(q) == 0

    def test_metadata_consistency_enforced(self):
        with pytest.raises(ValueError):
            QuantizedVector(
                indices=np.array([1, 5]), delta=0.1, min_index=2, max_index=5
            )
        with pytest.raises(ValueError):
            QuantizedVector(
                indices=np.array([1, 5]), delta=0.1, min_index=1, max_index=4
            )
        with pytest.raises(ValueError):
            QuantizedVector(
                indices=np.array([], dtype=np.int64), delta=0.1,
                min_index=1, max_index=0
            )


class TestBitCosts:
    def test_bits_scale_with_log_spread(self):
        q = QuantizedVector(
            indices=np.arange(0, 21), delta=0.1, min_index=0, max_index=20
        )
        # a spread of 20 lattice steps needs 5-bit symbols
        assert bits_required(q) == 21 * 5

    def test_single_level_still_costs_one_bit(self):
        q = QuantizedVector(
            indices=np.full(8, 3), delta=1.0, min_index=3, max_index=3
        )
        assert bits_required(q) == 8 * 1

    def test_saving_ratio_formula(self):
        # a span of 2.0 at width 0.1 has 21 representable levels
        v = np.array([0.0, 0.4, 2.0])
        expect = 64.0 / np.log2(2.0 / 0.1 + 1)
        assert saving_ratio(v, 0.1) == pytest.approx(expect)

    def test_saving_ratio_monotone_in_width(self):
        v = np.array([0.0, 2.0])
        ratios = [saving_ratio(v, d) for d in (0.01, 0.1, 0.5, 1.0)]
        assert all(b > a for a, b in zip(ratios, ratios[1:]))

    def test_degenerate_span_reports_full_saving(self):
        assert saving_ratio(np.full(5, 1.0), 0.1) == 64.0
        with pytest.raises(ValueError):
            saving_ratio(np.array([1.0]), 0.0)
