"""
Unit Tests for the Spatiotemporal Encoding

Tests index codes and feature modulation including:
- Closed-form code values
- Variant composition
- Identity and locality laws
- Capacity and width errors
"""

import math

import numpy as np
import pytest

from hailcast.core.errors import BoundsError, ConfigurationError
from hailcast.model.spen import (
    SpenVariant,
    apply_spen,
    compose_codes,
    encode_index,
    modulation_matrix,
)
from hailcast.numeric.tensor import Tensor

ZERO_CODE = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]


class TestEncodeIndex:
    """Tests for single-index codes."""

    def test_index_zero(self):
        """Index 0 is sin 0 / cos 0 interleaved, exactly."""
        assert list(encode_index(0).rho) == ZERO_CODE

    def test_index_one(self):
        """Index 1 starts with sin(1), cos(1)."""
        code = encode_index(1)

        assert code.rho[0] == pytest.approx(math.sin(1.0))
        assert code.rho[1] == pytest.approx(math.cos(1.0))
        assert code.rho[2] == pytest.approx(math.sin(1.0 / 10000 ** (2 / 8)))

    def test_capacity_sixteen_has_four_bits(self):
        """16 indices are addressed by 4 bits."""
        code = encode_index(5, capacity=16)

        assert code.bits == (0, 1, 0, 1)

    def test_codes_pairwise_distinct(self):
        """The 16 position codes at capacity 16 are all different."""
        codes = [encode_index(i).as_array() for i in range(16)]

        for i in range(16):
            for j in range(i + 1, 16):
                assert np.max(np.abs(codes[i] - codes[j])) > 0

    def test_values_bounded(self):
        """Every component lies in [-1, 1]."""
        for i in range(16):
            rho = encode_index(i).as_array()
            assert np.all(np.abs(rho) <= 1.0)

    @pytest.mark.parametrize("index,capacity", [(-1, 16), (16, 16), (0, 70000)])
    def test_out_of_range(self, index: int, capacity: int):
        """Indices outside [0, capacity) and oversized capacities are bounds errors."""
        with pytest.raises(BoundsError):
            encode_index(index, capacity)


class TestComposeCodes:
    """Tests for variant composition."""

    def test_noembd_is_ones(self):
        """NoEmbd modulates by 16 ones."""
        out = compose_codes(encode_index(3), encode_index(2), SpenVariant.NOEMBD)

        np.testing.assert_array_equal(out, np.ones(16))

    def test_timeembd_replaces_position(self):
        """TimeEmbd keeps only the time half."""
        out = compose_codes(encode_index(3), encode_index(0), SpenVariant.TIMEEMBD)

        assert list(out) == [1.0] * 8 + ZERO_CODE

    def test_full_concatenates(self):
        """Full with both indices 0 repeats the zero code twice."""
        out = compose_codes(encode_index(0), encode_index(0), SpenVariant.FULL)

        assert list(out) == ZERO_CODE + ZERO_CODE


class TestApplySpen:
    """Tests for feature modulation."""

    def test_noembd_identity(self, rng: np.random.Generator):
        """NoEmbd returns the input unchanged."""
        h = Tensor(rng.standard_normal((5, 32)))

        out = apply_spen(h, np.arange(5), np.arange(5), SpenVariant.NOEMBD)

        assert out.data.tobytes() == h.data.tobytes()

    def test_zero_row_stays_zero(self):
        """A zero feature row is absorbing."""
        out = apply_spen(Tensor(np.zeros((3, 16))), [1, 2, 3], [4, 5, 6], SpenVariant.FULL)

        assert np.all(out.data == 0.0)

    def test_ones_row_reproduces_pattern(self):
        """d=16, both indices 0, all-ones row gives the modulation itself."""
        out = apply_spen(Tensor(np.ones((1, 16))), [0], [0], SpenVariant.FULL)

        assert list(out.data[0]) == ZERO_CODE + ZERO_CODE

    def test_pattern_is_tiled(self):
        """Width 32 repeats the 16-value modulation twice."""
        mod = modulation_matrix(np.array([3]), np.array([1]), SpenVariant.FULL, 32)

        np.testing.assert_array_equal(mod[0, :16], mod[0, 16:])

    def test_token_locality(self, rng: np.random.Generator):
        """Changing one token row changes only that output row."""
        h = rng.standard_normal((4, 16))
        pos, time = np.array([0, 1, 2, 3]), np.array([1, 1, 2, 2])
        base = apply_spen(Tensor(h), pos, time, SpenVariant.FULL).data
        h2 = h.copy()
        h2[2] += 1.0

        changed = apply_spen(Tensor(h2), pos, time, SpenVariant.FULL).data

        np.testing.assert_array_equal(changed[[0, 1, 3]], base[[0, 1, 3]])
        assert not np.array_equal(changed[2], base[2])

    def test_sine_channels_annihilated_at_zero(self, rng: np.random.Generator):
        """Channels facing a zero sine component are zeroed at index 0."""
        out = apply_spen(Tensor(rng.standard_normal((1, 16))), [0], [0], SpenVariant.FULL)

        assert np.all(out.data[0, 0::2] == 0.0)

    def test_width_must_be_multiple_of_sixteen(self):
        """d not divisible by 16 is a configuration error."""
        with pytest.raises(ConfigurationError):
            apply_spen(Tensor(np.ones((1, 24))), [0], [0], SpenVariant.FULL)

    def test_index_capacity_enforced(self):
        """Indices beyond capacity are bounds errors."""
        with pytest.raises(BoundsError):
            apply_spen(Tensor(np.ones((1, 16))), [16], [0], SpenVariant.FULL)

    def test_variant_from_string(self):
        """Variant names from configs are accepted."""
        assert SpenVariant("spen") is SpenVariant.FULL
        assert [v.value for v in SpenVariant.ordered()] == ["noembd", "timeembd", "spen"]
