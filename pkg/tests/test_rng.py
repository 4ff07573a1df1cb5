"""Tests for the deterministic PRNG layer.

The splitmix64 outputs are checked against the published reference
vectors, and every convenience method is checked against a
straight-line reimplementation so vectorized paths cannot drift.
"""

import numpy as np
import pytest

from jpegqa.rng import SplitMix64, derive_seed

# First three next() outputs for seed 0, matching the public-domain C
# implementation by Sebastiano Vigna (same vectors appear in the
# xoshiro/xoroshiro seeding docs).
VIGNA_SEED = 0
VIGNA_OUTPUTS = [
    0xE220A8397B1DCDAF,
    0x6E789E6AA1B965F4,
    0x06C45D188009454F,
]


def _mix_oracle(z: int) -> int:
    """Straight-line splitmix64 finalizer, written independently."""
    mask = (1 << 64) - 1
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & mask
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & mask
    return z ^ (z >> 31)


def _next_oracle(state: int) -> tuple[int, int]:
    mask = (1 << 64) - 1
    state = (state + 0x9E3779B97F4A7C15) & mask
    return state, _mix_oracle(state)


class TestSplitMix64:
    def test_reference_vectors(self):
        rng = SplitMix64(VIGNA_SEED)
        got = [rng.next_u64() for _ in VIGNA_OUTPUTS]
        assert got == VIGNA_OUTPUTS

    def test_zero_seed_first_output(self):
        # next(0) mixes the golden gamma itself.
        rng = SplitMix64(0)
        assert rng.next_u64() == _mix_oracle(0x9E3779B97F4A7C15)

    def test_matches_straight_line_oracle(self):
        rng = SplitMix64(42)
        state = 42
        for _ in range(100):
            state, expect = _next_oracle(state)
            assert rng.next_u64() == expect

    def test_seed_masked_to_64_bits(self):
        wide = SplitMix64((1 << 70) + 99)
        narrow = SplitMix64(99)
        assert wide.next_u64() == narrow.next_u64()

    def test_bounded_range_and_determinism(self):
        rng = SplitMix64(7)
        draws = [rng.bounded(10) for _ in range(1000)]
        assert min(draws) >= 0 and max(draws) <= 9
        assert set(draws) == set(range(10))  #  all residues hit
        rerun = SplitMix64(7)
        assert draws == [rerun.bounded(10) for _ in range(1000)]

    def test_bounded_is_modulo_of_next(self):
        a, b = SplitMix64(11), SplitMix64(11)
        for n in (1, 2, 91, 1 << 40):
            assert a.bounded(n) == b.next_u64() % n

    def test_bounded_rejects_nonpositive(self):
        rng = SplitMix64(0)
        with pytest.raises(ValueError):
            rng.bounded(0)
        with pytest.raises(ValueError):
            rng.bounded(-3)

    def test_uniform_distribution_sanity(self):
        rng = SplitMix64(3)
        xs = [rng.uniform() for _ in range(20000)]
        assert all(0.0 <= x < 1.0 for x in xs)
        assert abs(np.mean(xs) - 0.5) < 0.01
        assert abs(np.var(xs) - 1.0 / 12.0) < 0.005

    def test_uniform_uses_top_53_bits(self):
        a, b = SplitMix64(5), SplitMix64(5)
        for _ in range(50):
            assert a.uniform() == (b.next_u64() >> 11) * 2.0**-53

    def test_fill_u64_equals_scalar_calls(self):
        scalar = SplitMix64(987)
        vec = SplitMix64(987)
        expect = [scalar.next_u64() for _ in range(257)]
        got = vec.fill_u64(257)
        assert got.dtype == np.uint64
        assert [int(v) for v in got] == expect
        # state advanced identically: next draws still agree
        assert vec.next_u64() == scalar.next_u64()

    def test_fill_u64_empty(self):
        rng = SplitMix64(1)
        before = rng.state
        out = rng.fill_u64(0)
        assert out.size == 0
        assert rng.state == before

    def test_fill_uniform_equals_scalar_calls(self):
        scalar = SplitMix64(55)
        vec = SplitMix64(55)
        expect = [scalar.uniform() for _ in range(100)]
        got = vec.fill_uniform(100)
        assert got.dtype == np.float64
        assert list(got) == expect


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)

    def test_key_order_matters(self):
        assert derive_seed(0, "a", "b") != derive_seed(0, "b", "a")

    def test_distinct_keys_distinct_streams(self):
        seeds = {derive_seed(0, "crop", i) for i in range(1000)}
        assert len(seeds) == 1000

    def test_string_and_int_keys_mix(self):
        # ensure mixed-type keys hash without error and stay 64-bit
        s = derive_seed(2**63, "votes", "ref00001", 10, 95)
        assert 0 <= s < 2**64

    def test_string_key_is_fnv1a(self):
        # FNV-1a of "a": (offset ^ 0x61) * prime mod 2**64
        h = ((0xCBF29CE484222325 ^ 0x61) * 0x100000001B3) & ((1 << 64) - 1)
        assert derive_seed(9, "a") == derive_seed(9, h)

    def test_differs_from_plain_seed(self):
        # deriving with no keys still decorrelates from the raw seed
        assert derive_seed(123) != 123

    def test_child_streams_decorrelated(self):
        a = SplitMix64(derive_seed(0, "x"))
        b = SplitMix64(derive_seed(0, "y"))
        xs = a.fill_uniform(4000)
        ys = b.fill_uniform(4000)
        assert abs(np.corrcoef(xs, ys)[0, 1]) < 0.05
