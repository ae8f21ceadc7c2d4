from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from seedes.noise import (MAX_COUNTER, NoiseCounterOverflow, NoiseStream, gaussian_fill,
                          mix64, reference_samples, sample_seeds, vectorized_samples, word)

from conftest import ROOT

U64 = st.integers(0, 2**64 - 1)


def load_vectors():
    cases = []
    for line in (ROOT / "conformance" / "noise_vectors.txt").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        head, hexes, vals = (p.split() for p in line.split("|"))
        bits = np.array([int(h, 16) for h in hexes], dtype=np.uint32)
        cases.append((int(head[0]), int(head[1]), int(head[2], 16), bits,
                      [float(v) for v in vals]))
    return cases


VECTORS = load_vectors()


def test_conformance_file_has_cases():
    assert len(VECTORS) >= 10


@pytest.mark.parametrize("seed,counter,w0,bits,vals", VECTORS)
def test_conformance_vectors(seed, counter, w0, bits, vals):
    assert word(seed, counter) == w0
    for got in (reference_samples(seed, counter, 8), vectorized_samples(seed, counter, 8),
                gaussian_fill(NoiseStream(seed, counter), 8)):
        assert np.array_equal(got.view(np.uint32), bits)
    np.testing.assert_allclose(reference_samples(seed, counter, 8), vals, rtol=1e-8)


def test_mix64_known_values():
    # SplitMix64 seeded with 0 yields these as its first outputs
    assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF
    assert mix64((2 * 0x9E3779B97F4A7C15) & (2**64 - 1)) == 0x6E789E6AA1B965F4


def test_sample_seeds_deterministic_and_distinct():
    assert sample_seeds(1, 0) == sample_seeds(1, 0)
    a = sample_seeds(30, 42)
    assert a == sample_seeds(30, 42)
    assert len(set(a)) == 30
    assert all(0 <= s < 2**64 for s in a)
    # windows of the master stream line up
    assert sample_seeds(30, 42, start=30) == sample_seeds(60, 42)[30:]
    with pytest.raises(ValueError):
        sample_seeds(0, 1)


def test_fill_determinism_and_shape():
    a = gaussian_fill(NoiseStream(7, 3), (4, 5))
    b = gaussian_fill(NoiseStream(7, 3), (4, 5))
    assert a.shape == (4, 5) and a.dtype == np.float32
    assert np.array_equal(a.view(np.uint32), b.view(np.uint32))


def test_fill_advances_counter():
    s = NoiseStream(1)
    gaussian_fill(s, (3, 7))
    assert s.counter == 21
    with pytest.raises(ValueError):
        gaussian_fill(s, (0,))


def test_contiguity_two_fills_equal_one():
    s = NoiseStream(99)
    first, second = gaussian_fill(s, 3), gaussian_fill(s, 3)
    whole = gaussian_fill(NoiseStream(99), 6)
    assert np.array_equal(np.concatenate([first, second]), whole)


@settings(max_examples=60, deadline=None)
@given(seed=U64, start=st.integers(0, 2**40),
       sizes=st.lists(st.integers(1, 50), min_size=1, max_size=5))
def test_contiguity_property(seed, start, sizes):
    s = NoiseStream(seed, start)
    parts = [gaussian_fill(s, n) for n in sizes]
    whole = gaussian_fill(NoiseStream(seed, start), sum(sizes))
    assert np.array_equal(np.concatenate(parts), whole)


@settings(max_examples=40, deadline=None)
@given(seed=U64, start=st.integers(0, 2**63), k=st.integers(0, 1000))
def test_stateless_reconstruction(seed, start, k):
    advanced = NoiseStream(seed, start)
    gaussian_fill(advanced, k + 1)
    fresh = NoiseStream(seed, start + k + 1)
    assert np.array_equal(gaussian_fill(advanced, 5), gaussian_fill(fresh, 5))


@settings(max_examples=25, deadline=None)
@given(seed=U64, start=st.integers(0, 2**64 - 200), n=st.integers(1, 64))
def test_compiled_matches_numpy_and_scalar(seed, start, n):
    compiled = gaussian_fill(NoiseStream(seed, start), n)
    assert np.array_equal(compiled.view(np.uint32),
                          vectorized_samples(seed, start, n).view(np.uint32))
    assert np.array_equal(compiled.view(np.uint32),
                          reference_samples(seed, start, n).view(np.uint32))


def test_moments_over_a_million():
    x = gaussian_fill(NoiseStream(2024), 1_000_000).astype(np.float64)
    assert abs(x.mean()) < 0.01
    assert abs(x.std() - 1.0) < 0.01


def test_small_fill_mean():
    assert abs(float(gaussian_fill(NoiseStream(5), 1000).mean())) < 0.1


@pytest.mark.parametrize("seed", [0, 1, 2**63 + 11])
def test_kolmogorov_smirnov(seed):
    x = gaussian_fill(NoiseStream(seed), 100_000).astype(np.float64)
    assert stats.kstest(x, "norm").statistic < 0.01


def test_samples_are_finite_and_bounded():
    x = gaussian_fill(NoiseStream(3), 2_000_000)
    assert np.isfinite(x).all()
    assert np.abs(x).max() < 8.3


def test_counter_overflow_is_fatal():
    s = NoiseStream(1, MAX_COUNTER - 4)
    with pytest.raises(NoiseCounterOverflow):
        gaussian_fill(s, 5)
    assert s.counter == MAX_COUNTER - 4      # untouched on failure
    gaussian_fill(s, 4)
    assert s.counter == MAX_COUNTER
    with pytest.raises(NoiseCounterOverflow):
        sample_seeds(2, 0, start=MAX_COUNTER - 1)


def test_stream_validation():
    with pytest.raises(ValueError):
        NoiseStream(-1)
    with pytest.raises(ValueError):
        NoiseStream(2**64)


def test_regeneration_across_processes():
    import subprocess
    import sys

    code = ("import numpy as np; from seedes.noise import NoiseStream, gaussian_fill; "
            "print(gaussian_fill(NoiseStream(123456789, 77), 64).tobytes().hex())")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         check=True).stdout.strip()
    assert out == gaussian_fill(NoiseStream(123456789, 77), 64).tobytes().hex()
