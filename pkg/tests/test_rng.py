from collections import Counter

import pytest

from swis.rng import LCG_INCREMENT, LCG_MULTIPLIER, MASK64, Lcg64, derive_seed, splitmix64


def test_recurrence():
    g = Lcg64(5)
    s0 = g.state
    assert g.next_u64() == (LCG_MULTIPLIER * s0 + LCG_INCREMENT) & MASK64


def test_splitmix_known_value():
    # first output of the reference SplitMix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_same_seed_same_stream():
    a, b = Lcg64(42), Lcg64(42)
    assert [a.next_u64() for _ in range(10)] == [b.next_u64() for _ in range(10)]


def test_derive_seed_keys_matter():
    seeds = {derive_seed(0), derive_seed(0, 1), derive_seed(0, 2), derive_seed(0, 1, 2), derive_seed(0, 2, 1)}
    assert len(seeds) == 5
    assert derive_seed(7, 3) == derive_seed(7, 3)


def test_random_range():
    g = Lcg64(1)
    xs = [g.random() for _ in range(5000)]
    assert all(0.0 <= x < 1.0 for x in xs)
    assert abs(sum(xs) / len(xs) - 0.5) < 0.02


def test_uniform_bounds():
    g = Lcg64(2)
    assert all(-3 <= g.uniform(-3, 4) < 4 for _ in range(1000))


def test_randbelow_roughly_uniform():
    g = Lcg64(3)
    counts = Counter(g.randbelow(6) for _ in range(6000))
    assert set(counts) == set(range(6))
    assert all(800 < c < 1200 for c in counts.values())


def test_randbelow_rejects_bad_n():
    with pytest.raises(ValueError):
        Lcg64(0).randbelow(0)


def test_shuffle_is_permutation():
    items = list(range(50))
    Lcg64(4).shuffle(items)
    assert sorted(items) == list(range(50)) and items != list(range(50))


def test_sample():
    s = Lcg64(5).sample(range(20), 8)
    assert len(set(s)) == 8 and all(0 <= v < 20 for v in s)
    with pytest.raises(ValueError):
        Lcg64(5).sample([1, 2], 3)
