import numpy as np

from multissf.rng import (STREAM_CONTROLS, STREAM_MULTISTART, STREAM_REPLICATE,
                          STREAM_SIMULATE, child_rng, child_seed)


def test_stream_codes_are_distinct():
    codes = {STREAM_SIMULATE, STREAM_CONTROLS, STREAM_MULTISTART, STREAM_REPLICATE}
    assert len(codes) == 4


def test_child_rng_reproducible():
    a = child_rng(7, STREAM_SIMULATE, 3).uniform(size=5)
    b = child_rng(7, STREAM_SIMULATE, 3).uniform(size=5)
    assert np.array_equal(a, b)


def test_child_rng_streams_differ():
    a = child_rng(7, STREAM_SIMULATE, 3).uniform(size=5)
    b = child_rng(7, STREAM_CONTROLS, 3).uniform(size=5)
    c = child_rng(8, STREAM_SIMULATE, 3).uniform(size=5)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_child_seed_deterministic():
    s1 = child_seed(11, STREAM_REPLICATE, 0, 2)
    s2 = child_seed(11, STREAM_REPLICATE, 0, 2)
    s3 = child_seed(11, STREAM_REPLICATE, 1, 2)
    assert s1 == s2
    assert s1 != s3
    assert isinstance(s1, int) and 0 <= s1 < 2 ** 64
