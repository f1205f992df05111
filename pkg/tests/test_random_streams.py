"""
Tests for task-keyed random streams.
"""
import unittest

import numpy as np

from src.random_streams import STREAM_CV_SPLIT, STREAM_KMEANS_RESTART, derive_rng, derive_seed


class TestStreams(unittest.TestCase):
    """Stream derivation."""

    def test_same_key_same_stream(self):
        a = derive_rng(7, STREAM_CV_SPLIT, 3).random(5)
        b = derive_rng(7, STREAM_CV_SPLIT, 3).random(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_are_independent(self):
        base = derive_rng(7, STREAM_CV_SPLIT, 3).random(5)
        self.assertFalse(np.array_equal(base, derive_rng(7, STREAM_CV_SPLIT, 4).random(5)))
        self.assertFalse(np.array_equal(base, derive_rng(7, STREAM_KMEANS_RESTART, 3).random(5)))
        self.assertFalse(np.array_equal(base, derive_rng(8, STREAM_CV_SPLIT, 3).random(5)))

    def test_draw_order_does_not_matter(self):
        """A task's stream does not depend on which tasks were drawn before it."""
        first = [derive_rng(1, STREAM_CV_SPLIT, r).integers(1000) for r in range(4)]
        reverse = [derive_rng(1, STREAM_CV_SPLIT, r).integers(1000) for r in reversed(range(4))]
        self.assertEqual(first, reverse[::-1])

    def test_full_range_seed(self):
        derive_rng((1 << 64) - 1, STREAM_CV_SPLIT, 0).random()

    def test_derived_seed_is_64_bit(self):
        seed = derive_seed(3, STREAM_KMEANS_RESTART, 2)
        self.assertTrue(0 <= seed < (1 << 64))
        self.assertEqual(seed, derive_seed(3, STREAM_KMEANS_RESTART, 2))


if __name__ == "__main__":
    unittest.main()
