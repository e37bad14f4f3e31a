import itertools
import unittest

import numpy as np

from app.core.path_space import (
    CostTable,
    build_path_set,
    continuations,
    enumerate_paths,
    filter_monotone,
    path_cost,
    prefix_closure,
    sample_paths,
    step_options,
    tie_key,
    unnormalized_path_cost,
)
from app.schemas.topology import Path, PathSet
from app.utils.errors import InvalidArgumentError
from quee_fixtures import topology


class TestEnumeration(unittest.TestCase):
    def test_counts_match_sum_of_powers(self):
        for num_exits in range(1, 6):
            for num_bits in range(1, 5):
                topo = topology(num_exits, bits=tuple(range(2, 2 + num_bits)))
                expected = sum(num_bits**e for e in range(1, num_exits + 1))
                self.assertEqual(len(enumerate_paths(topo)), expected)

    def test_two_exits_two_widths(self):
        paths = enumerate_paths(topology(2))
        self.assertEqual(paths.keys, ("8", "4", "8-8", "8-4", "4-8", "4-4"))

    def test_single_classifier(self):
        self.assertEqual(enumerate_paths(topology(1, bits=(8,))).keys, ("8",))

    def test_three_exits(self):
        self.assertEqual(len(enumerate_paths(topology(3))), 14)


class TestMonotoneFilter(unittest.TestCase):
    def test_drops_rising_paths(self):
        kept = filter_monotone(enumerate_paths(topology(2)))
        self.assertEqual(set(kept.keys), {"4", "8", "4-4", "8-4", "8-8"})

    def test_three_exits_keeps_nine(self):
        self.assertEqual(len(filter_monotone(enumerate_paths(topology(3)))), 9)

    def test_matches_brute_force_and_is_idempotent(self):
        for num_exits in range(1, 5):
            for bits in ((8,), (4, 8), (2, 4, 8)):
                topo = topology(num_exits, bits=bits)
                expected = {
                    "-".join(map(str, seq))
                    for depth in range(1, num_exits + 1)
                    for seq in itertools.product(bits, repeat=depth)
                    if all(a >= b for a, b in zip(seq, seq[1:]))
                }
                kept = filter_monotone(enumerate_paths(topo))
                self.assertEqual(set(kept.keys), expected)
                self.assertEqual(filter_monotone(kept).keys, kept.keys)


class TestSampling(unittest.TestCase):
    def test_under_cap_is_unchanged(self):
        paths = filter_monotone(enumerate_paths(topology(3)))
        self.assertEqual(sample_paths(paths, 50, seed=1).keys, paths.keys)

    def test_sampling_is_reproducible_and_keeps_forced_paths(self):
        paths = enumerate_paths(topology(3))
        first = sample_paths(paths, 5, seed=7)
        second = sample_paths(paths, 5, seed=7)
        self.assertEqual(len(first), 5)
        self.assertEqual(first.keys, second.keys)
        for key in ("8", "4", "8-8-8"):
            self.assertIn(key, first)

    def test_small_cap_keeps_full_precision_path(self):
        paths = filter_monotone(enumerate_paths(topology(3)))
        sampled = sample_paths(paths, 2, seed=0)
        self.assertEqual(set(sampled.keys), {"8-8-8", "8"})
        self.assertEqual(sample_paths(paths, 1, seed=0).keys, ("8-8-8",))

    def test_zero_cap_is_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            sample_paths(enumerate_paths(topology(2)), 0, seed=0)

    def test_build_path_set_defaults(self):
        self.assertEqual(len(build_path_set(topology(3))), 9)


class TestCosts(unittest.TestCase):
    def setUp(self):
        self.topo = topology(2, flops=(100.0, 300.0))

    def test_hand_checked_values(self):
        self.assertEqual(path_cost(Path((8,)), self.topo), 0.25)
        self.assertEqual(path_cost(Path((8, 8)), self.topo), 1.0)
        self.assertEqual(path_cost(Path((8, 4)), self.topo), 0.625)
        self.assertEqual(unnormalized_path_cost(Path((8, 4)), self.topo), 2000.0)

    def test_cost_table(self):
        table = CostTable.build(enumerate_paths(self.topo))
        self.assertEqual(table["8-4"], 0.625)
        self.assertEqual(table.unnormalized["8"], 800.0)

    def test_strictly_increasing_under_append_and_raise(self):
        rng = np.random.default_rng(11)
        bits = (2, 4, 8)
        topo = topology(4, flops=tuple(rng.uniform(1.0, 100.0, size=4)), bits=bits)
        for _ in range(1000):
            depth = int(rng.integers(1, 4))
            path = Path(tuple(int(b) for b in rng.choice(bits, size=depth)))
            longer = path.extend(int(rng.choice(bits)))
            self.assertLess(path_cost(path, topo), path_cost(longer, topo))

            slot = int(rng.integers(0, depth))
            if path.bits[slot] < 8:
                raised = list(path.bits)
                raised[slot] = bits[bits.index(path.bits[slot]) + 1]
                self.assertLess(path_cost(path, topo), path_cost(Path(tuple(raised)), topo))

    def test_invalid_path(self):
        with self.assertRaises(InvalidArgumentError):
            path_cost(Path((6,)), self.topo)


class TestContinuations(unittest.TestCase):
    def setUp(self):
        self.paths = filter_monotone(enumerate_paths(topology(2)))

    def test_hand_computed_cases(self):
        self.assertEqual(set(continuations(Path((8,)), self.paths).keys), {"8", "8-4", "8-8"})
        self.assertEqual(continuations(None, self.paths).keys, self.paths.keys)
        self.assertEqual(set(continuations(Path((4,)), self.paths).keys), {"4", "4-4"})

    def test_extensions_partition_the_continuations(self):
        paths = enumerate_paths(topology(3))
        prefix = Path((8,))
        everything = set(continuations(prefix, paths).keys)
        parts = [set(continuations(prefix.extend(b), paths).keys) for b in (4, 8)]
        self.assertFalse(parts[0] & parts[1])
        self.assertEqual(parts[0] | parts[1] | {prefix.key}, everything)

    def test_step_options_list_exit_first(self):
        paths = filter_monotone(enumerate_paths(topology(3)))
        options = step_options(Path((8,)), paths)
        self.assertEqual([o.key for o, _ in options], ["8", "8-8", "8-4"])
        self.assertEqual(set(options[2][1].keys), {"8-4", "8-4-4"})

    def test_prefix_closure(self):
        topo = topology(3)
        closed = prefix_closure(PathSet((Path((8, 4, 4)),), topo))
        self.assertEqual(closed.keys, ("8", "8-4", "8-4-4"))

    def test_tie_key_prefers_cheaper_then_greater_bits(self):
        a, b = Path((8, 4)), Path((4, 8))
        self.assertLess(tie_key(a, 0.5), tie_key(b, 0.5))
        self.assertLess(tie_key(b, 0.4), tie_key(a, 0.5))


if __name__ == "__main__":
    unittest.main()
