"""Tests for MAE, NDCG@K, edit distance and NED"""

import itertools
import math
import random
import unittest

from pydantic import ValidationError

from scholar_impact.exceptions import EmptyInput
from scholar_impact.ranking_eval import (
    EvalReport,
    Prediction,
    edit_distance,
    evaluate,
    mae,
    ndcg_at_k,
    ned,
    predicted_order,
)


def pairs_from(truths, predictions):
    return [Prediction(item_id=f"i{n:03d}", truth=t, predicted=p)
            for n, (t, p) in enumerate(zip(truths, predictions))]


def brute_force_ndcg(pairs, k):
    """DCG of the predicted order over the best DCG of any ordering"""
    def dcg(order):
        return sum((2 ** p.truth - 1) / math.log2(i + 2) for i, p in enumerate(order[:k]))

    ranked = sorted(pairs, key=lambda p: (-p.predicted, p.item_id))
    best = max(dcg(list(perm)) for perm in itertools.permutations(pairs))
    return 1.0 if best == 0 else dcg(ranked) / best


def reference_scores(pairs, k):
    """MAE and NDCG@K recomputed with plain loops"""
    error = sum(abs(p.truth - p.predicted) for p in pairs) / len(pairs)

    def dcg(truths):
        return sum((2 ** t - 1) / math.log2(rank + 2) for rank, t in enumerate(truths[:k]))

    ranked = [p.truth for p in sorted(pairs, key=lambda p: (-p.predicted, p.item_id))]
    ideal = dcg(sorted((p.truth for p in pairs), reverse=True))
    return error, (1.0 if ideal == 0 else dcg(ranked) / ideal)


def naive_edit_distance(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    if a[0] == b[0]:
        return naive_edit_distance(a[1:], b[1:])
    return 1 + min(naive_edit_distance(a[1:], b),
                   naive_edit_distance(a, b[1:]),
                   naive_edit_distance(a[1:], b[1:]))


class TestMae(unittest.TestCase):
    """Test suite for mean absolute error"""

    def test_perfect(self):
        """Test perfect predictions have zero error"""
        self.assertEqual(mae(pairs_from([0.1, 0.5, 0.9], [0.1, 0.5, 0.9])), 0.0)

    def test_constant_half(self):
        """Test a constant 0.5 predictor against an independent sum"""
        truths = [0.0, 0.25, 0.8, 1.0]
        expected = sum(abs(t - 0.5) for t in truths) / len(truths)
        self.assertAlmostEqual(mae(pairs_from(truths, [0.5] * 4)), expected, delta=1e-12)

    def test_symmetric_and_triangle(self):
        """Test MAE is a metric between prediction vectors"""
        rng = random.Random(11)
        for _ in range(200):
            a, b, c = ([rng.random() for _ in range(30)] for _ in range(3))
            self.assertEqual(mae(pairs_from(a, b)), mae(pairs_from(b, a)))
            self.assertLessEqual(mae(pairs_from(a, c)), mae(pairs_from(a, b)) + mae(pairs_from(b, c)) + 1e-12)

    def test_empty(self):
        """Test no predictions is an error"""
        with self.assertRaises(EmptyInput):
            mae([])

    def test_range_validated(self):
        """Test scores outside [0, 1] are refused"""
        with self.assertRaises(ValidationError):
            Prediction(item_id="x", truth=1.2, predicted=0.5)


class TestNdcg(unittest.TestCase):
    """Test suite for NDCG@K"""

    def test_perfect_order(self):
        """Test the ideal order scores 1"""
        pairs = pairs_from([0.9, 0.5, 0.1], [0.8, 0.4, 0.2])
        self.assertAlmostEqual(ndcg_at_k(pairs, 20), 1.0)

    def test_reversed_order(self):
        """Test a reversed order scores below 1"""
        pairs = pairs_from([0.9, 0.5, 0.1], [0.1, 0.5, 0.9])
        self.assertLess(ndcg_at_k(pairs, 20), 1.0)

    def test_all_zero_truths(self):
        """Test all-zero gains are defined as 1 with a warning"""
        with self.assertLogs("scholar_impact.ranking_eval", level="WARNING"):
            self.assertEqual(ndcg_at_k(pairs_from([0, 0, 0], [0.3, 0.2, 0.1]), 5), 1.0)

    def test_ties_broken_by_item_id(self):
        """Test equal predictions are ranked by ascending id"""
        pairs = [Prediction(item_id="b", truth=0.1, predicted=0.5),
                 Prediction(item_id="a", truth=0.9, predicted=0.5)]
        self.assertEqual([p.item_id for p in predicted_order(pairs)], ["a", "b"])
        self.assertAlmostEqual(ndcg_at_k(pairs, 2), 1.0)

    def test_k_larger_than_n(self):
        """Test the cutoff truncates at n"""
        pairs = pairs_from([0.2, 0.7], [0.9, 0.1])
        self.assertEqual(ndcg_at_k(pairs, 2), ndcg_at_k(pairs, 50))

    def test_increasing_transform_invariance(self):
        """Test only the order of predictions matters"""
        transforms = [
            lambda p: p ** 3,
            math.sqrt,
            lambda p: math.expm1(p) / math.expm1(1.0),
            lambda p: 0.5 * p + 0.25,
        ]
        rng = random.Random(13)
        for _ in range(50):
            truths = [rng.random() for _ in range(40)]
            predictions = [round(rng.random(), 2) for _ in range(40)]
            baseline = ndcg_at_k(pairs_from(truths, predictions), k=20)
            for transform in transforms:
                moved = [transform(p) for p in predictions]
                self.assertAlmostEqual(ndcg_at_k(pairs_from(truths, moved), k=20), baseline, delta=1e-12)

    def test_invalid_k(self):
        """Test k must be positive"""
        with self.assertRaises(ValueError):
            ndcg_at_k(pairs_from([0.1], [0.1]), 0)

    def test_brute_force_equivalence(self):
        """Test against permutation enumeration for small sets"""
        rng = random.Random(7)
        for _ in range(200):
            n = rng.randint(1, 7)
            truths = [rng.choice([0.0, 0.1, 0.25, 0.5, 0.75, 1.0, rng.random()]) for _ in range(n)]
            predictions = [rng.choice([0.5, rng.random()]) for _ in range(n)]
            k = rng.randint(1, 8)
            pairs = pairs_from(truths, predictions)
            if all(t == 0 for t in truths):
                with self.assertLogs("scholar_impact.ranking_eval", level="WARNING"):
                    self.assertEqual(ndcg_at_k(pairs, k), 1.0)
                continue
            self.assertAlmostEqual(ndcg_at_k(pairs, k), brute_force_ndcg(pairs, k), delta=1e-12)


class TestEditDistance(unittest.TestCase):
    """Test suite for Levenshtein distance and NED"""

    def test_known_values(self):
        """Test textbook distances"""
        self.assertEqual(edit_distance("kitten", "sitting"), 3)
        self.assertEqual(edit_distance("", "abc"), 3)
        self.assertEqual(edit_distance("flaw", "lawn"), 2)
        self.assertEqual(edit_distance("same", "same"), 0)

    def test_unicode_code_points(self):
        """Test non-ASCII characters count once"""
        self.assertEqual(edit_distance("café", "cafe"), 1)

    def test_matches_naive_recursion(self):
        """Test against the recursive definition"""
        rng = random.Random(3)
        for _ in range(500):
            a = "".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
            b = "".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
            self.assertEqual(edit_distance(a, b), naive_edit_distance(a, b), (a, b))

    def test_ned_bounds_and_symmetry(self):
        """Test NED lies in [0, 1] and is symmetric"""
        rng = random.Random(5)
        for _ in range(10_000):
            a = "".join(rng.choice("xyz ") for _ in range(rng.randint(0, 10)))
            b = "".join(rng.choice("xyz ") for _ in range(rng.randint(0, 10)))
            value = ned(a, b)
            self.assertGreaterEqual(value, 0.0)
            self.assertLessEqual(value, 1.0)
            self.assertEqual(value, ned(b, a))

    def test_ned_values(self):
        """Test NED normalisation and the empty case"""
        self.assertEqual(ned("", ""), 0.0)
        self.assertEqual(ned("abc", ""), 1.0)
        self.assertAlmostEqual(ned("kitten", "sitting"), 3 / 7)


class TestEvaluate(unittest.TestCase):
    """Test suite for the bundled report"""

    def test_perfect_predictions(self):
        """Test perfect predictions give MAE 0 and NDCG 1"""
        report = evaluate(pairs_from([0.2, 0.6, 0.9], [0.2, 0.6, 0.9]), k=20)
        self.assertIsInstance(report, EvalReport)
        self.assertEqual(report.n, 3)
        self.assertEqual(report.mae, 0.0)
        self.assertAlmostEqual(report.ndcg_at_k, 1.0)
        self.assertEqual(report.k, 20)

    def test_random_pairs_match_reference(self):
        """Test the report against a loop-based recomputation"""
        rng = random.Random(17)
        pairs = pairs_from([rng.random() for _ in range(50)], [rng.random() for _ in range(50)])

        report = evaluate(pairs, k=20)

        expected_mae, expected_ndcg = reference_scores(pairs, 20)
        self.assertEqual(report.n, 50)
        self.assertAlmostEqual(report.mae, expected_mae, delta=1e-12)
        self.assertAlmostEqual(report.ndcg_at_k, expected_ndcg, delta=1e-12)

    def test_constant_predictor_matches_reference(self):
        """Test a constant 0.5 predictor ranks purely by item id"""
        rng = random.Random(19)
        truths = [rng.random() for _ in range(50)]
        pairs = pairs_from(truths, [0.5] * 50)

        report = evaluate(pairs, k=20)

        expected_mae, expected_ndcg = reference_scores(pairs, 20)
        self.assertAlmostEqual(report.mae, expected_mae, delta=1e-12)
        self.assertAlmostEqual(report.ndcg_at_k, expected_ndcg, delta=1e-12)
        self.assertEqual([p.item_id for p in predicted_order(pairs)], sorted(p.item_id for p in pairs))


if __name__ == '__main__':
    unittest.main()
