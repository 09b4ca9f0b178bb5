"""Overlap metrics and their exact arithmetic identities."""

from fractions import Fraction

import numpy as np
import pytest

import helpers
from coopseg.metrics import MetricReport, THRESHOLD, dice, evaluate_pairs, iou, mae


def rng_of(seed):
    return np.random.default_rng(seed)


class TestSingles:
    def test_identical_masks(self):
        m = (rng_of(0).uniform(size=(16, 16)) > 0.5).astype(float)
        assert dice(m, m) == 1.0
        assert iou(m, m) == 1.0
        assert mae(m, m) == 0.0

    def test_disjoint_nonempty(self):
        a = np.zeros((4, 4))
        b = np.zeros((4, 4))
        a[0, 0] = 1.0
        b[3, 3] = 1.0
        assert dice(a, b) == 0.0
        assert iou(a, b) == 0.0

    def test_both_empty_convention(self):
        z = np.zeros((5, 5))
        assert dice(z, z) == 1.0
        assert iou(z, z) == 1.0

    def test_counted_example(self):
        # |P| = 3, |G| = 3, overlap 2
        p = np.array([[1, 1, 1, 0]], dtype=float)
        g = np.array([[0, 1, 1, 1]], dtype=float)
        assert dice(p, g) == pytest.approx(4.0 / 6.0, abs=0)
        assert iou(p, g) == pytest.approx(2.0 / 4.0, abs=0)

    def test_threshold_rule(self):
        g = np.ones((1, 2))
        p = np.array([[0.5, 0.5001]])
        # exactly 0.5 is background, strictly above is foreground
        assert dice(p, g) == pytest.approx(2 / 3)
        assert THRESHOLD == 0.5

    def test_mae_is_probability_level(self):
        p = np.array([[0.25, 0.75]])
        g = np.array([[0.0, 1.0]])
        assert mae(p, g) == pytest.approx(0.25, abs=1e-15)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(Exception):
            dice(np.zeros((2, 2)), np.zeros((3, 3)))


class TestPairProperties:
    def test_hundred_random_pairs_match_count_oracle(self):
        rng = rng_of(1)
        for _ in range(100):
            p = (rng.uniform(size=(16, 16)) > rng.uniform(0.2, 0.8)).astype(float)
            g = (rng.uniform(size=(16, 16)) > rng.uniform(0.2, 0.8)).astype(float)
            assert dice(p, g) == helpers.dice_count(p, g)
            assert iou(p, g) == helpers.iou_count(p, g)

    def test_dice_iou_identity_exact(self):
        # dice == 2*iou/(1+iou) as rational numbers, no float tolerance
        rng = rng_of(2)
        for _ in range(100):
            p = (rng.uniform(size=(16, 16)) > 0.5).astype(float)
            g = (rng.uniform(size=(16, 16)) > 0.5).astype(float)
            inter = int((p * g).sum())
            ps, gs = int(p.sum()), int(g.sum())
            if ps + gs == 0:
                continue
            d = Fraction(2 * inter, ps + gs)
            u = Fraction(inter, ps + gs - inter)
            assert d == 2 * u / (1 + u)
            assert dice(p, g) == float(d)

    def test_symmetry(self):
        rng = rng_of(3)
        for _ in range(20):
            p = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
            g = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
            assert dice(p, g) == dice(g, p)
            assert iou(p, g) == iou(g, p)

    def test_dice_dominates_iou(self):
        rng = rng_of(4)
        for _ in range(50):
            p = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
            g = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
            assert dice(p, g) >= iou(p, g)

    def test_range(self):
        rng = rng_of(5)
        for _ in range(50):
            p = rng.uniform(size=(8, 8))
            g = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
            assert 0.0 <= dice(p, g) <= 1.0
            assert 0.0 <= iou(p, g) <= 1.0
            assert 0.0 <= mae(p, g) <= 1.0


class TestReport:
    def test_means_and_rows(self):
        rng = rng_of(6)
        ids = [f"s{i}" for i in range(4)]
        preds = [rng.uniform(size=(6, 6)) for _ in ids]
        gts = [(rng.uniform(size=(6, 6)) > 0.5).astype(float) for _ in ids]
        report = evaluate_pairs(ids, preds, gts)
        assert isinstance(report, MetricReport)
        assert report.ids == ids
        assert report.mean_dice == pytest.approx(np.mean(report.dice))
        assert report.mean_iou == pytest.approx(np.mean(report.iou))
        assert report.mean_mae == pytest.approx(np.mean(report.mae))
        for d, u in zip(report.dice, report.iou):
            assert d >= u

    def test_perfect_report(self):
        g = (rng_of(7).uniform(size=(8, 8)) > 0.5).astype(float)
        report = evaluate_pairs(["a"], [g.copy()], [g])
        assert report.mean_dice == 1.0
        assert report.mean_iou == 1.0
        assert report.mean_mae == 0.0
