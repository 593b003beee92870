import numpy as np
import pytest

from noveldet.detector import compute_threshold, detect_frames
from noveldet.evaluate import (Metrics, dominant_frequency, f1_from_pr,
                               frame_prf, magnitude_spectrum,
                               metrics_table_json, metrics_table_text,
                               sweep_threshold, write_curve_csv)
from noveldet.nn import RngStream


class TestFramePrf:
    def test_perfect_detector(self):
        labels = np.array([0, 1, 1, 0, 1], dtype=bool)
        m = frame_prf(labels, labels)
        assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)

    def test_counts_sum_to_total(self, rng):
        decisions = rng.normal(500) > 0
        labels = rng.normal(500) > 0.8
        m = frame_prf(decisions, labels)
        assert m.tp + m.fp + m.fn + m.tn == 500

    def test_hand_counted_example(self):
        decisions = np.array([1, 1, 0, 0, 1], dtype=bool)
        labels = np.array([1, 0, 1, 0, 1], dtype=bool)
        m = frame_prf(decisions, labels)
        assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 1, 1)
        assert m.precision == 2 / 3 and m.recall == 2 / 3

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            frame_prf([True], [True, False])

    def test_no_detections_no_positives(self):
        m = frame_prf(np.zeros(4, bool), np.zeros(4, bool))
        assert m.precision == 1.0 and m.recall == 0.0 and m.f1 == 0.0

    def test_no_detections_with_positives(self):
        m = frame_prf(np.zeros(4, bool), np.array([0, 1, 0, 0], bool))
        assert m.precision == 0.0 and m.recall == 0.0 and m.f1 == 0.0

    def test_permutation_invariance(self, rng):
        decisions = rng.normal(200) > 0
        labels = rng.normal(200) > 1
        perm = np.argsort(rng.normal(200))
        assert frame_prf(decisions, labels) == \
            frame_prf(decisions[perm], labels[perm])


class TestF1Formula:
    def test_reference_row_values(self):
        # harmonic-mean consistency at one-decimal reporting precision
        assert round(f1_from_pr(95.4, 91.8), 1) == 93.6
        assert round(f1_from_pr(95.4, 92.8), 1) == 94.1

    def test_zero_case(self):
        assert f1_from_pr(0.0, 0.0) == 0.0


class TestSweepThreshold:
    def test_separable_scores_reach_perfect_f1(self):
        scores = np.concatenate([np.full(20, -100.0), np.full(80, 0.0)])
        labels = np.concatenate([np.ones(20, bool), np.zeros(80, bool)])
        _, best, _ = sweep_threshold(scores, labels)
        assert best.f1 == 1.0

    def test_no_positives_curve_all_zero(self):
        scores = np.linspace(0.0, 1.0, 50)
        labels = np.zeros(50, bool)
        theta, best, curve = sweep_threshold(scores, labels)
        assert best.f1 == 0.0
        assert all(row[3] == 0.0 for row in curve)
        assert theta == min(row[0] for row in curve)

    def test_constant_scores_rejected(self):
        with pytest.raises(ValueError):
            sweep_threshold(np.ones(10), np.zeros(10, bool))

    def test_grid_close_to_exhaustive_oracle(self, rng):
        scores = rng.normal(400)
        labels = scores + 0.8 * rng.normal(400) < -1.0
        _, best, _ = sweep_threshold(scores, labels, grid_size=400)
        # exhaustive sweep over every unique score as candidate threshold
        exhaustive = max(frame_prf(scores < s, labels).f1
                         for s in np.unique(scores))
        assert best.f1 <= exhaustive + 1e-12
        assert exhaustive - best.f1 < 0.02

    def test_best_at_least_unsupervised_theta(self, rng):
        scores = np.concatenate([rng.normal(300), rng.normal(30) - 6.0])
        labels = np.concatenate([np.zeros(300, bool), np.ones(30, bool)])
        th = compute_threshold([rng.normal(200)])
        unsup = frame_prf(detect_frames(scores, th), labels).f1
        _, best, _ = sweep_threshold(scores, labels)
        assert best.f1 >= unsup

    def test_ties_prefer_smallest_theta(self):
        # two thresholds reach f1=1; the returned one is the smallest
        scores = np.array([-10.0, -10.0, 5.0, 5.0, 5.0])
        labels = np.array([1, 1, 0, 0, 0], bool)
        theta, best, curve = sweep_threshold(scores, labels, grid_size=16)
        winners = [row[0] for row in curve if row[3] == best.f1]
        assert theta == min(winners)


class TestSpectrum:
    def test_pure_tone_dominant_frequency(self):
        t = np.arange(1600) / 16000.0
        sig = np.sin(2 * np.pi * 500.0 * t)
        assert abs(dominant_frequency(sig) - 500.0) < 10.0

    def test_parseval(self, rng):
        frame = rng.normal(160)
        freqs, mags = magnitude_spectrum(frame)
        energy = (mags[0] ** 2 + mags[-1] ** 2
                  + 2 * np.sum(mags[1:-1] ** 2)) / 160.0
        assert abs(energy - np.sum(frame ** 2)) < 1e-8


class TestReports:
    def _rows(self):
        return {"clean": frame_prf(np.array([1, 0], bool),
                                   np.array([1, 0], bool)),
                "5dB": frame_prf(np.array([1, 1], bool),
                                 np.array([1, 0], bool))}

    def test_text_table_aligned(self):
        text = metrics_table_text(self._rows())
        lines = text.splitlines()
        assert len(lines) == 3
        assert "Precision" in lines[0]
        assert "100.0" in lines[1]

    def test_json_table(self):
        import json
        data = json.loads(metrics_table_json(self._rows()))
        assert data["clean"]["f1"] == 100.0
        assert data["5dB"]["counts"]["fp"] == 1

    def test_curve_csv(self, tmp_path, rng):
        scores = rng.normal(50)
        labels = scores < -1
        _, _, curve = sweep_threshold(scores, labels, grid_size=10)
        path = tmp_path / "curve.csv"
        write_curve_csv(path, curve)
        rows = path.read_text().splitlines()
        assert rows[0] == "theta,precision,recall,f1"
        assert len(rows) == 11
