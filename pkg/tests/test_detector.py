import numpy as np
import pytest

from noveldet.detector import (DEFAULT_ALPHA, Threshold, build_report,
                               compute_threshold, detect_frames, group_events,
                               read_scores_jsonl, report_summary,
                               write_scores_jsonl)
from noveldet.nn import RngStream


class TestComputeThreshold:
    def test_arithmetic_example(self):
        scores = np.array([-185.0, -215.0])  # mu=-200, sigma=15
        th = compute_threshold([scores], alpha=3.0)
        assert th.mu_valid == -200.0
        assert th.sigma_valid == 15.0
        assert abs(th.theta - (-245.0)) < 1e-12

    def test_constant_scores_degenerate(self):
        th = compute_threshold([np.full(10, 4.5)], alpha=3.0)
        assert th.sigma_valid == 0.0
        assert th.theta == th.mu_valid == 4.5

    def test_pooled_across_recordings(self):
        a, b = np.array([0.0, 2.0]), np.array([4.0])
        th = compute_threshold([a, b], alpha=1.0)
        pooled = np.concatenate([a, b])
        assert th.mu_valid == pooled.mean()
        assert th.sigma_valid == np.std(pooled)

    def test_per_sequence_statistics(self):
        a, b = np.array([0.0, 2.0]), np.array([4.0, 4.0])
        th = compute_threshold([a, b], alpha=1.0, per_sequence=True)
        assert th.mu_valid == 2.5       # mean of sequence means 1 and 4
        assert th.sigma_valid == 1.5

    def test_too_few_frames(self):
        with pytest.raises(ValueError):
            compute_threshold([np.array([1.0])])

    def test_false_alarm_rate_at_alpha_3(self):
        # simulation oracle: on Gaussian scores the 3-sigma rule keeps the
        # held-out false-alarm rate at the normal tail level, well under 1%
        rng = RngStream(31415)
        valid = rng.normal(10 ** 5) * 12.0 - 300.0
        held_out = rng.normal(10 ** 5) * 12.0 - 300.0
        th = compute_threshold([valid], alpha=3.0)
        rate = np.mean(detect_frames(held_out, th))
        assert rate <= 0.01

    def test_alpha_monotonicity(self, rng):
        valid = [rng.normal(500)]
        scores = rng.normal(2000)
        counts = [detect_frames(scores, compute_threshold(valid, alpha=a)).sum()
                  for a in (0.5, 1.0, 2.0, 3.0, 4.0)]
        assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_invariant_theta_formula(self, rng):
        th = compute_threshold([rng.normal(100)], alpha=2.5)
        assert abs(th.theta - (th.mu_valid - 2.5 * th.sigma_valid)) < 1e-12


class TestDetectFrames:
    def test_all_above_threshold(self):
        th = Threshold(theta=0.0, mu_valid=3.0, sigma_valid=1.0)
        assert not detect_frames([0.5, 1.0, 3.0], th).any()

    def test_boundary_is_strict(self):
        th = Threshold(theta=1.0, mu_valid=2.0, sigma_valid=0.5)
        out = detect_frames([1.0, 1.0 - 1e-12], th)
        assert out.tolist() == [False, True]

    def test_shift_equivariance(self, rng):
        valid = [rng.normal(300)]
        scores = rng.normal(100)
        th = compute_threshold(valid, alpha=3.0)
        c = 123.456
        th_shift = compute_threshold([valid[0] + c], alpha=3.0)
        assert np.array_equal(detect_frames(scores, th),
                              detect_frames(scores + c, th_shift))

    def test_positive_affine_invariance(self, rng):
        valid = [rng.normal(300)]
        scores = rng.normal(100)
        th = compute_threshold(valid, alpha=3.0)
        a, b = 2.5, -7.0
        th2 = compute_threshold([valid[0] * a + b], alpha=3.0)
        assert np.array_equal(detect_frames(scores, th),
                              detect_frames(scores * a + b, th2))


def brute_force_group(decisions, max_gap):
    """Oracle: flag indices, then greedily merge intervals <= max_gap apart."""
    idx = [i for i, d in enumerate(decisions) if d]
    events = []
    for i in idx:
        if events and i - events[-1][1] <= max_gap:
            events[-1][1] = i + 1
        else:
            events.append([i, i + 1])
    return [tuple(e) for e in events]


class TestGroupEvents:
    def test_simple_run(self):
        assert group_events([False, True, True, False]) == [(1, 3)]

    def test_merge_rule(self):
        assert group_events([True, False, True], max_gap=1) == [(0, 3)]
        assert group_events([True, False, True], max_gap=0) == [(0, 1), (2, 3)]

    def test_run_to_the_end(self):
        assert group_events([False, True, True]) == [(1, 3)]

    def test_negative_gap_rejected(self):
        with pytest.raises(ValueError):
            group_events([True], max_gap=-1)

    def test_matches_brute_force_oracle(self, rng):
        for trial in range(50):
            r = rng.spawn(trial)
            decisions = r.normal(40) > 0.3
            gap = r.integers(0, 4)
            assert group_events(decisions, gap) == \
                brute_force_group(decisions, gap)

    def test_zero_gap_covers_exactly_true_frames(self, rng):
        decisions = rng.normal(200) > 0.5
        covered = set()
        for start, end in group_events(decisions, max_gap=0):
            covered.update(range(start, end))
        assert covered == set(np.flatnonzero(decisions).tolist())


class TestScoresFile:
    def test_round_trip(self, tmp_path, rng):
        per = {"rec000": rng.normal(20), "rec001": rng.normal(30)}
        path = tmp_path / "scores.jsonl"
        write_scores_jsonl(path, per)
        back = read_scores_jsonl(path)
        assert set(back) == set(per)
        for name in per:
            assert np.array_equal(back[name], per[name])

    def test_decisions_recorded(self, tmp_path):
        th = Threshold(theta=0.0, mu_valid=1.0, sigma_valid=1.0 / 3.0)
        write_scores_jsonl(tmp_path / "s.jsonl", {"r": [-1.0, 1.0]}, th)
        import json
        lines = [json.loads(x)
                 for x in (tmp_path / "s.jsonl").read_text().splitlines()]
        assert [x["decision"] for x in lines] == [True, False]


def test_report_invariants(rng):
    valid = [rng.normal(500) * 2.0 + 10.0]
    th = compute_threshold(valid)
    scores = rng.normal(300) * 2.0 + 10.0
    report = build_report(scores, th, max_gap=2)
    assert np.array_equal(report.decisions, scores < th.theta)
    for (s0, e0), (s1, e1) in zip(report.events, report.events[1:]):
        assert e0 < s1  # disjoint and sorted
    summary = report_summary(report)
    assert summary["n_frames"] == 300
    assert summary["n_flagged"] == int(report.decisions.sum())
