"""Turning per-frame scores into decisions.

The threshold is chosen without labels: theta = mu_valid - alpha * sigma_valid
where mu/sigma are the mean and (population) standard deviation of the
validation scores, alpha defaulting to 3. A frame is flagged novel when its
score falls strictly below theta. Consecutive flagged frames form events;
runs separated by at most max_gap clean frames can be merged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_ALPHA = 3.0


@dataclass
class Threshold:
    theta: float
    mu_valid: float
    sigma_valid: float
    alpha: float = DEFAULT_ALPHA


def compute_threshold(valid_scores, alpha=DEFAULT_ALPHA, per_sequence=False):
    """Unsupervised threshold from validation scores.

    ``valid_scores`` is a list of per-recording score arrays. By default the
    statistics pool all frames; per_sequence=True uses per-recording mean
    scores instead (sequence-level statistics).
    """
    if per_sequence:
        values = np.array([float(np.mean(s)) for s in valid_scores])
    else:
        values = np.concatenate([np.asarray(s, dtype=np.float64).ravel()
                                 for s in valid_scores])
    if values.size < 2:
        raise ValueError(f"need at least 2 validation frames, got {values.size}")
    mu = float(np.mean(values))
    sigma = float(np.std(values))  # population standard deviation
    return Threshold(mu - alpha * sigma, mu, sigma, alpha)


def detect_frames(scores, th: Threshold):
    """Novel iff score < theta (strict; ties count as normal)."""
    return np.asarray(scores, dtype=np.float64) < th.theta


def group_events(decisions, max_gap=0):
    """Maximal runs of flagged frames, merging runs <= max_gap apart.

    Returns a sorted list of (start, end) with end exclusive.
    """
    if max_gap < 0:
        raise ValueError("max_gap must be >= 0")
    decisions = np.asarray(decisions, dtype=bool)
    events = []
    start = None
    for i, flag in enumerate(decisions):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            events.append((start, i))
            start = None
    if start is not None:
        events.append((start, len(decisions)))
    if max_gap == 0:
        return events
    merged = []
    for ev in events:
        if merged and ev[0] - merged[-1][1] <= max_gap:
            merged[-1] = (merged[-1][0], ev[1])
        else:
            merged.append(ev)
    return merged


@dataclass
class DetectionReport:
    scores: np.ndarray
    threshold: Threshold
    decisions: np.ndarray
    events: list


def build_report(scores, th: Threshold, max_gap=0) -> DetectionReport:
    scores = np.asarray(scores, dtype=np.float64)
    decisions = detect_frames(scores, th)
    return DetectionReport(scores, th, decisions, group_events(decisions, max_gap))


def write_scores_jsonl(path, per_recording, threshold=None):
    """Write {recording, frame, score[, decision]} lines.

    ``per_recording`` maps recording name -> score array.
    """
    with open(path, "w") as f:
        for name, scores in per_recording.items():
            decisions = (detect_frames(scores, threshold)
                         if threshold is not None else None)
            for i, s in enumerate(np.asarray(scores)):
                rec = {"recording": name, "frame": i, "score": float(s)}
                if decisions is not None:
                    rec["decision"] = bool(decisions[i])
                f.write(json.dumps(rec) + "\n")


def read_scores_jsonl(path):
    """Read scores back as {recording: array}, preserving frame order."""
    per = {}
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            per.setdefault(rec["recording"], []).append(
                (rec["frame"], rec["score"]))
    return {name: np.array([s for _, s in sorted(vals)])
            for name, vals in per.items()}


def report_summary(report: DetectionReport, metrics=None):
    out = {
        "threshold": vars(report.threshold),
        "n_frames": int(report.decisions.size),
        "n_flagged": int(report.decisions.sum()),
        "events": [list(ev) for ev in report.events],
    }
    if metrics is not None:
        out["metrics"] = metrics
    return out
