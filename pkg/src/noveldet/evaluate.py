"""Frame-level detection metrics and the robustness/threshold-sweep reports.

The positive class is "novel". Precision on an empty detection set is 1 when
there are no positives at all and 0 otherwise, which keeps F1 defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .audio import add_noise_snr, frame_signal
from .detector import Threshold, detect_frames
from .vrnn import score_frames


@dataclass
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    def as_percent(self):
        return {"precision": 100.0 * self.precision,
                "recall": 100.0 * self.recall,
                "f1": 100.0 * self.f1}


def _derive(tp, fp, fn, tn):
    if tp + fp == 0:
        precision = 1.0 if tp + fn == 0 else 0.0
    else:
        precision = tp / (tp + fp)
    recall = 0.0 if tp + fn == 0 else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else \
        2.0 * precision * recall / (precision + recall)
    return Metrics(tp, fp, fn, tn, precision, recall, f1)


def frame_prf(decisions, labels) -> Metrics:
    """Precision/recall/F1 over per-frame binary decisions."""
    decisions = np.asarray(decisions, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if decisions.shape != labels.shape:
        raise ValueError(f"length mismatch: {decisions.shape} decisions vs "
                         f"{labels.shape} labels")
    tp = int(np.sum(decisions & labels))
    fp = int(np.sum(decisions & ~labels))
    fn = int(np.sum(~decisions & labels))
    tn = int(np.sum(~decisions & ~labels))
    return _derive(tp, fp, fn, tn)


def f1_from_pr(precision_pct, recall_pct):
    """Harmonic mean of precision/recall given in percent."""
    p, r = precision_pct / 100.0, recall_pct / 100.0
    return 0.0 if p + r == 0 else 200.0 * p * r / (p + r)


def sweep_threshold(scores, labels, grid_size=200):
    """Label-using optimal threshold: max-F1 over a grid of candidates.

    Returns (best_theta, best Metrics, curve) where curve is a list of
    (theta, precision, recall, f1) rows. Ties go to the smallest theta.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        raise ValueError("scores are constant; no threshold separates them")
    curve = []
    best = None
    for theta in np.linspace(lo, hi, grid_size):
        m = frame_prf(scores < theta, labels)
        curve.append((float(theta), m.precision, m.recall, m.f1))
        if best is None or m.f1 > best[1].f1:
            best = (float(theta), m)
    return best[0], best[1], curve


def score_recording(params, recording, n_samples=1, rng=None, snr_db=np.inf,
                    noise_rng=None):
    """Frame scores for one labeled recording, optionally noise-corrupted."""
    frames = frame_signal(recording.wav, recording.frame_dim)
    if not (np.isinf(snr_db) and snr_db > 0):
        frames = add_noise_snr(frames, snr_db, noise_rng)
    return score_frames(params, frames, n_samples=n_samples, rng=rng)


def robustness_suite(params, test_set, threshold: Threshold, snr_levels, rng,
                     n_samples=1):
    """Metrics per SNR level with the fixed clean-validation threshold.

    Each level corrupts every test recording with unseen Gaussian noise,
    scores it with the clean-trained model and applies ``threshold``.
    snr_db=inf rows evaluate the clean test set.
    """
    if not test_set:
        raise ValueError("test set is empty")
    table = {}
    for li, snr_db in enumerate(snr_levels):
        decisions, labels = [], []
        for ri, rec in enumerate(test_set):
            scores = score_recording(
                params, rec, n_samples=n_samples,
                rng=rng.spawn(ri),
                snr_db=snr_db, noise_rng=rng.spawn(10000 + 100 * li + ri))
            decisions.append(detect_frames(scores, threshold))
            labels.append(rec.frame_labels)
        table[snr_db] = frame_prf(np.concatenate(decisions),
                                  np.concatenate(labels))
    return table


def magnitude_spectrum(frame, sample_rate=16000):
    """(freqs_hz, magnitudes) of one frame window."""
    frame = np.asarray(frame, dtype=np.float64).ravel()
    mags = np.abs(np.fft.rfft(frame))
    freqs = np.fft.rfftfreq(frame.size, d=1.0 / sample_rate)
    return freqs, mags


def dominant_frequency(signal, sample_rate=16000):
    """Frequency of the largest non-DC magnitude bin."""
    freqs, mags = magnitude_spectrum(signal, sample_rate)
    return float(freqs[1 + int(np.argmax(mags[1:]))])


def metrics_table_text(rows):
    """Aligned plain-text table from {label: Metrics}."""
    lines = [f"{'':>8}  {'Precision':>9}  {'Recall':>7}  {'F1':>6}"]
    for label, m in rows.items():
        pct = m.as_percent()
        lines.append(f"{str(label):>8}  {pct['precision']:>9.1f}  "
                     f"{pct['recall']:>7.1f}  {pct['f1']:>6.1f}")
    return "\n".join(lines)


def metrics_table_json(rows):
    return json.dumps({str(k): {"counts": {"tp": m.tp, "fp": m.fp,
                                           "fn": m.fn, "tn": m.tn},
                                **m.as_percent()}
                       for k, m in rows.items()}, indent=2)


def write_curve_csv(path, curve):
    with open(path, "w") as f:
        f.write("theta,precision,recall,f1\n")
        for theta, p, r, f1 in curve:
            f.write(f"{theta},{p},{r},{f1}\n")
