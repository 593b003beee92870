"""Command-line pipeline: synth, train, score, detect, eval, robustness.

Configuration is a plain ``key = value`` text file whose keys mirror the
model/training dataclass fields plus ``alpha`` and ``seed``; any key can be
overridden with a flag of the same name. Exit codes: 0 success, 1 runtime or
data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import detector, evaluate, synthdata, trainer
from .audio import frame_signal, mixdown, read_wav
from .nn import RngStream
from .trainer import TrainConfig
from .vrnn import VrnnConfig, VrnnParams, load_checkpoint, score_frames


class CliError(Exception):
    """Runtime/data error reported with exit code 1."""


def _config_fields():
    fields = {}
    for cls in (VrnnConfig, TrainConfig):
        for f in dataclasses.fields(cls):
            fields[f.name] = (cls, f.type, f.default)
    fields["alpha"] = (None, "float", detector.DEFAULT_ALPHA)
    return fields


KNOWN_KEYS = _config_fields()


def _convert(key, raw):
    _, ftype, default = KNOWN_KEYS[key]
    if isinstance(default, bool) or ftype == "bool":
        low = str(raw).strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise CliError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        return float(raw)
    except ValueError:
        raise CliError(f"config key {key}: cannot parse {raw!r}") from None


def load_run_config(path=None, overrides=None):
    """Parse the key=value config file and apply command-line overrides."""
    values = {}
    if path:
        if not os.path.isfile(path):
            raise CliError(f"config file not found: {path}")
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CliError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in KNOWN_KEYS:
                    raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _convert(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in KNOWN_KEYS:
            raise CliError(f"unknown config key {key!r}")
        values[key] = _convert(key, raw)
    vrnn_kwargs = {k: v for k, v in values.items()
                   if KNOWN_KEYS[k][0] is VrnnConfig}
    train_kwargs = {k: v for k, v in values.items()
                    if KNOWN_KEYS[k][0] is TrainConfig}
    alpha = values.get("alpha", detector.DEFAULT_ALPHA)
    return VrnnConfig(**vrnn_kwargs), TrainConfig(**train_kwargs), alpha


def _load_split(data_dir, split):
    path = os.path.join(data_dir, split)
    if not os.path.isdir(path):
        raise CliError(f"missing dataset split directory: {path}")
    return synthdata.load_dataset(path)


def _frames_of(recordings, frame_dim):
    out = []
    for rec in recordings:
        wav = mixdown(rec.wav)
        frames = frame_signal(wav, frame_dim)
        out.append(frames)
    return out


def _read_wav_file(path):
    if not os.path.isfile(path):
        raise CliError(f"input file not found: {path}")
    with open(path, "rb") as f:
        return read_wav(f.read())


def _load_model(path):
    if not os.path.isfile(path):
        raise CliError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_synth(args):
    cfg = synthdata.BenchmarkConfig(contamination_rate=args.contamination)
    try:
        cfg.validate()
    except ValueError as e:
        raise CliError(str(e))
    splits = synthdata.gen_benchmark(cfg, RngStream(args.seed))
    for name, recs in splits.items():
        synthdata.write_dataset(os.path.join(args.out, name), recs)
    print(f"wrote benchmark to {args.out} "
          f"(train {len(splits['train'])}, valid {len(splits['valid'])}, "
          f"test {len(splits['test'])} recordings)")
    return 0


def cmd_train(args):
    overrides = {k: getattr(args, k, None) for k in KNOWN_KEYS}
    model_cfg, train_cfg, _ = load_run_config(args.config, overrides)
    train_set = _frames_of(_load_split(args.data, "train"), model_cfg.frame_dim)
    valid_set = _frames_of(_load_split(args.data, "valid"), model_cfg.frame_dim)
    params = VrnnParams.create(model_cfg, RngStream(train_cfg.seed, stream=999))
    log_path = args.out + ".log.jsonl"
    trainer.fit(params, train_set, valid_set, train_cfg,
                ckpt_path=args.out, log_path=log_path, verbose=not args.quiet)
    print(f"wrote checkpoint {args.out} and log {log_path}")
    return 0


def cmd_score(args):
    config, params = _load_model(args.ckpt)
    per = {}
    for path in args.inputs:
        wav = mixdown(_read_wav_file(path))
        try:
            frames = frame_signal(wav, config.frame_dim)
        except ValueError as e:
            raise CliError(f"{path}: {e}")
        per[os.path.basename(path)] = score_frames(
            params, frames, n_samples=args.samples,
            rng=RngStream(args.seed))
    detector.write_scores_jsonl(args.out, per)
    print(f"wrote {sum(len(v) for v in per.values())} frame scores to {args.out}")
    return 0


def cmd_detect(args):
    config, params = _load_model(args.ckpt)
    if not os.path.isdir(args.valid):
        raise CliError(f"validation directory not found: {args.valid}")
    valid = synthdata.load_dataset(args.valid)
    valid_scores = [
        score_frames(params, frame_signal(mixdown(rec.wav), config.frame_dim),
                     rng=RngStream(args.seed, stream=i))
        for i, rec in enumerate(valid)]
    th = detector.compute_threshold(valid_scores, alpha=args.alpha,
                                    per_sequence=args.per_sequence)
    per = {}
    reports = {}
    for path in args.inputs:
        wav = mixdown(_read_wav_file(path))
        frames = frame_signal(wav, config.frame_dim)
        scores = score_frames(params, frames, rng=RngStream(args.seed))
        per[os.path.basename(path)] = scores
        report = detector.build_report(scores, th, max_gap=args.max_gap)
        reports[os.path.basename(path)] = detector.report_summary(report)
    if args.scores_out:
        detector.write_scores_jsonl(args.scores_out, per, threshold=th)
    summary = {"threshold": vars(th), "recordings": reports}
    if args.out:
        with open(args.out, "w") as f:
            json.dump(summary, f, indent=2)
    else:
        print(json.dumps(summary, indent=2))
    return 0


def _labels_by_name(labels_path):
    out = {}
    with open(labels_path) as f:
        for line in f:
            rec = json.loads(line)
            out[os.path.basename(rec["path"])] = \
                synthdata._rle_decode(rec["labels"])
    return out


def cmd_eval(args):
    scores = detector.read_scores_jsonl(args.scores)
    if not os.path.isfile(args.labels):
        raise CliError(f"labels file not found: {args.labels}")
    labels = _labels_by_name(args.labels)
    all_scores, all_labels, all_decisions = [], [], []
    have_decisions = True
    with open(args.scores) as f:
        decisions_per = {}
        for line in f:
            rec = json.loads(line)
            if "decision" not in rec:
                have_decisions = False
                break
            decisions_per.setdefault(rec["recording"], []).append(
                (rec["frame"], rec["decision"]))
    for name, sc in scores.items():
        if name not in labels:
            raise CliError(f"no labels for recording {name!r}")
        lab = labels[name]
        if len(lab) != len(sc):
            raise CliError(f"{name}: {len(sc)} scores but {len(lab)} labels")
        all_scores.append(sc)
        all_labels.append(lab)
        if have_decisions:
            all_decisions.append(
                np.array([d for _, d in sorted(decisions_per[name])],
                         dtype=bool))
    pooled_scores = np.concatenate(all_scores)
    pooled_labels = np.concatenate(all_labels)
    rows = {}
    if have_decisions:
        rows["detector"] = evaluate.frame_prf(np.concatenate(all_decisions),
                                              pooled_labels)
    elif not args.sweep:
        raise CliError("scores file has no decisions; use --sweep or run "
                       "'detect' to produce decisions")
    if args.sweep:
        theta, best, curve = evaluate.sweep_threshold(pooled_scores,
                                                      pooled_labels)
        rows["optimal"] = best
        if args.curve_out:
            evaluate.write_curve_csv(args.curve_out, curve)
    print(evaluate.metrics_table_text(rows))
    if args.json:
        print(evaluate.metrics_table_json(rows))
    return 0


def cmd_robustness(args):
    config, params = _load_model(args.ckpt)
    valid = synthdata.load_dataset(args.valid)
    valid_scores = [
        score_frames(params, frame_signal(mixdown(rec.wav), config.frame_dim),
                     rng=RngStream(args.seed, stream=i))
        for i, rec in enumerate(valid)]
    th = detector.compute_threshold(valid_scores, alpha=args.alpha)
    test = synthdata.load_dataset(args.test)
    try:
        levels = [float("inf") if s.strip() in ("inf", "clean")
                  else float(s) for s in args.snr.split(",")]
    except ValueError:
        raise CliError(f"cannot parse --snr list {args.snr!r}")
    table = evaluate.robustness_suite(params, test, th, levels,
                                      RngStream(args.seed, stream=77))
    named = {("clean" if np.isinf(k) else f"{k:g}dB"): v
             for k, v in table.items()}
    print(evaluate.metrics_table_text(named))
    if args.json:
        print(evaluate.metrics_table_json(named))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="noveldet",
        description="Probabilistic acoustic novelty detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contamination", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a benchmark directory")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    for key in KNOWN_KEYS:
        p.add_argument(f"--{key}", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="per-frame scores for WAV inputs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("detect",
                       help="threshold from validation, flag novel frames")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--alpha", type=float, default=detector.DEFAULT_ALPHA)
    p.add_argument("--max-gap", type=int, default=0)
    p.add_argument("--per-sequence", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--scores-out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="metrics from a scores file and labels")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--curve-out", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="metrics under additive noise")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--snr", default="15,10,5")
    p.add_argument("--alpha", type=float, default=detector.DEFAULT_ALPHA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_robustness)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
