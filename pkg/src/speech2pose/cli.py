"""``speech2pose`` command line: features, fit, train, synthesize, eval-mouth, make-synthetic."""
import argparse
import csv
import dataclasses
import glob
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .audio import add_white_noise, mfcc_features, read_features, read_wav, rms_normalize, write_features
from .exceptions import LengthMismatch, Speech2PoseError
from .keypose import apply_plan, plan_insertions, read_dictionary
from .lstm import TrainConfig, align_features_to_pose_clock, infer, read_model, train, write_model
from .pose import POSE_DIM, read_pseq, write_pseq
from .render import render_sequence
from .skeleton import (fit_sequence, forward_kinematics, mean_reprojection_error, project, read_camera,
                       read_detections, read_skeleton)
from .synthetic import make_corpus
from .text import PinyinTable, encode_transcript, read_transcript
from .transcription import mock_transcribe, sidecar_path_for

logger = logging.getLogger("speech2pose")


@dataclass
class PipelineConfig:
    fps: float = 12.0
    ramp_s: float = 0.6
    hold_s: float = 0.3
    delay_s: float = 0.2
    lr: float = 0.001
    batch: int = 100
    hidden: int = 300
    smoothness: float = 0.1
    epochs: int = 100
    seed: int = 0
    noise_amplitude: float = 0.0
    fit_iters: int = 100
    image_size: int = 512
    model: str = None
    dictionary: str = None
    skeleton: str = None
    camera: str = None
    pinyin_table: str = None

    def __post_init__(self):
        for name in ("fps", "ramp_s", "batch", "hidden", "image_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config {name} must be positive")
        for name in ("lr", "hold_s", "delay_s", "smoothness", "epochs", "noise_amplitude", "fit_iters"):
            if getattr(self, name) < 0:
                raise ValueError(f"config {name} must be non-negative")


def load_config(path):
    """Parse a flat ``key = value`` file into a PipelineConfig (``#`` starts a comment)."""
    types = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or key not in types:
                raise ValueError(f"{path}:{lineno}: unknown or malformed setting {line!r}")
            kind = types[key]
            values[key] = raw if kind == "str" or kind is str else (int(raw) if kind in ("int", int) else float(raw))
    return PipelineConfig(**values)


def _config(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(PipelineConfig)
                 if getattr(args, f.name, None) is not None}
    return dataclasses.replace(cfg, **overrides)


def _require(value, what):
    if not value:
        raise UsageError(f"missing {what}")
    return value


class UsageError(Exception):
    pass


def _pinyin(cfg):
    return PinyinTable.load(cfg.pinyin_table)


def _is_audio(path):
    return path.lower().endswith(".wav")


def compute_features(path, cfg):
    if _is_audio(path):
        audio = rms_normalize(read_wav(path))
        if cfg.noise_amplitude > 0:
            audio = add_white_noise(audio, cfg.noise_amplitude, cfg.seed)
        return mfcc_features(audio)
    return encode_transcript(read_transcript(path), table=_pinyin(cfg))


def cmd_features(args, cfg):
    feats = compute_features(args.input, cfg)
    write_features(feats, args.output)
    logger.info("wrote %d x %d features to %s", len(feats), feats.dim, args.output)


def _load_rig(cfg):
    model = read_skeleton(_require(cfg.skeleton, "--skeleton"))
    camera = read_camera(_require(cfg.camera, "--camera"))
    return model, camera


def cmd_fit(args, cfg):
    model, camera = _load_rig(cfg)
    dets = read_detections(args.detections)
    if not dets:
        raise UsageError(f"{args.detections} holds no detection frames")
    seq, glob_orient, results = fit_sequence(model, camera, dets, fps=cfg.fps, max_iter=cfg.fit_iters)
    write_pseq(seq, args.output)
    errors = [mean_reprojection_error(model, f, glob_orient, camera, d) for f, d in zip(seq.frames, dets)]
    report = args.report or args.output + ".report"
    with open(report, "w", encoding="utf-8") as fh:
        fh.write("global_orient " + " ".join(repr(float(v)) for v in glob_orient) + "\n")
        fh.write(f"frames {len(seq)}\n")
        fh.write(f"mean_error_px {float(np.mean(errors))!r}\n")
        for i, (r, e) in enumerate(zip(results, errors)):
            fh.write(f"frame {i} energy {float(r.energy)!r} error_px {float(e)!r}\n")
    logger.info("fit %d frames, mean reprojection error %.4f px", len(seq), np.mean(errors))


def read_fit_report(path):
    """Return ``(global_orient, mean_error_px, per-frame rows)`` from a fit report."""
    glob_orient, mean_err, rows = None, None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "global_orient":
                glob_orient = np.array([float(v) for v in parts[1:4]])
            elif parts[0] == "mean_error_px":
                mean_err = float(parts[1])
            elif parts[0] == "frame":
                rows.append((int(parts[1]), float(parts[3]), float(parts[5])))
    return glob_orient, mean_err, rows


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def load_training_pairs(features_dir, poses_dir, fps):
    """Match ``<stem>.feat`` with ``<stem>.pseq`` and put the features on the pose clock."""
    pairs = []
    for feat_path in sorted(glob.glob(os.path.join(features_dir, "*.feat"))):
        pose_path = os.path.join(poses_dir, _stem(feat_path) + ".pseq")
        if not os.path.exists(pose_path):
            continue
        feats = read_features(feat_path)
        seq = read_pseq(pose_path)
        if seq.fps != fps:
            raise ValueError(f"{pose_path} is at {seq.fps} fps, config says {fps}")
        expected = int(round(len(feats) * feats.stride * fps))
        if abs(expected - len(seq)) > 1:
            raise LengthMismatch(f"{_stem(feat_path)}: features span {expected} frames, poses {len(seq)}")
        pairs.append((align_features_to_pose_clock(feats, fps, len(seq)), seq.frames))
    return pairs


def cmd_train(args, cfg):
    pairs = load_training_pairs(args.features, args.poses, cfg.fps)
    if not pairs:
        raise UsageError(f"no matching .feat/.pseq pairs in {args.features} and {args.poses}")
    tcfg = TrainConfig(learning_rate=cfg.lr, batch_size=cfg.batch, delay=cfg.delay_s, fps=cfg.fps,
                       smoothness=cfg.smoothness, epochs=cfg.epochs, hidden=cfg.hidden, seed=cfg.seed)
    result = train(pairs, tcfg)
    out = _require(args.output or cfg.model, "--output model path")
    write_model(result, out)
    history = args.history or out + ".loss.csv"
    with open(history, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(result.history):
            w.writerow([i, repr(float(loss))])
    logger.info("trained on %d pairs: loss %.6g -> %.6g", len(pairs), result.history[0] if result.history else
                float("nan"), result.history[-1] if result.history else float("nan"))


def cmd_synthesize(args, cfg):
    params, mcfg = read_model(_require(args.model or cfg.model, "--model"))
    if _is_audio(args.input):
        audio = read_wav(args.input)
        duration = audio.duration
        feats = compute_features(args.input, dataclasses.replace(cfg, noise_amplitude=0.0))
        transcript = mock_transcribe(audio, args.transcript or sidecar_path_for(args.input))
    else:
        transcript = read_transcript(args.input)
        duration = transcript.duration
        feats = encode_transcript(transcript, table=_pinyin(cfg))
    n_frames = int(round(duration * cfg.fps))
    seq = infer(params, mcfg, feats, cfg.fps, n_frames)
    dictionary = args.dictionary or cfg.dictionary
    if dictionary:
        plan = plan_insertions(transcript, read_dictionary(dictionary), cfg.seed)
        plan = [p for p in plan if int(round(p.time * cfg.fps)) < len(seq)]
        seq = apply_plan(seq, plan, cfg.ramp_s)
        for p in plan:
            logger.info("insertion word=%s time=%.3f", p.entry.word, p.time)
    os.makedirs(args.out_dir, exist_ok=True)
    write_pseq(seq, args.pseq or os.path.join(args.out_dir, "poses.pseq"))
    if not args.no_render:
        model, camera = _load_rig(cfg)
        size = (cfg.image_size, cfg.image_size)
        render_sequence(model, seq, np.asarray(args.global_orient or (0.0, 0.0, 0.0)), camera, args.out_dir, size)
    logger.info("synthesized %d frames", len(seq))


def mouth_error(model, camera, frames, dets, global_orient):
    """Mean over frames and confident mouth keypoints of the projected-vs-detected pixel distance."""
    if len(frames) != len(dets):
        raise LengthMismatch(f"{len(frames)} pose frames but {len(dets)} detection frames")
    mouth = model.mouth_keypoints
    dists = []
    for pose, det in zip(frames, dets):
        uv = project(forward_kinematics(model, pose, global_orient)[mouth], camera)
        keep = det.confidences[mouth] > 0
        dists.extend(np.linalg.norm(uv[keep] - det.points[mouth][keep], axis=1))
    return float(np.mean(dists)) if dists else float("nan")


def cmd_eval_mouth(args, cfg):
    model, camera = _load_rig(cfg)
    seq = read_pseq(args.poses)
    dets = read_detections(args.detections)
    glob_orient = np.asarray(args.global_orient or (0.0, 0.0, 0.0), dtype=np.float64)
    err = mouth_error(model, camera, seq.frames, dets, glob_orient)
    baseline = mouth_error(model, camera, np.zeros((len(dets), POSE_DIM)), dets, glob_orient)
    report = args.report or args.poses + ".mouth"
    with open(report, "w", encoding="utf-8") as fh:
        fh.write(f"mean_mouth_px {err!r}\nrest_pose_baseline_px {baseline!r}\n")
    print(f"mean_mouth_px {err:.6f}")
    print(f"rest_pose_baseline_px {baseline:.6f}")


def cmd_make_synthetic(args, cfg):
    stems = make_corpus(args.out_dir, args.utterances, args.words, cfg.fps, cfg.seed, args.corrupt)
    logger.info("wrote %d utterances to %s", len(stems), args.out_dir)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value settings file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="speech2pose", parents=[common],
                                     description="Speech and text to body pose synthesis.")
    sub = parser.add_subparsers(dest="command", required=True)

    def rig(p):
        p.add_argument("--skeleton")
        p.add_argument("--camera")

    p = sub.add_parser("features", parents=[common], help="audio or transcript to a feature file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--noise", dest="noise_amplitude", type=float)
    p.add_argument("--pinyin-table", dest="pinyin_table")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fit", parents=[common], help="fit poses to 2-D detections")
    p.add_argument("detections")
    p.add_argument("output")
    p.add_argument("--report")
    p.add_argument("--iters", dest="fit_iters", type=int)
    p.add_argument("--fps", type=float)
    rig(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", parents=[common], help="train the sequence model")
    p.add_argument("--features", required=True, help="directory of <stem>.feat files")
    p.add_argument("--poses", required=True, help="directory of <stem>.pseq files")
    p.add_argument("--output", help="model file")
    p.add_argument("--history", help="loss-history CSV")
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--delay", dest="delay_s", type=float)
    p.add_argument("--smoothness", type=float)
    p.add_argument("--fps", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", parents=[common], help="audio or transcript to poses and frames")
    p.add_argument("input")
    p.add_argument("--model")
    p.add_argument("--dictionary")
    p.add_argument("--transcript", help="word-timing sidecar for audio input")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--pseq", help="pose-sequence output (default <out-dir>/poses.pseq)")
    p.add_argument("--global-orient", dest="global_orient", type=float, nargs=3)
    p.add_argument("--no-render", dest="no_render", action="store_true")
    p.add_argument("--pinyin-table", dest="pinyin_table")
    p.add_argument("--fps", type=float)
    rig(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("eval-mouth", parents=[common], help="mouth reprojection error in pixels")
    p.add_argument("poses")
    p.add_argument("detections")
    p.add_argument("--global-orient", dest="global_orient", type=float, nargs=3)
    p.add_argument("--report")
    rig(p)
    p.set_defaults(func=cmd_eval_mouth)

    p = sub.add_parser("make-synthetic", parents=[common], help="write a synthetic corpus")
    p.add_argument("out_dir")
    p.add_argument("--utterances", type=int, default=4)
    p.add_argument("--words", type=int, default=5)
    p.add_argument("--corrupt", type=float, default=0.1)
    p.add_argument("--fps", type=float)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"speech2pose {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (Speech2PoseError, OSError, ValueError, KeyError) as exc:
        print(f"speech2pose {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
