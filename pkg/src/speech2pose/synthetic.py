"""Deterministic synthetic corpus: timed words, tone-mixture audio, word-driven poses and detections.

Every utterance ``utt_NNN`` gets ``.wav`` audio, a ``.txt`` transcript sidecar,
the ground-truth ``.pseq`` and ``.det`` detections. The skeleton, camera and a
key-pose dictionary are written once per corpus.
"""
import os
import zlib

import numpy as np

from .audio import AudioBuffer, write_wav
from .keypose import DictEntry, KeyPose, write_dictionary
from .pose import JAW_JOINT, POSE_DIM, PoseSequence, write_pseq
from .skeleton import (Camera, Detection2D, default_skeleton, synthesize_detections, write_camera,
                       write_detections, write_skeleton)
from .text import TimedTranscript, TimedWord, write_transcript

VOCAB = ("hello", "world", "huge", "small", "yes", "think", "great", "maybe")
SAMPLE_RATE = 16000
TAIL_S = 0.2


def _word_rng(word, salt=0):
    return np.random.default_rng([zlib.crc32(word.encode("utf-8")), salt])


def word_pose(word):
    """Fixed pose for a word: mild body motion, a clearly open jaw, strong expression."""
    rng = _word_rng(word)
    pose = np.zeros(POSE_DIM)
    pose[3:66] = rng.normal(0.0, 0.12, 63)
    jaw = 3 * JAW_JOINT
    pose[jaw:jaw + 3] = (0.1 + 0.3 * rng.uniform(), 0.0, 0.0)
    pose[72:96] = rng.normal(0.0, 0.5, 24)
    pose[96:106] = rng.normal(0.0, 1.5, 10)
    return pose


def word_frequencies(word):
    """Three partial frequencies in Hz spelled out by the word's first letters."""
    letters = (word.lower() + "aaa")[:3]
    return np.array([180.0 + 45.0 * (ord(c) - ord("a")) * (k + 1) for k, c in enumerate(letters)])


def synth_audio(transcript, sample_rate=SAMPLE_RATE, seed=0):
    """Sum of sinusoids per word under a Hann envelope, plus faint seeded noise."""
    n = int(round(transcript.duration * sample_rate))
    t = np.arange(n) / sample_rate
    x = np.zeros(n)
    for w in transcript.words:
        a, b = int(round(w.start * sample_rate)), min(int(round(w.end * sample_rate)), n)
        env = np.hanning(b - a)
        for k, f in enumerate(word_frequencies(w.word)):
            x[a:b] += env * np.sin(2 * np.pi * f * t[a:b]) / (k + 1)
    x += np.random.default_rng(seed).normal(0.0, 1e-3, n)
    return AudioBuffer(0.5 * x / np.max(np.abs(x)), sample_rate)


def pose_track(transcript, fps, n_frames):
    """Frame ``t`` shows the pose of the word spoken at ``t/fps``, else the rest pose."""
    frames = np.zeros((n_frames, POSE_DIM))
    for i in range(n_frames):
        ts = i / fps
        for w in transcript.words:
            if w.start <= ts < w.end:
                frames[i] = word_pose(w.word)
                break
    return PoseSequence(frames, fps)


def random_transcript(rng, n_words, vocab=VOCAB):
    words, t = [], 0.1
    for _ in range(n_words):
        dur = round(rng.uniform(0.4, 0.7), 3)
        word = vocab[rng.integers(len(vocab))]
        words.append(TimedWord(word, round(t, 3), round(t + dur, 3)))
        t += dur + round(rng.uniform(0.1, 0.3), 3)
    return TimedTranscript(words, round(words[-1].end + TAIL_S, 3))


def corrupt(det, fraction, rng, size=(512, 512)):
    """Zero the confidence of a random ``fraction`` of keypoints and move them anywhere in frame."""
    n = int(round(fraction * len(det)))
    if n == 0:
        return det
    idx = rng.choice(len(det), n, replace=False)
    pts, conf = det.points.copy(), det.confidences.copy()
    pts[idx] = rng.uniform(0, size, (n, 2))
    conf[idx] = 0.0
    return Detection2D(pts, conf)


def default_dictionary():
    """One certain still key pose ("huge", arms raised) and one rare one ("great")."""
    huge = word_pose("huge").copy()
    huge[16 * 3:16 * 3 + 3] = (0.0, 0.0, 0.9)
    huge[17 * 3:17 * 3 + 3] = (0.0, 0.0, -0.9)
    return [DictEntry("huge", KeyPose(pose=huge), 1.0),
            DictEntry("great", KeyPose(pose=word_pose("great")), 0.5)]


def make_corpus(out_dir, n_utterances=4, words_per_utterance=5, fps=12.0, seed=0,
                corrupt_fraction=0.1):
    """Write a corpus to ``out_dir``; returns the list of utterance stems."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    model = default_skeleton(seed)
    camera = Camera()
    write_skeleton(model, os.path.join(out_dir, "skeleton.txt"), seed)
    write_camera(camera, os.path.join(out_dir, "camera.txt"))
    write_dictionary(default_dictionary(), os.path.join(out_dir, "dictionary.json"))
    stems = []
    for u in range(n_utterances):
        stem = f"utt_{u:03d}"
        transcript = random_transcript(rng, words_per_utterance)
        audio = synth_audio(transcript, seed=seed * 1000 + u)
        seq = pose_track(transcript, fps, int(round(transcript.duration * fps)))
        dets = [corrupt(synthesize_detections(model, f, np.zeros(3), camera), corrupt_fraction, rng)
                for f in seq.frames]
        base = os.path.join(out_dir, stem)
        write_wav(audio, base + ".wav")
        write_transcript(transcript, base + ".txt")
        write_pseq(seq, base + ".pseq")
        write_detections(dets, base + ".det")
        stems.append(stem)
    return stems

