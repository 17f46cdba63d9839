"""Synthetic activity-signal generation, windowing, and client shards.

Recordings are 6-channel inertial signals (3-axial acceleration plus
angular velocity).  A sliding window turns a recording into fixed 400
sample segments; each segment becomes a 20x20x3 image whose channels are
the min-max normalized acceleration axes.  The synthetic generator mixes
class-specific sinusoids with per-sample phase/frequency jitter and noise,
so classes are separable but small shards generalize poorly.

Clients are parameterized by heterogeneity profiles (sample count plus a
class-weight vector); the flagship experiment mirrors one large balanced
client, one tiny falls-only client, and one large single-class-dominated
client, with moderate random profiles for the rest.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParseError

log = logging.getLogger(__name__)

N_CLASSES = 8
FALL_CLASSES = (0, 1, 2, 3)
DAILY_CLASS = 7

SAMPLE_RATE = 40.0
WINDOW_LEN = 400          # 10 s at 40 Hz -> 20x20 pixels per channel
IMAGE_SIDE = 20
BASE_INTERVAL = 40        # reference slide interval at the reference duration
REF_DURATION = 10.0

# class-distinguishing fundamental frequencies (Hz) per acceleration axis
_F_AX = (0.5, 0.9, 1.3, 1.7, 2.1, 2.5, 2.9, 3.3)
_F_AY = (2.8, 2.2, 0.6, 3.0, 1.2, 0.4, 1.8, 2.6)
_F_AZ = (1.5, 0.7, 2.4, 1.1, 3.2, 2.0, 0.8, 2.7)
_F_GYRO = (2.0, 1.4, 0.9, 2.3, 0.5, 1.9, 2.8, 1.1)

NOISE_STD = 0.55          # additive noise relative to unit signal amplitude
FREQ_JITTER = 0.04        # relative per-sample frequency perturbation
HARMONIC_AMP = 0.35


@dataclass
class RawRecording:
    subject_id: int
    activity_class: int
    signal: np.ndarray            # (n, 6): ax ay az gx gy gz
    sample_rate: float
    duration: float

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        if self.duration <= 0:
            raise InputError("recording duration must be > 0")
        if self.signal.ndim != 2 or self.signal.shape[1] != 6:
            raise InputError("signal must have shape (n, 6)")
        if self.signal.shape[0] != round(self.sample_rate * self.duration):
            raise InputError("signal length disagrees with rate x duration")


@dataclass
class FeatureImage:
    pixels: np.ndarray            # (20, 20, 3) in [0, 1]
    label: int

    def flat(self) -> np.ndarray:
        return self.pixels.ravel()


@dataclass
class ClientShard:
    client_id: int
    train: list
    test: list
    class_histogram: list

    def train_arrays(self):
        return _images_to_arrays(self.train)

    def test_arrays(self):
        return _images_to_arrays(self.test)


def _images_to_arrays(images):
    if not images:
        return np.zeros((0, IMAGE_SIDE * IMAGE_SIDE * 3)), np.zeros(0, dtype=np.int64)
    x = np.stack([img.flat() for img in images])
    y = np.array([img.label for img in images], dtype=np.int64)
    return x, y


@dataclass
class HeterogeneityProfile:
    n_samples: int
    class_weights: np.ndarray

    def __post_init__(self):
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        if self.class_weights.shape != (N_CLASSES,):
            raise InputError(f"class_weights must have {N_CLASSES} entries")
        if np.any(self.class_weights < 0):
            raise InputError("class_weights must be nonnegative")
        if self.n_samples > 0 and abs(self.class_weights.sum() - 1.0) > 1e-9:
            raise InputError("class_weights must sum to 1")


def slide_interval(t_type: float, i0: int, t0: float) -> int:
    """Slide interval scaled to the recording duration, at least 1 sample."""
    if t_type <= 0 or t0 <= 0:
        raise InputError("durations must be > 0")
    if i0 < 1:
        raise InputError("reference interval must be >= 1")
    return max(1, round(i0 * t_type / t0))


def windows(rec: RawRecording, window_len: int, interval: int) -> list:
    """Full windows starting at 0, interval, 2*interval, ..."""
    if interval < 1:
        raise InputError("interval must be >= 1")
    n = rec.signal.shape[0]
    if window_len > n:
        log.warning(
            "window of %d samples longer than signal of %d; no windows",
            window_len, n,
        )
        return []
    return [
        rec.signal[start : start + window_len]
        for start in range(0, n - window_len + 1, interval)
    ]


def featurize(window: np.ndarray, label: int = 0) -> FeatureImage:
    """Min-max normalize the acceleration axes into a 20x20x3 image.

    A constant channel maps to 0.5 everywhere (degenerate min-max).
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (WINDOW_LEN, 6):
        raise InputError(f"window must have shape ({WINDOW_LEN}, 6)")
    channels = []
    for ch in range(3):
        v = window[:, ch]
        lo, hi = v.min(), v.max()
        if hi == lo:
            norm = np.full(WINDOW_LEN, 0.5)
        else:
            norm = (v - lo) / (hi - lo)
        channels.append(norm.reshape(IMAGE_SIDE, IMAGE_SIDE))
    return FeatureImage(np.stack(channels, axis=-1), label)


def synth_recording(subject_id: int, activity_class: int,
                    rng: np.random.Generator,
                    duration: float = REF_DURATION,
                    sample_rate: float = SAMPLE_RATE) -> RawRecording:
    """One recording of a class-specific sinusoid mixture with seeded jitter."""
    if not 0 <= activity_class < N_CLASSES:
        raise InputError(f"activity class {activity_class} out of range")
    n = round(sample_rate * duration)
    t = np.arange(n) / sample_rate
    sig = np.empty((n, 6))
    freqs = (
        _F_AX[activity_class], _F_AY[activity_class], _F_AZ[activity_class],
        _F_GYRO[activity_class],
        _F_GYRO[(activity_class + 3) % N_CLASSES],
        _F_GYRO[(activity_class + 5) % N_CLASSES],
    )
    for ch, f in enumerate(freqs):
        f_eff = f * (1.0 + FREQ_JITTER * rng.standard_normal())
        phase = rng.uniform(0.0, 2.0 * np.pi)
        phase2 = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.85, 1.15)
        sig[:, ch] = (
            amp * np.sin(2.0 * np.pi * f_eff * t + phase)
            + HARMONIC_AMP * np.sin(4.0 * np.pi * f_eff * t + phase2)
            + NOISE_STD * rng.standard_normal(n)
        )
    return RawRecording(subject_id, activity_class, sig, sample_rate, duration)


def _stratified_split(per_class_counts):
    """Largest-remainder 80/20 split: train totals floor(0.8 n) exactly."""
    total = int(sum(per_class_counts))
    train_total = (total * 8) // 10
    base = [(train_total * c) // total if total else 0 for c in per_class_counts]
    rem = [(train_total * c) % total if total else 0 for c in per_class_counts]
    short = train_total - sum(base)
    order = sorted(range(len(per_class_counts)), key=lambda i: (-rem[i], i))
    for i in order[:short]:
        base[i] += 1
    return base


def _build_shard(client_id, per_class_images):
    counts = [len(imgs) for imgs in per_class_images]
    train_counts = _stratified_split(counts)
    train, test = [], []
    for c in range(N_CLASSES):
        train.extend(per_class_images[c][: train_counts[c]])
        test.extend(per_class_images[c][train_counts[c] :])
    return ClientShard(client_id, train, test, train_counts)


def synth_dataset(n_clients: int, profiles, seed: int) -> list:
    """Deterministic per-client shards drawn from heterogeneity profiles."""
    profiles = list(profiles)
    if len(profiles) != n_clients:
        raise InputError("need exactly one profile per client")
    interval = slide_interval(REF_DURATION, BASE_INTERVAL, REF_DURATION)
    shards = []
    for cid in range(n_clients):
        profile = profiles[cid]
        rng = np.random.default_rng(seed ^ cid)
        if profile.n_samples == 0:
            log.warning("client %d has a zero-sample profile; empty shard", cid)
            shards.append(ClientShard(cid, [], [], [0] * N_CLASSES))
            continue
        counts = rng.multinomial(profile.n_samples, profile.class_weights)
        per_class = []
        for c in range(N_CLASSES):
            imgs = []
            for _ in range(counts[c]):
                rec = synth_recording(cid, c, rng)
                for win in windows(rec, WINDOW_LEN, interval):
                    imgs.append(featurize(win, label=c))
            per_class.append(imgs)
        shards.append(_build_shard(cid, per_class))
    return shards


# -- flagship client profiles --

def profile_large_balanced() -> HeterogeneityProfile:
    """831 samples across all 8 classes."""
    return HeterogeneityProfile(831, np.full(N_CLASSES, 1.0 / N_CLASSES))


def profile_small_falls_only() -> HeterogeneityProfile:
    """101 samples, fall classes only."""
    w = np.zeros(N_CLASSES)
    w[list(FALL_CLASSES)] = 0.25
    return HeterogeneityProfile(101, w)


def profile_large_skewed() -> HeterogeneityProfile:
    """570 samples with 431 concentrated in the daily-activity class."""
    w = np.full(N_CLASSES, (570.0 - 431.0) / 570.0 / (N_CLASSES - 1))
    w[DAILY_CLASS] = 431.0 / 570.0
    return HeterogeneityProfile(570, w)


def moderate_profile(rng: np.random.Generator) -> HeterogeneityProfile:
    n = int(rng.integers(120, 221))
    w = rng.dirichlet(np.full(N_CLASSES, 2.0))
    return HeterogeneityProfile(n, w)


def flagship_profiles(n_clients: int, seed: int) -> list:
    """The reference experiment fleet: three fixed archetypes + moderates."""
    if n_clients < 3:
        raise InputError("flagship fleet needs at least 3 clients")
    rng = np.random.default_rng(seed)
    profiles = [
        profile_large_balanced(),
        profile_small_falls_only(),
        profile_large_skewed(),
    ]
    while len(profiles) < n_clients:
        profiles.append(moderate_profile(rng))
    return profiles


# -- CSV ingestion --

CSV_HEADER = ["subject", "activity", "rate", "ax", "ay", "az", "gx", "gy", "gz"]


def ingest_csv(path) -> list:
    """Recordings from one-row-per-sample CSV, grouped by subject and
    contiguous activity run (per subject's own row stream)."""
    recordings = []
    open_runs: dict = {}   # subject -> (activity, rate, rows, start_line)
    order: list = []

    def close(subject):
        activity, rate, rows, start = open_runs.pop(subject)
        sig = np.array(rows)
        recordings.append(
            (start, RawRecording(subject, activity, sig, rate, len(rows) / rate))
        )

    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(
                f"{path}: line 1: header must be {','.join(CSV_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"{path}: line {lineno}: expected "
                                 f"{len(CSV_HEADER)} columns, got {len(row)}")
            try:
                subject = int(row[0])
                activity = int(row[1])
                rate = float(row[2])
                values = [float(v) for v in row[3:]]
            except ValueError as e:
                raise ParseError(f"{path}: line {lineno}: {e}") from None
            if not 0 <= activity < N_CLASSES:
                raise ParseError(
                    f"{path}: line {lineno}: unknown activity label {activity}"
                )
            if rate <= 0:
                raise ParseError(f"{path}: line {lineno}: rate must be > 0")
            run = open_runs.get(subject)
            if run is not None and (run[0] != activity or run[1] != rate):
                close(subject)
                run = None
            if run is None:
                open_runs[subject] = (activity, rate, [values], lineno)
            else:
                run[2].append(values)
    for subject in list(open_runs):
        close(subject)
    recordings.sort(key=lambda item: item[0])
    return [rec for _, rec in recordings]


def recordings_to_shards(recordings, i0: int = BASE_INTERVAL,
                         t0: float = REF_DURATION,
                         window_len: int = WINDOW_LEN) -> list:
    """One client per subject; windows featurized and split 80/20."""
    by_subject: dict = {}
    for rec in recordings:
        by_subject.setdefault(rec.subject_id, []).append(rec)
    shards = []
    for cid, subject in enumerate(sorted(by_subject)):
        per_class = [[] for _ in range(N_CLASSES)]
        for rec in by_subject[subject]:
            interval = slide_interval(rec.duration, i0, t0)
            for win in windows(rec, window_len, interval):
                per_class[rec.activity_class].append(
                    featurize(win, label=rec.activity_class)
                )
        shards.append(_build_shard(cid, per_class))
    return shards


def export_jsonl(images, path) -> None:
    """One FeatureImage per line: label plus the 1200 flattened pixels."""
    with open(path, "w") as f:
        for img in images:
            f.write(json.dumps({"label": img.label,
                                "pixels": img.flat().tolist()}))
            f.write("\n")
