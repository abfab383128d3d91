"""Audio ingestion, stratified splits, batching and the synthetic sine dataset.

Directory layout for real data is one subfolder per class (sorted names
give the class indices), each holding 16-bit PCM WAV files.
"""
from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError, ParseError, UnsupportedFormatError
from .tensor import Tensor

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)
MANIFEST_VERSION = 1


@dataclass
class AudioClip:
    samples: np.ndarray  # float32 mono in [-1, 1]
    sample_rate: int
    label: int = -1
    path: str = ""

    def __len__(self) -> int:
        return len(self.samples)


def load_wav(path) -> AudioClip:
    """Read 16-bit PCM WAV; stereo keeps the first channel."""
    path = str(path)
    try:
        with wave.open(path, "rb") as wf:
            nch, width, rate, nframes = wf.getnchannels(), wf.getsampwidth(), wf.getframerate(), wf.getnframes()
            if width != 2:
                raise UnsupportedFormatError(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
            raw = wf.readframes(nframes)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormatError(f"{path}: not PCM ({msg})") from exc
        raise ParseError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise ParseError(f"{path}: truncated header") from exc
    if len(raw) != nframes * nch * width:
        raise ParseError(f"{path}: truncated data ({len(raw)} of {nframes * nch * width} bytes)")
    pcm = np.frombuffer(raw, dtype="<i2").reshape(-1, nch)[:, 0]
    return AudioClip((pcm.astype(np.float32) / 32768.0), rate, path=path)


def write_wav(path, samples, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(pcm.tobytes())


def resample_linear(clip: AudioClip, target_hz: int = 16000) -> AudioClip:
    """Linear interpolation onto a ``target_hz`` grid; the tail is linearly extrapolated."""
    if clip.sample_rate <= 0:
        raise DataError(f"invalid sample rate {clip.sample_rate}")
    if clip.sample_rate == target_hz:
        return clip
    x = np.asarray(clip.samples, dtype=np.float64)
    n_out = int(round(len(x) * target_hz / clip.sample_rate))
    pos = np.arange(n_out) * (clip.sample_rate / target_hz)
    if len(x) == 1:
        y = np.full(n_out, x[0])
    else:
        y = np.interp(pos, np.arange(len(x)), x)
        tail = pos > len(x) - 1
        y[tail] = x[-1] + (pos[tail] - (len(x) - 1)) * (x[-1] - x[-2])
    return AudioClip(y.astype(np.float32), target_hz, clip.label, clip.path)


def stratified_split(labels, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> dict[str, list[int]]:
    """Per-class shuffled split.

    Leftover clips of each class go to the splits furthest behind their
    running global target, so every per-class count and every split total
    stays within one clip of its requested share.
    """
    labels = np.asarray(labels)
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise DataError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    out: dict[str, list[int]] = {s: [] for s in SPLITS}
    cum_target = np.zeros(3)
    cum_assigned = np.zeros(3)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        target = fr * len(idx)
        counts = np.floor(target).astype(int)
        frac = target - counts
        cum_target += target
        deficit = cum_target - cum_assigned - counts
        order = sorted((s for s in range(3) if fr[s] > 0),
                       key=lambda s: (-round(deficit[s], 9), -round(frac[s], 9), s))
        for s in order[:len(idx) - counts.sum()]:
            counts[s] += 1
        cum_assigned += counts
        start = 0
        for s, n in zip(SPLITS, counts):
            out[s] += sorted(idx[start:start + n].tolist())
            start += n
    return {s: sorted(v) for s, v in out.items()}


@dataclass
class Dataset:
    clips: list[AudioClip]
    class_names: list[str]
    splits: dict[str, list[int]] = field(default_factory=dict)
    seed: int = 0
    source: dict = field(default_factory=dict)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clips], dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> list[AudioClip]:
        return [self.clips[i] for i in self.splits.get(name, [])]

    def to_manifest(self) -> dict:
        where = {i: s for s, idx in self.splits.items() for i in idx}
        return {
            "format": "coscov-manifest",
            "version": MANIFEST_VERSION,
            "source": self.source,
            "seed": self.seed,
            "class_names": self.class_names,
            "clips": [{"path": c.path, "label": int(c.label), "split": where.get(i)}
                      for i, c in enumerate(self.clips)],
        }

    def save_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_manifest(), indent=1))


def load_directory(root, fractions=DEFAULT_FRACTIONS, seed: int = 0, target_hz: int | None = 16000) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data directory {root} does not exist")
    names = sorted(p.name for p in root.iterdir() if p.is_dir())
    clips = []
    for label, name in enumerate(names):
        for f in sorted((root / name).glob("*.wav")):
            clip = load_wav(f)
            if target_hz is not None:
                clip = resample_linear(clip, target_hz)
            clip.label = label
            clips.append(clip)
    if len(names) < 2 or not clips:
        raise DataError(f"{root}: need at least two class subfolders with .wav files")
    ds = Dataset(clips, names, seed=seed, source={"directory": str(root), "target_hz": target_hz})
    ds.splits = stratified_split(ds.labels, fractions, seed)
    return ds


def make_synthetic(classes: int, per_class: int, seed: int = 0, fractions=DEFAULT_FRACTIONS,
                   sample_rate: int = 16000, duration: float = 1.0, noise: float = 0.05) -> Dataset:
    """Class ``z`` is a unit sine at ``200 * (z + 1)`` Hz with random phase and amplitude U(0.5, 1)."""
    if classes < 2:
        raise DataError(f"synthetic dataset needs >= 2 classes, got {classes}")
    rng = np.random.default_rng(seed)
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate
    clips = []
    for z in range(classes):
        f = 200.0 * (z + 1)
        for i in range(per_class):
            phase = rng.uniform(0.0, 2 * np.pi)
            amp = rng.uniform(0.5, 1.0)
            x = amp * np.sin(2 * np.pi * f * t + phase) + rng.normal(0.0, noise, n)
            clips.append(AudioClip(np.clip(x, -1.0, 1.0).astype(np.float32), sample_rate, z,
                                   f"synthetic/{z}/{i}"))
    ds = Dataset(clips, [f"sine_{200 * (z + 1)}hz" for z in range(classes)], seed=seed,
                 source={"synthetic": {"classes": classes, "per_class": per_class, "seed": seed,
                                       "sample_rate": sample_rate, "duration": duration, "noise": noise}})
    ds.splits = stratified_split(ds.labels, fractions, seed)
    return ds


def load_manifest(path) -> Dataset:
    """Rebuild a dataset with exactly the split rows recorded in a manifest."""
    try:
        man = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    src = man.get("source", {})
    if "synthetic" in src:
        s = src["synthetic"]
        base = make_synthetic(s["classes"], s["per_class"], s["seed"], sample_rate=s["sample_rate"],
                              duration=s["duration"], noise=s["noise"])
        by_path = {c.path: c for c in base.clips}
        clips = [by_path[row["path"]] for row in man["clips"]]
    else:
        hz = src.get("target_hz", 16000)
        clips = []
        for row in man["clips"]:
            clip = load_wav(row["path"])
            clips.append(resample_linear(clip, hz) if hz else clip)
    for c, row in zip(clips, man["clips"]):
        c.label = int(row["label"])
    splits = {s: [i for i, row in enumerate(man["clips"]) if row["split"] == s] for s in SPLITS}
    return Dataset(clips, list(man["class_names"]), splits, man.get("seed", 0), src)


def pad_or_trim(x: np.ndarray, length: int) -> np.ndarray:
    if len(x) >= length:
        return x[:length]
    return np.pad(x, (0, length - len(x)))


def batches(dataset: Dataset, split: str, batch_size: int, seed: int = 0, pad_or_trim_to: int | None = 16000,
            shuffle: bool = True) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield ``(audio [B, 1, S], labels)``; the order depends only on ``seed``."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    idx = np.asarray(dataset.splits.get(split, []), dtype=np.int64)
    if idx.size == 0:
        raise DataError(f"split {split!r} is empty")
    if shuffle:
        idx = idx[np.random.default_rng(seed).permutation(idx.size)]
    for start in range(0, idx.size, batch_size):
        chunk = [dataset.clips[i] for i in idx[start:start + batch_size]]
        if pad_or_trim_to is None:
            lens = {len(c) for c in chunk}
            if len(lens) != 1:
                raise DataError("clips differ in length; set pad_or_trim_to")
            arr = np.stack([c.samples for c in chunk])
        else:
            arr = np.stack([pad_or_trim(c.samples, pad_or_trim_to) for c in chunk])
        labels = np.array([c.label for c in chunk], dtype=np.int64)
        yield Tensor(arr[:, None, :].astype(np.float32)), labels
