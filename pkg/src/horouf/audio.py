"""WAV input/output, energy-based silence trimming, and waveform augmentations.

Readable WAVs are RIFF little-endian, mono, PCM 16-bit or IEEE float 32-bit.
Amplitudes are normalized to [-1, 1] with the 1/32768 convention for PCM.
Augmentations are pure functions of (clip, spec); randomness comes only from
the spec's seed.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Manifest, ManifestEntry, Provenance, Split
from .errors import (
    AllSilent,
    AugmentFailures,
    CorruptHeader,
    DataError,
    InvalidSpec,
    MissingFile,
    UnsupportedFormat,
)
from .util import stable_rng

PIPELINE_SAMPLE_RATE = 16000
DEFAULT_FRAME_LEN = 320  # 20 ms at 16 kHz
DEFAULT_ENERGY_THRESHOLD = 1e-4  # mean-square floor, roughly -40 dBFS


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise DataError("audio clip must be a non-empty 1-D sample buffer")
        if not np.all(np.isfinite(arr)):
            raise DataError("audio clip contains non-finite samples")
        if self.sample_rate < 1:
            raise DataError("sample rate must be a positive integer")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


# ---------------------------------------------------------------------------
# RIFF/WAVE parsing

def _u16(b, off):
    return struct.unpack_from("<H", b, off)[0]


def _u32(b, off):
    return struct.unpack_from("<I", b, off)[0]


def read_wav(path) -> AudioClip:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise MissingFile(f"{path}: no such file") from exc
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        size = _u32(data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) != size:
            raise CorruptHeader(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            if size < 16:
                raise CorruptHeader(f"{path}: fmt chunk too short")
            fmt = (_u16(body, 0), _u16(body, 2), _u32(body, 4), _u16(body, 14))
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise CorruptHeader(f"{path}: missing fmt chunk")
    if payload is None or len(payload) == 0:
        raise CorruptHeader(f"{path}: missing or empty data chunk")
    audio_format, channels, rate, bits = fmt
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, only mono is supported")
    if (audio_format, bits) == (1, 16):
        if len(payload) % 2:
            raise CorruptHeader(f"{path}: odd PCM16 payload size")
        samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif (audio_format, bits) == (3, 32):
        if len(payload) % 4:
            raise CorruptHeader(f"{path}: bad float32 payload size")
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise CorruptHeader(f"{path}: non-finite float samples")
        samples = np.clip(samples, -1.0, 1.0)
    else:
        raise UnsupportedFormat(
            f"{path}: format {audio_format} at {bits} bits; need PCM16 or IEEE float32"
        )
    return AudioClip(samples, rate)


def write_wav(clip: AudioClip, path, encoding: str = "pcm16") -> None:
    if encoding == "pcm16":
        q = np.clip(np.rint(clip.samples * 32768.0), -32768, 32767).astype("<i2")
        payload = q.tobytes()
        fmt = struct.pack("<HHIIHH", 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16)
    elif encoding == "float32":
        payload = clip.samples.astype("<f4").tobytes()
        fmt = struct.pack("<HHIIHH", 3, 1, clip.sample_rate, clip.sample_rate * 4, 4, 32)
    else:
        raise UnsupportedFormat(f"unknown encoding {encoding!r}")
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# ---------------------------------------------------------------------------
# Silence trimming

@dataclass(frozen=True)
class TrimConfig:
    frame_len: int = DEFAULT_FRAME_LEN
    energy_threshold: float = DEFAULT_ENERGY_THRESHOLD

    def __post_init__(self):
        if self.frame_len < 1:
            raise InvalidSpec("frame_len must be >= 1")
        if self.energy_threshold < 0:
            raise InvalidSpec("energy_threshold must be >= 0")


def frame_energies(samples: np.ndarray, frame_len: int) -> np.ndarray:
    """Mean-square energy per consecutive frame; a trailing partial frame counts."""
    n = len(samples)
    n_frames = math.ceil(n / frame_len)
    out = np.empty(n_frames, dtype=np.float64)
    for i in range(n_frames):
        frame = samples[i * frame_len:(i + 1) * frame_len]
        out[i] = float(np.mean(frame * frame))
    return out


def active_bounds(clip: AudioClip, cfg: TrimConfig = TrimConfig()) -> tuple[int, int]:
    """Sample range [start, stop) spanning the first to last frame at or above the threshold."""
    energies = frame_energies(clip.samples, cfg.frame_len)
    active = np.flatnonzero(energies >= cfg.energy_threshold)
    if active.size == 0:
        raise AllSilent("no frame reaches the energy threshold")
    start = int(active[0]) * cfg.frame_len
    stop = min(len(clip), (int(active[-1]) + 1) * cfg.frame_len)
    return start, stop


def trim_silence(clip: AudioClip, cfg: TrimConfig = TrimConfig()) -> AudioClip:
    start, stop = active_bounds(clip, cfg)
    return AudioClip(clip.samples[start:stop], clip.sample_rate)


# ---------------------------------------------------------------------------
# Augmentations

class AugmentKind(str, enum.Enum):
    GAUSSIAN_NOISE = "gaussian-noise"
    PITCH_SHIFT = "pitch-shift"
    TIME_STRETCH = "time-stretch"
    CIRCULAR_SHIFT = "circular-shift"


@dataclass(frozen=True)
class AugmentSpec:
    """One augmentation with its single parameter.

    value means: noise sigma, pitch shift in semitones, stretch rate, or
    circular-shift offset in samples.
    """

    kind: AugmentKind
    value: float
    seed: int = 0


def _validate_spec(spec: AugmentSpec, n: int) -> None:
    if spec.kind == AugmentKind.GAUSSIAN_NOISE and spec.value < 0:
        raise InvalidSpec("noise sigma must be >= 0")
    if spec.kind == AugmentKind.PITCH_SHIFT and abs(spec.value) > 12:
        raise InvalidSpec("pitch shift limited to +/-12 semitones")
    if spec.kind == AugmentKind.TIME_STRETCH and spec.value <= 0:
        raise InvalidSpec("stretch rate must be > 0")
    if spec.kind == AugmentKind.CIRCULAR_SHIFT:
        off = spec.value
        if off != int(off) or not 0 <= int(off) < n:
            raise InvalidSpec(f"shift offset must be an integer in [0, {n})")


def _resample(x: np.ndarray, m: int) -> np.ndarray:
    """Linear-interpolation resampling of x onto m evenly spaced points."""
    n = len(x)
    if m == n:
        return x.copy()
    if n == 1:
        return np.full(m, x[0], dtype=np.float64)
    positions = np.linspace(0.0, n - 1.0, m)
    return np.interp(positions, np.arange(n, dtype=np.float64), x)


def augment(clip: AudioClip, spec: AugmentSpec) -> AudioClip:
    """Apply one augmentation; output is clamped to [-1, 1] and always finite.

    Time stretch resamples the time axis, so output length is round(n / rate).
    Pitch shift composes a stretch by 2^(semitones/12) with a resample back to
    the original length; both are plain linear interpolation, a deliberately
    simple scheme that trades fidelity for determinism.
    """
    x = clip.samples
    n = len(x)
    _validate_spec(spec, n)
    if spec.kind == AugmentKind.GAUSSIAN_NOISE:
        rng = stable_rng(spec.seed, "noise")
        out = x + rng.normal(0.0, spec.value, n)
    elif spec.kind == AugmentKind.CIRCULAR_SHIFT:
        out = np.roll(x, int(spec.value))
    elif spec.kind == AugmentKind.TIME_STRETCH:
        out = _resample(x, max(1, round(n / spec.value)))
    else:  # pitch shift
        factor = 2.0 ** (spec.value / 12.0)
        out = _resample(_resample(x, max(1, round(n / factor))), n)
    return AudioClip(np.clip(out, -1.0, 1.0), clip.sample_rate)


# ---------------------------------------------------------------------------
# Manifest fan-out

@dataclass(frozen=True)
class AugmentRanges:
    """Parameter ranges the fan-out draws from, uniformly per child."""

    sigma: tuple[float, float] = (0.001, 0.02)
    semitones: tuple[float, float] = (-2.0, 2.0)
    rate: tuple[float, float] = (0.85, 1.18)


_FAN_OUT_KINDS = (
    AugmentKind.GAUSSIAN_NOISE,
    AugmentKind.PITCH_SHIFT,
    AugmentKind.TIME_STRETCH,
    AugmentKind.CIRCULAR_SHIFT,
)


def _draw_spec(rng: np.random.Generator, ranges: AugmentRanges) -> tuple[AugmentKind, float, int]:
    kind = _FAN_OUT_KINDS[int(rng.integers(0, len(_FAN_OUT_KINDS)))]
    if kind == AugmentKind.GAUSSIAN_NOISE:
        value = float(rng.uniform(*ranges.sigma))
    elif kind == AugmentKind.PITCH_SHIFT:
        value = float(rng.uniform(*ranges.semitones))
    elif kind == AugmentKind.TIME_STRETCH:
        value = float(rng.uniform(*ranges.rate))
    else:
        # Recorded as a fraction of the clip length so the draw does not
        # depend on reading the audio; realized as floor(fraction * n).
        value = float(rng.random())
    seed = int(rng.integers(0, 2**63 - 1))
    return kind, value, seed


def _realize_spec(kind: AugmentKind, value: float, seed: int, n: int) -> AugmentSpec:
    if kind == AugmentKind.CIRCULAR_SHIFT:
        return AugmentSpec(kind, float(int(value * n)), seed)
    return AugmentSpec(kind, value, seed)


def fan_out(
    manifest: Manifest,
    specs_per_entry: float,
    ranges: AugmentRanges = AugmentRanges(),
    seed: int = 0,
    out_dir=None,
    src_dir=None,
) -> Manifest:
    """Grow the training split with augmented children of each original.

    specs_per_entry may be fractional: every train original gets floor(s)
    children, and the first round(frac * n) originals in manifest order get
    one more, so the average is honored exactly. With out_dir set the child
    WAVs are written there (audio paths resolved against src_dir); without it
    the manifest is only planned, which is enough for counting and dry runs.
    Validation and test originals never gain children.
    """
    if specs_per_entry < 0:
        raise InvalidSpec("specs_per_entry must be >= 0")
    targets = [
        e for e in manifest
        if e.split == Split.TRAIN and not e.provenance.is_augmented()
    ]
    base = int(specs_per_entry)
    n_extra = round((specs_per_entry - base) * len(targets))
    counts = {e.id: base + (1 if i < n_extra else 0) for i, e in enumerate(targets)}

    src = Path(src_dir) if src_dir is not None else Path(".")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    children: list[ManifestEntry] = []
    failures: list[tuple[str, Exception]] = []
    for entry in targets:
        k = counts[entry.id]
        if k == 0:
            continue
        rng = stable_rng(seed, "fan-out", entry.id)
        drawn = [_draw_spec(rng, ranges) for _ in range(k)]
        try:
            clip = None
            if out is not None:
                if entry.audio_path is None:
                    raise DataError(f"entry {entry.id!r} has no audio to augment")
                path = Path(entry.audio_path)
                clip = read_wav(path if path.is_absolute() else src / path)
            for j, (kind, value, child_seed) in enumerate(drawn):
                child_id = f"{entry.id}.aug{j}"
                filename = f"{child_id}.wav"
                if clip is not None:
                    realized = _realize_spec(kind, value, child_seed, len(clip))
                    write_wav(augment(clip, realized), out / filename)
                children.append(
                    ManifestEntry(
                        id=child_id,
                        label=entry.label,
                        audio_path=filename,
                        speaker=entry.speaker,
                        split=Split.TRAIN,
                        provenance=Provenance(
                            origin="augmented",
                            kind=kind.value,
                            value=value,
                            seed=child_seed,
                            source_id=entry.id,
                        ),
                    )
                )
        except DataError as exc:
            failures.append((entry.id, exc))
    if failures:
        raise AugmentFailures(failures)
    return Manifest(manifest.entries + tuple(children))
