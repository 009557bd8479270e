"""Batch conversion of manifest audio into HRF frame-embedding files.

The encoder is consumed frozen, in inference mode; for the reference
checkpoint the output width is 1024 and rows advance in 20 ms steps. Files
already present and structurally valid are skipped, so re-running a finished
job writes nothing.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadAudio, EncoderUnavailable, ExtractorError
from .hrf import probe_hrf, write_hrf

DEFAULT_ENCODER = "jonatasgrosman/wav2vec2-large-xlsr-53-arabic"
REQUIRED_SAMPLE_RATE = 16000
FRAME_HOP_SAMPLES = 320  # 20 ms at 16 kHz


@dataclass(frozen=True)
class ExtractJob:
    manifest_path: str
    out_dir: str
    encoder: str = DEFAULT_ENCODER
    device: str = "cpu"
    max_chunk_seconds: float = 30.0
    workers: int = 1


@dataclass
class ExtractResult:
    entries: list[dict]
    written: int = 0
    skipped: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)


def load_waveform(path) -> np.ndarray:
    """Mono 16 kHz samples as float32 in [-1, 1]."""
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise BadAudio(f"{path}: no such file") from exc
    except ValueError as exc:
        raise BadAudio(f"{path}: unreadable WAV: {exc}") from exc
    if data.ndim != 1:
        raise BadAudio(f"{path}: expected mono audio, got {data.ndim} channels")
    if rate != REQUIRED_SAMPLE_RATE:
        raise BadAudio(f"{path}: expected {REQUIRED_SAMPLE_RATE} Hz, got {rate}")
    if data.size == 0:
        raise BadAudio(f"{path}: empty audio")
    if data.dtype == np.int16:
        wave = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        wave = data
    elif data.dtype == np.int32:
        wave = data.astype(np.float32) / 2147483648.0
    else:
        raise BadAudio(f"{path}: unsupported sample dtype {data.dtype}")
    if not np.all(np.isfinite(wave)):
        raise BadAudio(f"{path}: non-finite samples")
    return np.clip(wave, -1.0, 1.0)


class Encoder:
    """Frozen pretrained speech encoder behind a minimal interface."""

    def __init__(self, identifier: str, device: str = "cpu"):
        import torch

        try:
            from transformers import AutoFeatureExtractor, AutoModel

            self.model = AutoModel.from_pretrained(identifier)
            try:
                self.feature_extractor = AutoFeatureExtractor.from_pretrained(identifier)
            except Exception:
                from transformers import Wav2Vec2FeatureExtractor

                self.feature_extractor = Wav2Vec2FeatureExtractor(
                    sampling_rate=REQUIRED_SAMPLE_RATE, do_normalize=True
                )
        except Exception as exc:
            raise EncoderUnavailable(f"cannot load encoder {identifier!r}: {exc}") from exc
        if device.startswith("cuda") and not torch.cuda.is_available():
            device = "cpu"
        self.device = device
        self.model.to(device)
        self.model.eval()
        self.torch = torch

    def frames(self, wave: np.ndarray, max_chunk_samples: int) -> np.ndarray:
        """T x D hidden states; long inputs are chunked at frame multiples."""
        chunks = []
        if len(wave) > max_chunk_samples:
            step = max(FRAME_HOP_SAMPLES, (max_chunk_samples // FRAME_HOP_SAMPLES) * FRAME_HOP_SAMPLES)
            chunks = [wave[i:i + step] for i in range(0, len(wave), step)]
            # a trailing sliver shorter than one receptive field joins its neighbor
            if len(chunks) > 1 and len(chunks[-1]) < 2 * FRAME_HOP_SAMPLES:
                chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
                chunks.pop()
        else:
            chunks = [wave]
        outputs = []
        with self.torch.no_grad():
            for chunk in chunks:
                inputs = self.feature_extractor(
                    chunk, sampling_rate=REQUIRED_SAMPLE_RATE, return_tensors="pt"
                )
                hidden = self.model(inputs.input_values.to(self.device)).last_hidden_state
                outputs.append(hidden[0].cpu().numpy())
        return np.concatenate(outputs, axis=0)


def read_manifest_lines(path) -> list[dict]:
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExtractorError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict) or "id" not in record:
            raise ExtractorError(f"{path}:{lineno}: manifest lines need an 'id' field")
        records.append(record)
    return records


def write_manifest_lines(records: list[dict], path) -> None:
    lines = [json.dumps(r, separators=(",", ":")) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def extract(job: ExtractJob, encoder: Encoder | None = None) -> ExtractResult:
    """Convert every audio entry to an HRF file and rewrite the manifest.

    Existing structurally valid outputs are kept as is. Per-file audio
    problems are collected in the result, not raised; the rewritten manifest
    at <out_dir>/manifest.jsonl covers successful entries either way.
    """
    manifest_path = Path(job.manifest_path)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = read_manifest_lines(manifest_path)
    if encoder is None and any("audio_path" in r for r in records):
        encoder = Encoder(job.encoder, job.device)
    max_chunk = int(job.max_chunk_seconds * REQUIRED_SAMPLE_RATE)
    result = ExtractResult(entries=records)

    def convert(record: dict):
        target = out_dir / f"{record['id']}.hrf"
        if probe_hrf(target) is not None:
            return record, target, "skipped"
        audio = Path(record["audio_path"])
        if not audio.is_absolute():
            audio = manifest_path.parent / audio
        wave = load_waveform(audio)
        write_hrf(encoder.frames(wave, max_chunk), target)
        return record, target, "written"

    todo = [r for r in records if "audio_path" in r]
    outcomes = []
    if job.workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=job.workers) as pool:
            futures = [pool.submit(convert, r) for r in todo]
            for record, future in zip(todo, futures):
                try:
                    outcomes.append(future.result())
                except BadAudio as exc:
                    result.failures.append((record["id"], str(exc)))
    else:
        for record in todo:
            try:
                outcomes.append(convert(record))
            except BadAudio as exc:
                result.failures.append((record["id"], str(exc)))

    for record, target, status in outcomes:
        record["embedding_path"] = target.name
        if status == "written":
            result.written += 1
        else:
            result.skipped += 1
    write_manifest_lines(records, out_dir / "manifest.jsonl")
    return result
