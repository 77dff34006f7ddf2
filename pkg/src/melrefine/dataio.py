"""Corpus manifests and paired-example records on disk.

Manifest file format (text, UTF-8, LF line endings):

    sample_rate=<int><TAB>dsp_fingerprint=<16 hex chars>
    <clip_id><TAB><relative audio path><TAB>train|test
    ...

Pair record format (binary, little-endian), one file per clip:

    offset  size  content
    0       8     magic b"MELPAIR1"
    8       4     u32 n_mels
    12      4     u32 n_frames
    16      4     u32 sample_rate
    20      16    ASCII DSP fingerprint (16 hex chars)
    36      4*n_mels*n_frames   original log-mel, float32, row-major
    ...     4*n_mels*n_frames   coarse log-mel, float32, row-major

Records are byte-identical across re-runs for fixed parameters because the
Griffin-Lim phase seed is derived from the clip id.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import DspParams, MelSpectrogram, Waveform, make_coarse, trim_silence, wav_to_mel
from .errors import (
    AudioFormatError,
    DataError,
    InsufficientClipsError,
    PairFormatError,
)

log = logging.getLogger(__name__)

PAIR_MAGIC = b"MELPAIR1"
_PAIR_HEADER = struct.Struct("<8sIII16s")


def clip_seed(clip_id: str) -> int:
    """Deterministic per-clip Griffin-Lim seed, stable across runs."""
    digest = hashlib.sha256(clip_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def read_wav(path: str | Path) -> tuple[Waveform, int]:
    """Load a mono wav as float64 in [-1, 1]; raises AudioFormatError."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioFormatError(f"cannot decode {path}: {exc}") from exc
    if data.ndim != 1:
        raise AudioFormatError(f"{path} is not mono ({data.shape[1]} channels)")
    if data.dtype == np.int16:
        wave = data / 32768.0
    elif data.dtype == np.int32:
        wave = data / 2147483648.0
    elif data.dtype == np.uint8:
        wave = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        wave = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    return wave, int(rate)


def write_wav(path: str | Path, wave: Waveform, sample_rate: int) -> None:
    """Write 16-bit PCM, clipping anything outside [-1, 1]."""
    samples = np.clip(np.asarray(wave, dtype=np.float64), -1.0, 1.0)
    wavfile.write(Path(path), sample_rate, (samples * 32767.0).astype(np.int16))


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    audio_path: str  # absolute path once loaded
    split: str  # "train" or "test"


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    sample_rate: int
    dsp_fingerprint: str

    def __post_init__(self) -> None:
        ids = [e.clip_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("manifest clip_ids are not unique")
        bad = {e.split for e in self.entries} - {"train", "test"}
        if bad:
            raise DataError(f"unknown split names: {sorted(bad)}")

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    @property
    def train_entries(self) -> list[ManifestEntry]:
        return self.split_entries("train")

    @property
    def test_entries(self) -> list[ManifestEntry]:
        return self.split_entries("test")

    def save(self, path: str | Path) -> None:
        path = Path(path)
        base = path.parent.resolve()
        lines = [f"sample_rate={self.sample_rate}\tdsp_fingerprint={self.dsp_fingerprint}"]
        for e in self.entries:
            rel = Path(e.audio_path)
            try:
                rel = rel.resolve().relative_to(base)
            except ValueError:
                pass  # not under the manifest dir; keep the full path
            lines.append(f"{e.clip_id}\t{rel}\t{e.split}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        path = Path(path)
        base = path.parent.resolve()
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines:
            raise DataError(f"{path}: empty manifest")
        header = dict(
            field.split("=", 1) for field in lines[0].split("\t") if "=" in field
        )
        if "sample_rate" not in header or "dsp_fingerprint" not in header:
            raise DataError(f"{path}: malformed manifest header: {lines[0]!r}")
        entries = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: malformed record {line!r}")
            clip_id, rel, split = parts
            audio = Path(rel)
            if not audio.is_absolute():
                audio = base / audio
            entries.append(ManifestEntry(clip_id, str(audio), split))
        return cls(tuple(entries), int(header["sample_rate"]), header["dsp_fingerprint"])


def build_manifest(
    audio_dir: str | Path,
    train_count: int,
    test_count: int,
    seed: int,
    params: DspParams,
) -> CorpusManifest:
    """Select a seeded random train/test split from a directory of wavs.

    Files that cannot be decoded as mono wavs are skipped with a warning;
    mono clips at a different sample rate than the first one found are a
    hard error (pairs from mixed rates would be meaningless).
    """
    audio_dir = Path(audio_dir)
    if train_count < 0 or test_count < 0 or train_count + test_count < 1:
        raise DataError("train_count/test_count must be non-negative, total >= 1")
    if not audio_dir.is_dir():
        raise DataError(f"{audio_dir} is not a directory")
    usable: list[tuple[str, Path]] = []
    ref_rate: int | None = None
    for wav_path in sorted(audio_dir.glob("*.wav")):
        try:
            _, rate = read_wav(wav_path)
        except AudioFormatError as exc:
            log.warning("skipping %s: %s", wav_path.name, exc)
            continue
        if ref_rate is None:
            ref_rate = rate
        elif rate != ref_rate:
            raise AudioFormatError(
                f"mixed sample rates: {wav_path.name} is {rate} Hz, "
                f"expected {ref_rate} Hz"
            )
        usable.append((wav_path.stem, wav_path))
    total = train_count + test_count
    if len(usable) < total:
        raise InsufficientClipsError(
            f"need {total} usable clips ({train_count} train + {test_count} test), "
            f"found {len(usable)} in {audio_dir}"
        )
    order = np.random.default_rng(seed).permutation(len(usable))
    entries = []
    for rank, idx in enumerate(order[:total]):
        clip_id, wav_path = usable[idx]
        split = "train" if rank < train_count else "test"
        entries.append(ManifestEntry(clip_id, str(wav_path.resolve()), split))
    assert ref_rate is not None
    return CorpusManifest(tuple(entries), ref_rate, params.fingerprint())


@dataclass(frozen=True)
class PairedExample:
    clip_id: str
    coarse: MelSpectrogram
    original: MelSpectrogram

    def __post_init__(self) -> None:
        if self.coarse.values.shape != self.original.values.shape:
            raise PairFormatError(
                f"{self.clip_id}: coarse {self.coarse.values.shape} != "
                f"original {self.original.values.shape}"
            )
        if self.coarse.params.fingerprint() != self.original.params.fingerprint():
            raise PairFormatError(f"{self.clip_id}: mixed extraction parameters")


def write_pair(path: str | Path, pair: PairedExample) -> None:
    params = pair.original.params
    n_mels, n_frames = pair.original.values.shape
    header = _PAIR_HEADER.pack(
        PAIR_MAGIC,
        n_mels,
        n_frames,
        params.sample_rate,
        params.fingerprint().encode("ascii"),
    )
    body = (
        pair.original.values.astype("<f4").tobytes()
        + pair.coarse.values.astype("<f4").tobytes()
    )
    Path(path).write_bytes(header + body)


def read_pair(path: str | Path, params: DspParams) -> PairedExample:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _PAIR_HEADER.size:
        raise PairFormatError(f"{path}: truncated header")
    magic, n_mels, n_frames, rate, fp = _PAIR_HEADER.unpack_from(blob)
    if magic != PAIR_MAGIC:
        raise PairFormatError(f"{path}: bad magic {magic!r}")
    fingerprint = fp.decode("ascii")
    if fingerprint != params.fingerprint():
        raise PairFormatError(
            f"{path}: built with DSP fingerprint {fingerprint}, "
            f"reader expects {params.fingerprint()}"
        )
    if rate != params.sample_rate:
        raise PairFormatError(f"{path}: sample rate {rate} != {params.sample_rate}")
    count = n_mels * n_frames
    expected = _PAIR_HEADER.size + 2 * 4 * count
    if len(blob) != expected:
        raise PairFormatError(f"{path}: size {len(blob)} != expected {expected}")
    flat = np.frombuffer(blob, dtype="<f4", offset=_PAIR_HEADER.size)
    original = flat[:count].reshape(n_mels, n_frames).astype(np.float64)
    coarse = flat[count:].reshape(n_mels, n_frames).astype(np.float64)
    return PairedExample(
        path.stem,
        MelSpectrogram(coarse, params),
        MelSpectrogram(original, params),
    )


def pair_path(out_dir: str | Path, clip_id: str) -> Path:
    return Path(out_dir) / f"{clip_id}.melpair"


def make_pair(
    wave: Waveform, clip_id: str, params: DspParams
) -> PairedExample:
    """Extract the <coarse, original> mel pair for one clip."""
    original = wav_to_mel(wave, params)
    coarse = make_coarse(wave, params, seed=clip_seed(clip_id))
    n = min(original.n_frames, coarse.n_frames)
    return PairedExample(
        clip_id,
        MelSpectrogram(coarse.values[:, :n], params),
        MelSpectrogram(original.values[:, :n], params),
    )


def materialize_pairs(
    manifest: CorpusManifest,
    params: DspParams,
    out_dir: str | Path,
    trim_silence_db: float | None = None,
) -> int:
    """Write one pair record per manifest entry; returns the count written.

    Per-clip failures are logged and skipped so one broken file cannot sink
    a large corpus; callers can compare the return value with
    ``len(manifest.entries)``.
    """
    if manifest.dsp_fingerprint != params.fingerprint():
        raise DataError(
            f"manifest was built for DSP fingerprint {manifest.dsp_fingerprint}, "
            f"got {params.fingerprint()}; rebuild the manifest"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for entry in manifest.entries:
        try:
            wave, rate = read_wav(entry.audio_path)
            if rate != manifest.sample_rate:
                raise AudioFormatError(
                    f"{entry.audio_path}: rate {rate} != manifest {manifest.sample_rate}"
                )
            if trim_silence_db is not None:
                wave = trim_silence(wave, rate, top_db=trim_silence_db)
            pair = make_pair(wave, entry.clip_id, params)
            write_pair(pair_path(out_dir, entry.clip_id), pair)
            written += 1
        except Exception as exc:  # keep going; report in the summary
            log.warning("failed to materialize %s: %s", entry.clip_id, exc)
    if written < len(manifest.entries):
        log.warning(
            "materialized %d of %d clips; %d failed",
            written,
            len(manifest.entries),
            len(manifest.entries) - written,
        )
    return written
