"""Spectrogram analysis/synthesis: STFT, mel filterbanks, Griffin-Lim.

Conventions (pinned for reproducibility):

* periodic Hann window of length ``win_length``, zero-centered inside
  ``n_fft`` when shorter;
* centered frames with reflect padding of ``n_fft // 2`` samples, so a
  waveform of ``n`` samples yields ``1 + n // hop_length`` frames;
* synthesis by overlap-add with window-square-sum normalization, returning
  ``(T - 1) * hop_length`` samples for ``T`` frames;
* mel values are natural-log magnitudes floored at ``log_floor``;
* mel inversion uses the Moore-Penrose pseudo-inverse of the filterbank
  clipped to non-negative magnitudes;
* Griffin-Lim starts from seeded uniform random phase, so identical
  (magnitudes, iters, seed) give bit-identical audio.

Every function is pure; nothing here touches the filesystem.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DataError, ShapeMismatchError

Waveform = np.ndarray  # 1-D float array of mono samples


@dataclass(frozen=True)
class DspParams:
    """Everything needed to extract a mel spectrogram and to invert it."""

    sample_rate: int = 22050
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None  # None means sample_rate / 2
    griffin_lim_iters: int = 60
    log_floor: float = 1e-5
    filterbank_norm: str = "area"  # "area" (Slaney-style) or "peak"

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if not (0 < self.win_length <= self.n_fft):
            raise DataError(
                f"need 0 < win_length <= n_fft, got {self.win_length} / {self.n_fft}"
            )
        if not (0 < self.hop_length <= self.win_length):
            raise DataError(
                f"need 0 < hop_length <= win_length, got {self.hop_length} / {self.win_length}"
            )
        if self.n_mels < 1:
            raise DataError(f"n_mels must be >= 1, got {self.n_mels}")
        if not (0.0 <= self.fmin < self.fmax_hz <= self.sample_rate / 2):
            raise DataError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got "
                f"fmin={self.fmin}, fmax={self.fmax_hz}, sr={self.sample_rate}"
            )
        if self.griffin_lim_iters < 0:
            raise DataError("griffin_lim_iters must be >= 0")
        if self.log_floor <= 0:
            raise DataError("log_floor must be positive")
        if self.filterbank_norm not in ("area", "peak"):
            raise DataError(f"unknown filterbank_norm {self.filterbank_norm!r}")

    @property
    def fmax_hz(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def log_floor_value(self) -> float:
        """Lowest value a mel entry can take: log(log_floor)."""
        return float(np.log(self.log_floor))

    def fingerprint(self) -> str:
        """16-hex-char digest of every field; stored in manifests and pair
        records so data built under different conventions cannot be mixed."""
        canon = (
            f"sr={self.sample_rate};nfft={self.n_fft};win={self.win_length};"
            f"hop={self.hop_length};mels={self.n_mels};fmin={self.fmin:.6g};"
            f"fmax={self.fmax_hz:.6g};gl={self.griffin_lim_iters};"
            f"floor={self.log_floor:.6g};norm={self.filterbank_norm}"
        )
        return hashlib.sha256(canon.encode("ascii")).hexdigest()[:16]


@dataclass(frozen=True)
class LinearSpectrogram:
    """Non-negative STFT magnitudes, shape (n_fft//2+1, T)."""

    magnitudes: np.ndarray
    params: DspParams

    def __post_init__(self) -> None:
        m = self.magnitudes
        if m.ndim != 2 or m.shape[0] != self.params.n_bins:
            raise ShapeMismatchError(
                f"expected ({self.params.n_bins}, T) magnitudes, got {m.shape}"
            )
        if m.size and float(m.min()) < 0:
            raise DataError("magnitudes must be non-negative")


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel matrix, shape (n_mels, T), floored at log(log_floor)."""

    values: np.ndarray
    params: DspParams

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 2 or v.shape[0] != self.params.n_mels:
            raise ShapeMismatchError(
                f"expected ({self.params.n_mels}, T) mel values, got {v.shape}"
            )
        if v.size:
            if not np.all(np.isfinite(v)):
                raise DataError("mel values must be finite")
            # small slack for float32 round-trips through pair files
            if float(v.min()) < self.params.log_floor_value - 1e-5:
                raise DataError(
                    f"mel values below log floor: min {float(v.min()):.6f} < "
                    f"{self.params.log_floor_value:.6f}"
                )

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def _window(params: DspParams) -> np.ndarray:
    """Periodic Hann of win_length, zero-padded symmetrically to n_fft."""
    n = params.win_length
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    if n < params.n_fft:
        pad = params.n_fft - n
        w = np.pad(w, (pad // 2, pad - pad // 2))
    return w


def stft(wave: Waveform, params: DspParams, center: bool = True) -> np.ndarray:
    """Short-time Fourier transform, complex (n_fft//2+1, T)."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ShapeMismatchError(f"waveform must be 1-D, got shape {wave.shape}")
    if wave.size == 0:
        raise DataError("cannot transform an empty waveform")
    n_fft, hop = params.n_fft, params.hop_length
    if center:
        pad = n_fft // 2
        mode = "reflect" if wave.size > 1 else "edge"
        wave = np.pad(wave, pad, mode=mode)
    if wave.size < n_fft:
        wave = np.pad(wave, (0, n_fft - wave.size))
    frames = np.lib.stride_tricks.sliding_window_view(wave, n_fft)[::hop]
    return np.fft.rfft(frames * _window(params), n=n_fft, axis=1).T


def istft(spec: np.ndarray, params: DspParams, center: bool = True) -> Waveform:
    """Inverse STFT by overlap-add with window-square-sum normalization."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[0] != params.n_bins:
        raise ShapeMismatchError(
            f"expected ({params.n_bins}, T) spectrum, got {spec.shape}"
        )
    n_fft, hop = params.n_fft, params.hop_length
    n_frames = spec.shape[1]
    if n_frames == 0:
        return np.zeros(0)
    window = _window(params)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1) * window
    out_len = n_fft + hop * (n_frames - 1)
    buf = np.zeros(out_len)
    wsum = np.zeros(out_len)
    wsq = window * window
    for t in range(n_frames):
        buf[t * hop : t * hop + n_fft] += frames[t]
        wsum[t * hop : t * hop + n_fft] += wsq
    good = wsum > 1e-11
    buf[good] /= wsum[good]
    if center:
        pad = n_fft // 2
        buf = buf[pad : out_len - pad]
    return buf


def mel_filterbank(params: DspParams) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft//2+1).

    Filter edges are equally spaced on the mel scale between fmin and fmax.
    ``area`` normalization scales each triangle by 2 / (bandwidth in Hz);
    ``peak`` normalization rescales each row to a maximum of 1.
    """
    fftfreqs = np.linspace(0.0, params.sample_rate / 2, params.n_bins)
    mel_pts = np.linspace(
        _hz_to_mel(params.fmin), _hz_to_mel(params.fmax_hz), params.n_mels + 2
    )
    hz_pts = _mel_to_hz(mel_pts)
    fdiff = np.diff(hz_pts)
    ramps = hz_pts[:, None] - fftfreqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1][:, None]
    upper = ramps[2:] / fdiff[1:][:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    if params.filterbank_norm == "area":
        fb *= (2.0 / (hz_pts[2:] - hz_pts[:-2]))[:, None]
    else:
        peaks = fb.max(axis=1)
        if np.any(peaks <= 0):
            raise DataError(
                "degenerate mel filterbank: a filter spans no FFT bin; "
                "use a larger n_fft or fewer mel channels"
            )
        fb /= peaks[:, None]
    if np.any(fb.sum(axis=1) <= 0):
        raise DataError(
            "degenerate mel filterbank: a filter spans no FFT bin; "
            "use a larger n_fft or fewer mel channels"
        )
    return fb


@lru_cache(maxsize=32)
def _filterbank_and_pinv(params: DspParams) -> tuple[np.ndarray, np.ndarray]:
    fb = mel_filterbank(params)
    return fb, np.linalg.pinv(fb)


def wav_to_mel(wave: Waveform, params: DspParams) -> MelSpectrogram:
    """Log-mel extraction: log(max(filterbank @ |STFT|, log_floor))."""
    mags = np.abs(stft(wave, params))
    fb, _ = _filterbank_and_pinv(params)
    values = np.log(np.maximum(fb @ mags, params.log_floor))
    return MelSpectrogram(values, params)


def mel_to_linear(mel: MelSpectrogram) -> LinearSpectrogram:
    """Approximate magnitude recovery via the filterbank pseudo-inverse."""
    _, pinv = _filterbank_and_pinv(mel.params)
    mags = np.maximum(pinv @ np.exp(mel.values), 0.0)
    return LinearSpectrogram(mags, mel.params)


def griffin_lim(
    spec: LinearSpectrogram, iters: int | None = None, seed: int = 0
) -> Waveform:
    """Estimate phase for a magnitude spectrogram and synthesize audio.

    Starts from uniform random phase drawn from ``seed`` and alternates
    synthesis/analysis ``iters`` times, each time keeping the target
    magnitudes and the newest phase estimate. ``iters=None`` uses the
    params default; ``iters=0`` synthesizes straight from random phase.
    """
    params = spec.params
    if iters is None:
        iters = params.griffin_lim_iters
    if iters < 0:
        raise DataError("iters must be >= 0")
    mag = spec.magnitudes.astype(np.float64)
    rng = np.random.default_rng(seed)
    cplx = mag * np.exp(2j * np.pi * rng.random(mag.shape))
    for _ in range(iters):
        rebuilt = stft(istft(cplx, params), params)
        phase = np.angle(rebuilt)
        cplx = mag * np.exp(1j * phase)
    return istft(cplx, params)


def make_coarse(wave: Waveform, params: DspParams, seed: int = 0) -> MelSpectrogram:
    """Degrade a clip by a mel -> Griffin-Lim -> mel round trip.

    This is the lossy pipeline that produces training inputs: the phase
    discarded by the mel representation must be re-estimated, which smears
    fine detail. Frame counts are aligned to the original by truncation.
    """
    original = wav_to_mel(wave, params)
    rebuilt = griffin_lim(mel_to_linear(original), params.griffin_lim_iters, seed)
    coarse = wav_to_mel(rebuilt, params)
    n = min(original.n_frames, coarse.n_frames)
    return MelSpectrogram(coarse.values[:, :n], params)


def spectral_convergence(
    wave: Waveform, target: LinearSpectrogram
) -> float:
    """Normalized Frobenius distance between |STFT(wave)| and target."""
    mags = np.abs(stft(wave, target.params))
    n = min(mags.shape[1], target.magnitudes.shape[1])
    diff = mags[:, :n] - target.magnitudes[:, :n]
    denom = np.linalg.norm(target.magnitudes[:, :n])
    if denom == 0:
        raise DataError("target spectrogram is all zero")
    return float(np.linalg.norm(diff) / denom)


def trim_silence(
    wave: Waveform, sample_rate: int, top_db: float = 40.0
) -> Waveform:
    """Drop leading/trailing audio more than top_db below the loudest frame.

    Off by default everywhere; data preparation exposes it as a flag.
    """
    wave = np.asarray(wave, dtype=np.float64)
    frame, hop = 2048, 512
    if wave.size <= frame:
        return wave
    frames = np.lib.stride_tricks.sliding_window_view(wave, frame)[::hop]
    rms = np.sqrt(np.mean(frames**2, axis=1)) + 1e-12
    db = 20.0 * np.log10(rms)
    keep = np.flatnonzero(db > db.max() - top_db)
    if keep.size == 0:
        return wave
    start = keep[0] * hop
    # keep the unframed tail when the last active frame is the final one
    stop = wave.size if keep[-1] == len(db) - 1 else keep[-1] * hop + frame
    return wave[start:stop]
