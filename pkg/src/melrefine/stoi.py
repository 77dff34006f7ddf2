"""Short-time objective intelligibility between clean and processed speech.

Classic (non-extended) pipeline with the reference constants pinned:
resample to 10 kHz, 256-sample Hann frames with 50% overlap, removal of
frames more than 40 dB below the loudest clean frame, 15 one-third-octave
bands starting at 150 Hz over a 512-point FFT, 384 ms analysis segments
(30 frames), per-band energy normalization with -15 dB clipping, and the
mean of per-segment per-band correlation coefficients.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import resample_poly

from .errors import DataError

FS = 10000  # internal rate, Hz
FRAME_LEN = 256
HOP = 128
NFFT = 512
NUM_BANDS = 15
MIN_FREQ = 150.0  # center of the lowest one-third-octave band
SEG_FRAMES = 30  # 384 ms at 10 kHz with 128-sample hop
BETA = -15.0  # lower SDR clipping bound, dB
DYN_RANGE = 40.0  # silent-frame threshold below the loudest frame, dB

_EPS = np.finfo(np.float64).eps


def _frame_window() -> np.ndarray:
    return np.hanning(FRAME_LEN + 2)[1:-1]


def _frames(x: np.ndarray) -> np.ndarray:
    n = 1 + (len(x) - FRAME_LEN) // HOP
    return np.lib.stride_tricks.sliding_window_view(x, FRAME_LEN)[:: HOP][:n]


def _remove_silent_frames(
    clean: np.ndarray, processed: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    window = _frame_window()
    frames_c = _frames(clean) * window
    frames_p = _frames(processed) * window
    energy = 20.0 * np.log10(np.linalg.norm(frames_c, axis=1) + _EPS)
    mask = energy > energy.max() - DYN_RANGE
    frames_c = frames_c[mask]
    frames_p = frames_p[mask]
    # overlap-add the kept frames back into contiguous signals
    out_len = FRAME_LEN + HOP * (len(frames_c) - 1)
    out_c = np.zeros(out_len)
    out_p = np.zeros(out_len)
    for i in range(len(frames_c)):
        out_c[i * HOP : i * HOP + FRAME_LEN] += frames_c[i]
        out_p[i * HOP : i * HOP + FRAME_LEN] += frames_p[i]
    return out_c, out_p


def _third_octave_bands() -> np.ndarray:
    """Binary band matrix (NUM_BANDS, NFFT//2+1)."""
    freqs = np.linspace(0.0, FS / 2, NFFT // 2 + 1)
    centers = MIN_FREQ * 2.0 ** (np.arange(NUM_BANDS) / 3.0)
    low = centers / 2.0 ** (1.0 / 6.0)
    high = centers * 2.0 ** (1.0 / 6.0)
    bands = ((freqs[None, :] >= low[:, None]) & (freqs[None, :] < high[:, None]))
    return bands.astype(np.float64)


def _band_spectrogram(x: np.ndarray, bands: np.ndarray) -> np.ndarray:
    window = _frame_window()
    frames = _frames(x) * window
    spec = np.abs(np.fft.rfft(frames, n=NFFT, axis=1)) ** 2  # (T, bins)
    return np.sqrt(bands @ spec.T)  # (bands, T)


def stoi(clean: np.ndarray, processed: np.ndarray, sample_rate: int) -> float:
    """Intelligibility of ``processed`` given ``clean``, clamped to [0, 1].

    Both signals must share ``sample_rate``; they are truncated to the
    shorter one (synthesis pipelines can differ by a frame).
    """
    clean = np.asarray(clean, dtype=np.float64)
    processed = np.asarray(processed, dtype=np.float64)
    if clean.ndim != 1 or processed.ndim != 1:
        raise DataError("stoi expects 1-D waveforms")
    if sample_rate <= 0:
        raise DataError(f"bad sample rate {sample_rate}")
    n = min(len(clean), len(processed))
    if abs(len(clean) - len(processed)) > max(FRAME_LEN, sample_rate // 25):
        raise DataError(
            f"length mismatch too large: {len(clean)} vs {len(processed)} samples"
        )
    clean, processed = clean[:n], processed[:n]
    if sample_rate != FS:
        g = math.gcd(FS, sample_rate)
        clean = resample_poly(clean, FS // g, sample_rate // g)
        processed = resample_poly(processed, FS // g, sample_rate // g)
    if len(clean) < FRAME_LEN:
        raise DataError("clip too short for a single STOI frame")
    clean, processed = _remove_silent_frames(clean, processed)

    bands = _third_octave_bands()
    x = _band_spectrogram(clean, bands)  # (bands, frames)
    y = _band_spectrogram(processed, bands)
    n_frames = x.shape[1]
    if n_frames < SEG_FRAMES:
        raise DataError(
            f"clip too short for one {SEG_FRAMES * HOP / FS * 1000:.0f} ms STOI "
            f"segment after silence removal ({n_frames} frames)"
        )

    clip_gain = 10.0 ** (-BETA / 20.0)
    scores = []
    for m in range(SEG_FRAMES, n_frames + 1):
        x_seg = x[:, m - SEG_FRAMES : m]
        y_seg = y[:, m - SEG_FRAMES : m]
        alpha = np.sqrt(
            (x_seg**2).sum(axis=1, keepdims=True)
            / ((y_seg**2).sum(axis=1, keepdims=True) + _EPS)
        )
        y_norm = np.minimum(alpha * y_seg, x_seg * (1.0 + clip_gain))
        xc = x_seg - x_seg.mean(axis=1, keepdims=True)
        yc = y_norm - y_norm.mean(axis=1, keepdims=True)
        num = (xc * yc).sum(axis=1)
        den = np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1) + _EPS
        scores.append(num / den)
    value = float(np.mean(scores))
    return min(1.0, max(0.0, value))
