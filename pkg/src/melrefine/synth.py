"""Synthetic speech-like test signals.

Desk-scale corpora are built from these clips instead of a downloaded
dataset. Each clip is a small source-filter synthesis: a smooth glottal
pulse train with jitter/shimmer and a syllable-rate envelope, aspiration
noise, a cascade of random formant resonators, first-difference radiation,
plus fricative bursts and a low broadband floor. Not speech, but close
enough in spectral statistics to exercise the DSP, codec, and metric paths
the way real recordings do.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .dsp import Waveform


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x**2)) + 1e-12)


def _smooth_noise(rng: np.random.Generator, n: int, span: int) -> np.ndarray:
    return np.convolve(rng.standard_normal(n), np.ones(span) / span, mode="same")


def speech_like(
    seed: int,
    sample_rate: int = 16000,
    duration: float = 1.5,
    f0: float | None = None,
    aspiration: float = 0.4,
) -> Waveform:
    """One pseudo-utterance, float64 samples with peak 0.85."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    if f0 is None:
        f0 = float(rng.uniform(95.0, 220.0))
    drift = f0 * 0.12 * np.sin(2 * np.pi * rng.uniform(0.3, 0.8) * t + rng.uniform(0, 6.28))
    vibrato = f0 * 0.02 * np.sin(2 * np.pi * 5.0 * t)
    jitter = f0 * 0.02 * _smooth_noise(rng, n, 200)
    inst_f0 = np.clip(f0 + drift + vibrato + jitter, 60.0, 400.0)
    cycle = np.cumsum(inst_f0 / sample_rate)

    # narrow smooth pulse once per glottal cycle, with amplitude shimmer
    pulses = np.maximum(0.0, np.cos(np.pi * (cycle % 1.0))) ** 4
    shimmer = 1.0 + 0.15 * _smooth_noise(rng, n, 300)

    # syllable rhythm with short pauses
    syllable = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.5, 4.0) * t + rng.uniform(0, 6.28))
    gate = np.clip(np.sin(2 * np.pi * rng.uniform(0.8, 1.4) * t + rng.uniform(0, 6.28)) + 0.85, 0.0, 1.0)
    envelope = syllable * gate

    voiced = pulses * shimmer * envelope
    asp = rng.standard_normal(n) * envelope * aspiration * _rms(voiced)
    tract = voiced + asp

    # cascade of random formant resonators (2-pole, unit gain at resonance)
    for fc, bw in zip(rng.uniform(300.0, 3200.0, 4), rng.uniform(80.0, 250.0, 4)):
        if fc >= 0.45 * sample_rate:
            continue
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2 * np.pi * fc / sample_rate
        b0 = (1 - r) * np.sqrt(1 - 2 * r * np.cos(2 * theta) + r * r)
        tract = lfilter([b0], [1.0, -2 * r * np.cos(theta), r * r], tract)
    tract = np.diff(tract, prepend=0.0)  # lip radiation tilt
    tract /= _rms(tract)

    # unvoiced bursts in the gaps, high-pass by differencing
    burst = np.clip(np.sin(2 * np.pi * rng.uniform(5.0, 8.0) * t + rng.uniform(0, 6.28)) - 0.8, 0.0, 1.0)
    fric = np.diff(rng.standard_normal(n), prepend=0.0) * burst
    if _rms(fric) > 1e-9:
        fric = 0.35 * fric / _rms(fric) * (burst > 0)

    signal = tract + fric
    signal += 0.003 * _rms(signal) * rng.standard_normal(n)
    peak = np.max(np.abs(signal))
    return 0.85 * signal / peak if peak > 0 else signal


def with_noise_at_snr(clean: Waveform, snr_db: float, seed: int = 0) -> Waveform:
    """Add white noise at the requested SNR (dB) relative to clean power."""
    rng = np.random.default_rng(seed)
    clean = np.asarray(clean, dtype=np.float64)
    noise = rng.standard_normal(clean.size)
    p_clean = np.mean(clean**2)
    p_noise = np.mean(noise**2)
    scale = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return clean + scale * noise
