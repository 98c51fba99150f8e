"""Mono WAV reading/writing (PCM 16-bit or float32)."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile


class WavFormatError(ValueError):
    """Raised when a WAV file cannot be parsed or has an unsupported layout."""


def read_wav(path) -> tuple[int, np.ndarray]:
    """Read a mono WAV file; returns (sample_rate, float64 samples in [-1, 1])."""
    try:
        sr, data = wavfile.read(path)
    except Exception as exc:
        raise WavFormatError(f"unparsable WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise WavFormatError(f"{path}: expected mono audio, got {data.ndim}-channel")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    return int(sr), samples


def write_wav_pcm16(path, sample_rate: int, samples: np.ndarray):
    """Write float samples in [-1, 1] as 16-bit PCM."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(path, sample_rate, pcm)
