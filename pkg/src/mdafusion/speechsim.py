"""Synthetic spoken-digit waveforms.

Vowel-like harmonic sources shaped by per-digit formant triples, with
per-speaker pitch and per-take jitter. Used to build the desk-scale paired
image/audio corpus and the audio test fixtures.
"""

from __future__ import annotations

import numpy as np

# Formant triples (Hz) per digit, loosely after classic vowel measurements;
# the point is ten distinct spectral envelopes below a 4 kHz Nyquist.
DIGIT_FORMANTS = [
    (730, 1090, 2440),
    (270, 2290, 3010),
    (530, 1840, 2480),
    (660, 1720, 2410),
    (440, 1020, 2240),
    (300, 870, 2240),
    (640, 1190, 2390),
    (490, 1350, 1690),
    (390, 1990, 2550),
    (570, 840, 2410),
]

SPEAKER_PITCH = [110.0, 150.0, 200.0]


def synth_spoken_digit(digit: int, speaker: int, rng: np.random.Generator,
                       sample_rate=8000, duration=0.4, noise_std=0.02) -> np.ndarray:
    """One synthetic utterance of ``digit`` by ``speaker``; float in [-1, 1]."""
    if not 0 <= digit <= 9:
        raise ValueError(f"digit must be 0..9, got {digit}")
    n = int(round(sample_rate * duration))
    t = np.arange(n) / sample_rate

    f0 = SPEAKER_PITCH[speaker % len(SPEAKER_PITCH)] * (1.0 + 0.04 * rng.standard_normal())
    formants = np.array(DIGIT_FORMANTS[digit], dtype=np.float64)
    formants = formants * (1.0 + 0.02 * rng.standard_normal(3))
    bandwidths = np.array([90.0, 110.0, 140.0])

    nyquist = sample_rate / 2.0
    n_harmonics = int(nyquist / f0) - 1
    wave = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        fh = h * f0
        gain = np.sum(np.exp(-0.5 * ((fh - formants) / bandwidths) ** 2))
        # weak spectral tilt so higher harmonics do not vanish entirely
        gain += 0.02 / h
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave += gain * np.sin(2.0 * np.pi * fh * t + phase)

    wave /= np.max(np.abs(wave))
    # raised-cosine onset/offset (20 ms) to avoid clicks
    edge = int(0.02 * sample_rate)
    env = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    env[:edge] = ramp
    env[-edge:] = ramp[::-1]
    wave = 0.5 * wave * env + noise_std * rng.standard_normal(n)
    return np.clip(wave, -1.0, 1.0)
