"""WAV decoding and 16 kHz mono preprocessing.

The encoder expects float waveforms at 16 kHz, single channel. Integer PCM
is scaled by the type's magnitude, channels are averaged, and sample-rate
conversion uses polyphase resampling on the reduced rational ratio. All
intermediate math runs in float64; callers cast at the boundary they need.
"""

from __future__ import annotations

from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_SAMPLE_RATE = 16000


def pcm_to_float(samples: np.ndarray) -> np.ndarray:
    """Samples as float64 in [-1, 1]; integer PCM scaled, floats passed through."""
    kind = samples.dtype.kind
    if kind == "f":
        return samples.astype(np.float64)
    if samples.dtype == np.uint8:
        # 8-bit WAV is unsigned with midpoint 128
        return (samples.astype(np.float64) - 128.0) / 128.0
    if kind == "i":
        scale = float(np.iinfo(samples.dtype).max) + 1.0
        return samples.astype(np.float64) / scale
    raise ValueError(f"unsupported sample dtype {samples.dtype}")


def downmix(samples: np.ndarray) -> np.ndarray:
    """Channel mean of [n] or [n, n_channels] samples."""
    if samples.ndim == 1:
        return samples
    if samples.ndim == 2 and samples.shape[1] >= 1:
        return samples.mean(axis=1)
    raise ValueError("samples must be [n] or [n, n_channels]")


def resample(samples: np.ndarray, rate: int, target: int = TARGET_SAMPLE_RATE) -> np.ndarray:
    """Polyphase resampling from rate to target; identity when equal."""
    if rate <= 0 or target <= 0:
        raise ValueError("sample rates must be positive")
    if rate == target:
        return samples
    g = gcd(rate, target)
    return resample_poly(samples, target // g, rate // g)


def load_mono_16k(path: str | Path) -> np.ndarray:
    """One WAV file as float32 mono at 16 kHz."""
    rate, samples = wavfile.read(path)
    mono = downmix(pcm_to_float(samples))
    if mono.size == 0:
        raise ValueError("audio file contains no samples")
    return resample(mono, int(rate)).astype(np.float32)
