"""Audio clip container, polyphase resampling, and peak normalization."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import firwin, resample_poly

from ..errors import EmptyClip, InvalidRate

TARGET_RATE = 40000
PEAK_LEVEL = 0.95

_TAPS_PER_PHASE = 32
_KAISER_BETA = 9.0


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.rate <= 0:
            raise InvalidRate(f"sample rate must be positive, got {self.rate}")
        if self.samples.ndim != 1:
            raise ValueError("clips are mono 1-D sample vectors")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


@lru_cache(maxsize=None)
def _resample_filter(up: int, down: int) -> np.ndarray:
    half = _TAPS_PER_PHASE * max(up, down)
    return firwin(2 * half + 1, 1.0 / max(up, down), window=("kaiser", _KAISER_BETA))


def resample(clip: AudioClip, target_rate: int = TARGET_RATE) -> AudioClip:
    """Windowed-sinc polyphase resampling; duration preserved to one sample."""
    if target_rate <= 0:
        raise InvalidRate(f"target rate must be positive, got {target_rate}")
    if clip.rate == target_rate:
        return clip
    g = np.gcd(clip.rate, target_rate)
    up, down = target_rate // g, clip.rate // g
    out = resample_poly(clip.samples, up, down, window=_resample_filter(up, down))
    return AudioClip(out, target_rate)


def normalize(clip: AudioClip, peak: float = PEAK_LEVEL) -> AudioClip:
    """Scale so the absolute peak is ``peak``; silent input is returned unchanged."""
    if clip.samples.size == 0:
        raise EmptyClip("cannot normalize an empty clip")
    top = float(np.max(np.abs(clip.samples)))
    if top == 0.0:
        return clip
    return AudioClip(clip.samples * (peak / top), clip.rate)
