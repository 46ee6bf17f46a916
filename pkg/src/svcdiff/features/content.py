"""Pitch-robust content features and the 256-dim conditioning track.

Content features are per-frame mel-cepstral coefficients 1..20 (the energy
coefficient c0 is excluded, making them invariant to global gain), mean- and
variance-normalized per utterance. The conditioning track concatenates
[log(1 + f0), voicing flag, content...] per frame and applies a fixed,
seed-determined random linear projection to 256 dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from ..errors import FrameCountMismatch
from .f0 import F0Contour
from .stft import MelSpectrogram

N_CEPSTRA = 20
COND_DIM = 256


@dataclass(frozen=True)
class ConditioningTrack:
    vectors: np.ndarray  # (n_frames, COND_DIM)

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[1] != COND_DIM:
            raise ValueError(f"conditioning must be frames x {COND_DIM}")


def mel_cepstra(mel: MelSpectrogram, n_coeffs: int = N_CEPSTRA) -> np.ndarray:
    """DCT-II cepstra of the log-mel frames, coefficients 1..n_coeffs."""
    ceps = scipy.fft.dct(mel.frames, type=2, axis=1, norm="ortho")
    return ceps[:, 1 : n_coeffs + 1]


def content_features(mel: MelSpectrogram, n_coeffs: int = N_CEPSTRA) -> np.ndarray:
    """Gain-invariant, per-utterance normalized mel-cepstral content embedding."""
    ceps = mel_cepstra(mel, n_coeffs)
    mean = ceps.mean(axis=0, keepdims=True)
    std = ceps.std(axis=0, keepdims=True)
    return np.where(std > 1e-10, (ceps - mean) / np.where(std > 0, std, 1.0), 0.0)


@lru_cache(maxsize=None)
def _projection(in_dim: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.standard_normal((in_dim, COND_DIM)) / np.sqrt(in_dim)


def build_conditioning(f0: F0Contour, content: np.ndarray, seed: int = 0) -> ConditioningTrack:
    """Project [log1p(f0), voicing, content...] per frame into 256 dimensions."""
    content = np.atleast_2d(np.asarray(content, dtype=np.float64))
    if f0.hz.shape[0] != content.shape[0]:
        raise FrameCountMismatch(
            f"f0 has {f0.hz.shape[0]} frames, content has {content.shape[0]}"
        )
    raw = np.concatenate(
        [np.log1p(f0.hz)[:, None], f0.voiced.astype(np.float64)[:, None], content], axis=1
    )
    return ConditioningTrack(raw @ _projection(raw.shape[1], seed))
