"""Audio feature pipeline: I/O, resampling, mel, F0, conditioning, slicing."""

from .audio import PEAK_LEVEL, TARGET_RATE, AudioClip, normalize, resample
from .content import COND_DIM, ConditioningTrack, build_conditioning, content_features, mel_cepstra
from .f0 import F0Contour, estimate_f0
from .slicer import SlicerConfig, augment, slice_audio, slice_spans
from .stft import (
    HOP,
    LOG_FLOOR,
    N_FFT,
    N_MELS,
    WIN,
    MelSpectrogram,
    frame_count,
    griffin_lim,
    istft,
    mel_band_response,
    mel_filterbank,
    mel_spectrogram,
    stft,
)
from .wavio import read_wav, write_wav

__all__ = [
    "AudioClip",
    "COND_DIM",
    "ConditioningTrack",
    "F0Contour",
    "HOP",
    "LOG_FLOOR",
    "MelSpectrogram",
    "N_FFT",
    "N_MELS",
    "PEAK_LEVEL",
    "SlicerConfig",
    "TARGET_RATE",
    "WIN",
    "augment",
    "build_conditioning",
    "content_features",
    "estimate_f0",
    "frame_count",
    "griffin_lim",
    "istft",
    "mel_band_response",
    "mel_cepstra",
    "mel_filterbank",
    "mel_spectrogram",
    "normalize",
    "read_wav",
    "resample",
    "slice_audio",
    "slice_spans",
    "stft",
    "write_wav",
]
