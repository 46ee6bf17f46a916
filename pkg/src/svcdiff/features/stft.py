"""STFT, mel filterbank analysis, and Griffin-Lim phase reconstruction.

Analysis uses a periodic Hann window, no center padding, a 512-point FFT and
window with a 128-sample hop at 40 kHz, and an 80-band area-normalized
triangular mel filterbank on the HTK scale spanning 0-20 kHz. Log-mel values
are floored at 1e-5 before the natural log.

The inverse STFT is the exact least-squares signal estimate (windowed
overlap-add divided by the summed squared window), which is what makes the
Griffin-Lim magnitude mismatch non-increasing from one iteration to the next.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from ..errors import ClipTooShort, InvalidRate
from .audio import AudioClip, TARGET_RATE

N_FFT = 512
WIN = 512
HOP = 128
N_MELS = 80
FMIN = 0.0
FMAX = 20000.0
LOG_FLOOR = 1e-5

_CHUNK = 1024  # frames per task; fixed so results never depend on thread count


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # (n_frames, N_MELS), natural-log magnitudes
    fft: int = N_FFT
    win: int = WIN
    hop: int = HOP
    rate: int = TARGET_RATE
    log_floor: float = LOG_FLOOR


def frame_count(n_samples: int, win: int = WIN, hop: int = HOP) -> int:
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


@lru_cache(maxsize=None)
def _hann(win: int) -> np.ndarray:
    # periodic Hann: exact constant overlap-add at hop = win / 4
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)


def _frames(x: np.ndarray, win: int = WIN, hop: int = HOP) -> np.ndarray:
    n = frame_count(x.size, win, hop)
    stride = x.strides[0]
    return np.lib.stride_tricks.as_strided(x, shape=(n, win), strides=(hop * stride, stride))


def stft(x: np.ndarray, threads: int = 1) -> np.ndarray:
    """Magnitude-and-phase STFT, shape (n_frames, N_FFT//2 + 1)."""
    frames = _frames(np.ascontiguousarray(x, dtype=np.float64))
    window = _hann(WIN)
    if threads <= 1 or frames.shape[0] <= _CHUNK:
        return scipy.fft.rfft(frames * window, n=N_FFT, axis=1)
    chunks = range(0, frames.shape[0], _CHUNK)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda i: scipy.fft.rfft(frames[i : i + _CHUNK] * window, n=N_FFT, axis=1), chunks))
    return np.concatenate(parts, axis=0)


def istft(spec: np.ndarray, win: int = WIN, hop: int = HOP) -> np.ndarray:
    """Least-squares inverse STFT (normalized windowed overlap-add)."""
    n_frames = spec.shape[0]
    length = (n_frames - 1) * hop + win
    window = _hann(win)
    frames_t = scipy.fft.irfft(spec, n=win, axis=1)
    num = np.zeros(length)
    den = np.zeros(length)
    wsq = window * window
    for f in range(n_frames):
        start = f * hop
        num[start : start + win] += window * frames_t[f]
        den[start : start + win] += wsq
    out = np.zeros(length)
    covered = den > 1e-12
    out[covered] = num[covered] / den[covered]
    return out


def _mel_points(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    return to_hz(np.linspace(to_mel(fmin), to_mel(fmax), n_mels + 2))


def _triangle_integral(lo: float, center: float, hi: float, a: float, b: float) -> float:
    """Integral of the unit-peak triangle (lo, center, hi) over [a, b]."""
    a = min(max(a, lo), hi)
    b = min(max(b, lo), hi)
    if b <= a:
        return 0.0

    def cum(x):
        if x <= center:
            return (x - lo) ** 2 / (2.0 * (center - lo)) if center > lo else 0.0
        right = (hi - center) / 2.0 - (hi - x) ** 2 / (2.0 * (hi - center)) if hi > center else 0.0
        return (center - lo) / 2.0 + right

    return cum(b) - cum(a)


@lru_cache(maxsize=None)
def mel_filterbank(
    n_mels: int = N_MELS, n_fft: int = N_FFT, rate: int = TARGET_RATE,
    fmin: float = FMIN, fmax: float = FMAX,
) -> np.ndarray:
    """Area-normalized triangular filters on the HTK mel scale, (n_mels, n_fft//2+1).

    Each weight is the triangle's integral over the FFT bin's frequency cell
    (not a point sample), so even triangles narrower than a bin keep support
    and every filter's sampled area is exactly its continuous area.
    """
    points = _mel_points(n_mels, fmin, fmax)
    n_bins = n_fft // 2 + 1
    bin_width = rate / n_fft
    weights = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = points[m], points[m + 1], points[m + 2]
        norm = 2.0 / (hi - lo)
        k_lo = max(int((lo - bin_width / 2) // bin_width), 0)
        k_hi = min(int((hi + bin_width / 2) // bin_width) + 1, n_bins - 1)
        for k in range(k_lo, k_hi + 1):
            cell_a = (k - 0.5) * bin_width
            cell_b = (k + 0.5) * bin_width
            weights[m, k] = _triangle_integral(lo, center, hi, cell_a, cell_b) / bin_width * norm
    return weights


def mel_band_response(freq_hz: float, n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Analytic filterbank response to a pure tone (no FFT involved)."""
    points = _mel_points(n_mels, fmin, fmax)
    resp = np.zeros(n_mels)
    for m in range(n_mels):
        lo, center, hi = points[m], points[m + 1], points[m + 2]
        up = (freq_hz - lo) / max(center - lo, 1e-12)
        down = (hi - freq_hz) / max(hi - center, 1e-12)
        resp[m] = max(0.0, min(up, down)) * (2.0 / (hi - lo))
    return resp


def mel_spectrogram(clip: AudioClip, threads: int = 1) -> MelSpectrogram:
    """Log-magnitude mel spectrogram with the fixed 512/512/128/80 geometry."""
    if clip.rate != TARGET_RATE:
        raise InvalidRate(f"mel analysis expects {TARGET_RATE} Hz, got {clip.rate}")
    if clip.samples.size < WIN:
        raise ClipTooShort(f"need at least {WIN} samples, got {clip.samples.size}")
    mag = np.abs(stft(clip.samples, threads=threads))
    mel = mag @ mel_filterbank().T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)))


@lru_cache(maxsize=None)
def _mel_pinv(n_mels: int = N_MELS, n_fft: int = N_FFT) -> np.ndarray:
    return np.linalg.pinv(mel_filterbank(n_mels, n_fft))


def griffin_lim(mel: MelSpectrogram, iters: int = 60, return_mismatch: bool = False):
    """Reconstruct a waveform from a log-mel spectrogram.

    The mel frames are mapped to an approximate linear magnitude through the
    filterbank pseudo-inverse (clamped at zero), then Griffin-Lim refines the
    phase for ``iters`` iterations starting from zero phase. The recorded
    mismatch ``|STFT(x_k)| - target`` (Frobenius) is non-increasing in k.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    target = np.maximum(np.exp(mel.frames) @ _mel_pinv().T, 0.0)
    spec = target.astype(np.complex128)  # zero initial phase
    x = istft(spec)
    mismatches = []
    for _ in range(iters):
        s = stft(x)
        mag = np.abs(s)
        mismatches.append(float(np.linalg.norm(mag - target)))
        phase = np.where(mag > 0, s / np.where(mag > 0, mag, 1.0), 1.0)
        x = istft(target * phase)
    clip = AudioClip(x, mel.rate)
    if return_mismatch:
        return clip, mismatches
    return clip
