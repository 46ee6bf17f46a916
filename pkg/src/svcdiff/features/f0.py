"""DIO-style fundamental-frequency estimation with voicing flags.

The signal is low-pass filtered at a bank of octave-spaced cutoffs; in each
band the four fundamental-period event sequences (rising and falling zero
crossings, peaks, dips) yield candidate frequency tracks. A candidate is
reliable where the four tracks agree; per frame the most reliable in-range
candidate wins, and frames whose best relative deviation exceeds the voicing
threshold (or with no usable candidates) are unvoiced with hz = 0.

Frames are aligned with the mel analysis: one estimate per 128-sample hop,
centered like a 512-sample window.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, filtfilt

from ..errors import ClipTooShort, InvalidRate
from .audio import AudioClip, TARGET_RATE
from .stft import HOP, WIN, frame_count

CUTOFFS = (50.0, 100.0, 200.0, 400.0, 800.0, 1100.0)
F0_FLOOR = 40.0
F0_CEIL = 1100.0
VOICING_THRESHOLD = 0.1
AMPLITUDE_FLOOR = 1e-5


@dataclass(frozen=True)
class F0Contour:
    hz: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        if self.hz.shape != self.voiced.shape:
            raise ValueError("hz and voiced must align")


def _event_times(x: np.ndarray, rate: int):
    """Times (seconds) of rising/falling zero crossings and peaks/dips."""
    sign = np.signbit(x)
    rising_idx = np.nonzero(sign[:-1] & ~sign[1:])[0]
    falling_idx = np.nonzero(~sign[:-1] & sign[1:])[0]

    def crossing_times(idx):
        x0 = x[idx]
        x1 = x[idx + 1]
        frac = np.where(x1 != x0, x0 / (x0 - x1), 0.5)
        return (idx + frac) / rate

    d = np.diff(x)
    dsign = np.signbit(d)
    peak_idx = np.nonzero(~dsign[:-1] & dsign[1:])[0] + 1
    dip_idx = np.nonzero(dsign[:-1] & ~dsign[1:])[0] + 1

    def refined_times(idx):
        # parabolic interpolation around the extremum
        idx = idx[(idx >= 1) & (idx < x.size - 1)]
        a = x[idx - 1]
        b = x[idx]
        c = x[idx + 1]
        denom = a - 2 * b + c
        shift = np.where(np.abs(denom) > 1e-12, 0.5 * (a - c) / np.where(denom != 0, denom, 1.0), 0.0)
        return (idx + np.clip(shift, -0.5, 0.5)) / rate

    return (
        crossing_times(rising_idx),
        crossing_times(falling_idx),
        refined_times(peak_idx),
        refined_times(dip_idx),
    )


def _interval_track(times: np.ndarray, frame_times: np.ndarray) -> np.ndarray:
    """Instantaneous frequency from successive event intervals, NaN off-support."""
    if times.size < 2:
        return np.full(frame_times.size, np.nan)
    periods = np.diff(times)
    good = periods > 0
    if good.sum() < 1:
        return np.full(frame_times.size, np.nan)
    centers = 0.5 * (times[:-1] + times[1:])[good]
    freqs = 1.0 / periods[good]
    track = np.interp(frame_times, centers, freqs)
    track[(frame_times < centers[0]) | (frame_times > centers[-1])] = np.nan
    return track


def _band_candidate(x: np.ndarray, rate: int, cutoff: float, frame_times: np.ndarray):
    """Candidate frequency and relative deviation for one low-passed band."""
    nyq = rate / 2
    b, a = butter(4, min(cutoff / nyq, 0.99))
    filtered = filtfilt(b, a, x)
    if np.max(np.abs(filtered)) < AMPLITUDE_FLOOR:
        nan = np.full(frame_times.size, np.nan)
        return nan, nan
    tracks = np.stack([_interval_track(t, frame_times) for t in _event_times(filtered, rate)])
    missing = np.isnan(tracks).any(axis=0)
    safe = np.where(np.isnan(tracks), 0.0, tracks)
    freq = safe.mean(axis=0)
    spread = safe.std(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        deviation = np.where(freq > 0, spread / freq, np.inf)
    deviation[missing] = np.nan
    freq[missing] = np.nan
    # candidates must be resolvable inside the band
    out_of_band = (freq > cutoff * 1.05) | (freq < F0_FLOOR) | (freq > F0_CEIL)
    freq[out_of_band] = np.nan
    deviation[out_of_band] = np.nan
    return freq, deviation


def estimate_f0(clip: AudioClip, threads: int = 1) -> F0Contour:
    """Per-frame fundamental frequency (0 where unvoiced) plus voicing flags."""
    if clip.rate != TARGET_RATE:
        raise InvalidRate(f"F0 analysis expects {TARGET_RATE} Hz, got {clip.rate}")
    n = clip.samples.size
    if n < WIN:
        raise ClipTooShort(f"need at least {WIN} samples, got {n}")
    n_frames = frame_count(n)
    frame_times = (np.arange(n_frames) * HOP + WIN / 2) / clip.rate

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(lambda c: _band_candidate(clip.samples, clip.rate, c, frame_times), CUTOFFS)
            )
    else:
        results = [_band_candidate(clip.samples, clip.rate, c, frame_times) for c in CUTOFFS]

    freqs = np.stack([r[0] for r in results])
    devs = np.stack([r[1] for r in results])
    devs_for_pick = np.where(np.isnan(devs), np.inf, devs)
    best = np.argmin(devs_for_pick, axis=0)
    rows = np.arange(n_frames)
    best_freq = freqs[best, rows]
    best_dev = devs_for_pick[best, rows]
    voiced = np.isfinite(best_freq) & (best_dev < VOICING_THRESHOLD)
    hz = np.where(voiced, np.where(np.isfinite(best_freq), best_freq, 0.0), 0.0)
    return F0Contour(hz, voiced)
