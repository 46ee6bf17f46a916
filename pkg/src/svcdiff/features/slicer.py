"""Silence-based slicing and overlap augmentation.

RMS is measured over non-overlapping 20 ms windows; runs of windows below the
silence threshold lasting at least ``min_silence`` mark cut regions. Loud
regions shorter than ``min_segment`` are discarded; regions at or over
``max_segment`` are recursively force-split at the quietest window inside
their central half, so every emitted segment is strictly shorter than the cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidOverlap
from .audio import AudioClip

RMS_WINDOW_SEC = 0.02


@dataclass(frozen=True)
class SlicerConfig:
    silence_db: float = -40.0
    min_silence: float = 0.5
    max_segment: float = 30.0
    min_segment: float = 1.0

    def __post_init__(self):
        if self.max_segment > 30.0:
            raise ValueError("max_segment cannot exceed 30 seconds")
        if self.max_segment <= 0 or self.min_silence <= 0 or self.min_segment < 0:
            raise ValueError("durations must be positive")


def _window_rms_db(x: np.ndarray, win: int) -> np.ndarray:
    n_win = x.size // win
    if n_win == 0:
        return np.empty(0)
    chunks = x[: n_win * win].reshape(n_win, win)
    rms = np.sqrt(np.mean(chunks**2, axis=1))
    return 20.0 * np.log10(np.maximum(rms, 1e-10))


def _loud_spans(clip: AudioClip, cfg: SlicerConfig, win: int):
    """Sample spans of non-silent regions (silent gaps shorter than
    min_silence stay inside their surrounding region)."""
    n = clip.samples.size
    db = _window_rms_db(clip.samples, win)
    if db.size == 0:
        return []
    silent = db < cfg.silence_db
    min_run = max(1, int(round(cfg.min_silence * clip.rate / win)))
    cuts = []
    run_start = None
    for i, s in enumerate(np.append(silent, False)):
        if s and run_start is None:
            run_start = i
        elif not s and run_start is not None:
            if i - run_start >= min_run:
                cuts.append((run_start * win, i * win))
            run_start = None
    spans = []
    pos = 0
    for lo, hi in cuts:
        if lo > pos:
            spans.append((pos, lo))
        pos = hi
    if pos < n:
        spans.append((pos, n))
    # drop spans that are entirely silent (leading/trailing splits keep them out,
    # but a clip of pure silence yields a single all-silent span)
    out = []
    for lo, hi in spans:
        seg_db = _window_rms_db(clip.samples[lo:hi], win)
        if seg_db.size == 0 or np.all(seg_db < cfg.silence_db):
            continue
        out.append((lo, hi))
    return out


def _force_split(samples: np.ndarray, lo: int, hi: int, max_len: int, win: int):
    if hi - lo < max_len:
        return [(lo, hi)]
    length = hi - lo
    zone_lo = lo + length // 4
    zone_hi = hi - length // 4
    db = _window_rms_db(samples[zone_lo:zone_hi], win)
    if db.size == 0:
        mid = lo + length // 2
    else:
        quietest = np.flatnonzero(db == db.min())
        center = (db.size - 1) / 2.0
        pick = quietest[np.argmin(np.abs(quietest - center))]
        mid = zone_lo + int(pick) * win + win // 2
    return _force_split(samples, lo, mid, max_len, win) + _force_split(samples, mid, hi, max_len, win)


def slice_spans(clip: AudioClip, cfg: SlicerConfig):
    """Sample spans (start, end) of the emitted segments."""
    win = max(1, int(round(RMS_WINDOW_SEC * clip.rate)))
    max_len = int(round(cfg.max_segment * clip.rate))
    min_len = int(round(cfg.min_segment * clip.rate))
    spans = []
    for lo, hi in _loud_spans(clip, cfg, win):
        for piece in _force_split(clip.samples, lo, hi, max_len, win):
            if piece[1] - piece[0] >= min_len:
                spans.append(piece)
    return spans


def slice_audio(clip: AudioClip, cfg: SlicerConfig):
    """Split a clip at long silences; every output is shorter than the cap."""
    return [AudioClip(clip.samples[lo:hi].copy(), clip.rate) for lo, hi in slice_spans(clip, cfg)]


def augment_spans(n_samples: int, rate: int, sizes, overlap: float):
    """Window spans for re-tiling ``n_samples`` at each size with
    hop = size * (1 - overlap); the trailing remainder past the last full
    window is kept when it is at least half a window long."""
    if not 0.0 <= overlap < 1.0:
        raise InvalidOverlap(f"overlap must lie in [0, 1), got {overlap}")
    if any(s <= 0 for s in sizes):
        raise ValueError("window sizes must be positive")
    spans = []
    for size in sizes:
        win = max(1, int(round(size * rate)))
        hop = max(1, int(round(win * (1.0 - overlap))))
        cover_end = 0
        off = 0
        while off + win <= n_samples:
            spans.append((off, off + win))
            cover_end = off + win
            off += hop
        if n_samples - cover_end >= win / 2:
            spans.append((cover_end, n_samples))
    return spans


def augment(clips, sizes, overlap: float):
    """Re-window clips at each size with hop = size * (1 - overlap)."""
    out = []
    for clip in clips:
        for lo, hi in augment_spans(clip.samples.size, clip.rate, sizes, overlap):
            out.append(AudioClip(clip.samples[lo:hi].copy(), clip.rate))
    return out
