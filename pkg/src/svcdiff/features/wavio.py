"""Minimal RIFF/WAVE reader and writer.

Supports 16-bit PCM and 32-bit IEEE float, mono or stereo (stereo is
downmixed to mono on read). Samples are float64 in [-1, 1].
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import EmptyClip
from .audio import AudioClip

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def read_wav(path) -> AudioClip:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12:
            raise ValueError(f"{path}: not a RIFF/WAVE file")
        riff, _, wave = struct.unpack("<4sI4s", head)
        if riff != b"RIFF" or wave != b"WAVE":
            raise ValueError(f"{path}: not a RIFF/WAVE file")
        fmt = None
        data = None
        while True:
            head = fh.read(8)
            if len(head) < 8:
                break
            chunk_id, size = struct.unpack("<4sI", head)
            payload = fh.read(size)
            if size % 2:  # chunks are word-aligned
                fh.read(1)
            if chunk_id == b"fmt ":
                fmt = payload
            elif chunk_id == b"data":
                data = payload
        if fmt is None or data is None or len(fmt) < 16:
            raise ValueError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format == _EXTENSIBLE and len(fmt) >= 26:
        audio_format = struct.unpack("<H", fmt[24:26])[0]
    if audio_format == _PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == _FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported format (code {audio_format}, {bits}-bit)")
    if channels > 1:
        samples = samples[: len(samples) - len(samples) % channels]
        samples = samples.reshape(-1, channels).mean(axis=1)
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, fmt: str = "pcm16"):
    if clip.samples.size == 0:
        raise EmptyClip("refusing to write an empty WAV file")
    if fmt == "pcm16":
        code, bits = _PCM, 16
        scaled = np.clip(np.round(clip.samples * 32768.0), -32768, 32767)
        payload = scaled.astype("<i2").tobytes()
    elif fmt == "float32":
        code, bits = _FLOAT, 32
        payload = clip.samples.astype("<f4").tobytes()
    else:
        raise ValueError(f"unsupported WAV format {fmt!r}")
    block_align = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        code,
        1,
        clip.rate,
        clip.rate * block_align,
        block_align,
        bits,
        b"data",
        len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
