import numpy as np
import pytest

from svcdiff.errors import ClipTooShort, InvalidRate
from svcdiff.features import AudioClip, estimate_f0

from util import RATE, VOWEL_A, formant_tone, sine_clip


class TestEstimateF0:
    def test_220hz_sine(self):
        clip = AudioClip(sine_clip(220, 1.0, RATE), RATE)
        c = estimate_f0(clip)
        assert c.voiced.mean() >= 0.95
        med = np.median(c.hz[c.voiced])
        assert 215.0 <= med <= 225.0

    def test_silence_all_unvoiced(self):
        c = estimate_f0(AudioClip(np.zeros(RATE // 2), RATE))
        assert not c.voiced.any()
        assert np.all(c.hz == 0.0)

    def test_unvoiced_implies_zero_hz(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([np.zeros(RATE // 4), sine_clip(300, 0.5, RATE), np.zeros(RATE // 4)])
        c = estimate_f0(AudioClip(x, RATE))
        assert np.all(c.hz[~c.voiced] == 0.0)
        assert c.voiced.any()

    def test_chirp_tracking(self):
        duration = 2.0
        n = int(RATE * duration)
        tt = np.arange(n) / RATE
        inst = 110.0 + (440.0 - 110.0) * tt / duration
        phase = 2 * np.pi * np.cumsum(inst) / RATE
        clip = AudioClip(0.9 * np.sin(phase), RATE)
        c = estimate_f0(clip)
        times = (np.arange(c.hz.size) * 128 + 256) / RATE
        interior = (times > 0.1 * duration) & (times < 0.9 * duration)
        truth = 110.0 + (440.0 - 110.0) * times / duration
        assert c.voiced[interior].all()
        rel = np.abs(c.hz[interior] - truth[interior]) / truth[interior]
        assert np.max(rel) < 0.05

    def test_harmonic_rich_vibrato_tone(self):
        clip = AudioClip(formant_tone(260, VOWEL_A, 1.0, seed=2), RATE)
        c = estimate_f0(clip)
        times = (np.arange(c.hz.size) * 128 + 256) / RATE
        interior = (times > 0.1) & (times < 0.9)
        voiced_int = c.voiced[interior]
        assert voiced_int.mean() > 0.9
        hz_int = c.hz[interior][voiced_int]
        assert abs(np.median(hz_int) - 260.0) / 260.0 < 0.05

    def test_frame_count_matches_mel(self):
        from svcdiff.features import frame_count

        for n in (512, 1000, 39999):
            c = estimate_f0(AudioClip(np.zeros(n) if n == 512 else sine_clip(200, n / RATE, RATE), RATE))
            assert c.hz.size == frame_count(n)

    def test_too_short(self):
        with pytest.raises(ClipTooShort):
            estimate_f0(AudioClip(np.zeros(100), RATE))

    def test_wrong_rate(self):
        with pytest.raises(InvalidRate):
            estimate_f0(AudioClip(np.zeros(4096), 16000))

    def test_threaded_identical(self):
        clip = AudioClip(formant_tone(220, VOWEL_A, 1.0, seed=1), RATE)
        a = estimate_f0(clip, threads=1)
        b = estimate_f0(clip, threads=2)
        assert np.array_equal(a.hz, b.hz)
        assert np.array_equal(a.voiced, b.voiced)
