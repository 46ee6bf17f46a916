"""Shared analytic oracles and synthetic fixtures for the test suite."""

import math

import numpy as np
from scipy.signal import lfilter

from svcdiff.schedule import coeffs

RATE = 40000

VOWEL_A = ((800.0, 80.0), (1200.0, 90.0))
VOWEL_I = ((300.0, 60.0), (2300.0, 100.0))
VOWEL_SCHWA = ((500.0, 100.0), (1500.0, 120.0))


def gaussian_posterior_mean_denoiser(s, mu, sigma):
    """Bayes-optimal clean-data predictor for a 1D Gaussian data distribution.

    For x ~ N(mu, sigma^2) and y = beta*x + gamma*eps the conditional mean is
    E[x|y] = mu + beta*sigma^2/(beta^2 sigma^2 + gamma^2) * (y - beta*mu).
    """

    def denoise(values, tau):
        b, g = coeffs(s, tau)
        m = b * b * sigma * sigma + g * g
        return mu + (b * sigma * sigma / m) * (values - b * mu)

    return denoise


def constant_denoiser(x0):
    """Point-mass predictor: always returns x0 (broadcast to the latent shape)."""

    def denoise(values, tau):
        return np.broadcast_to(np.asarray(x0, dtype=np.float64), np.shape(values)).copy()

    return denoise


def sine_clip(freq, duration, rate, amplitude=0.9):
    t = np.arange(int(round(duration * rate))) / rate
    return (amplitude * np.sin(2 * math.pi * freq * t)).astype(np.float64)


def formant_tone(
    f0,
    formants,
    duration,
    rate=RATE,
    vib_rate=5.5,
    vib_depth=0.03,
    seed=0,
    noise=5e-3,
):
    """Synthetic sung vowel: harmonic source with vibrato through resonators."""
    n = int(round(duration * rate))
    tt = np.arange(n) / rate
    inst = f0 * (1.0 + vib_depth * np.sin(2 * math.pi * vib_rate * tt))
    phase = 2 * math.pi * np.cumsum(inst) / rate
    src = np.zeros(n)
    h = 1
    while h * f0 < 8000.0:
        src += np.sin(h * phase) / h
        h += 1
    y = src
    for fc, bw in formants:
        r = math.exp(-math.pi * bw / rate)
        y = lfilter([1.0 - r], [1.0, -2.0 * r * math.cos(2 * math.pi * fc / rate), r * r], y)
    y = 0.8 * y / np.max(np.abs(y))
    return y + noise * np.random.default_rng(seed).standard_normal(n)
