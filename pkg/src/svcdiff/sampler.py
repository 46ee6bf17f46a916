"""Forward diffusion and reverse-time samplers.

The forward process draws increasingly noisy latents from a
:class:`~svcdiff.schedule.NoiseSchedule`; the reverse process walks a
decreasing time grid using either the stochastic ancestral update (with a
``kappa`` exponent interpolating between the posterior and forward-transition
noise scales) or the deterministic DDIM update.

Denoisers are plain callables ``denoise(values, tau) -> x_hat`` predicting the
clean data from a noisy latent. All stochastic inputs are tensors drawn by the
caller (or by :func:`sample` from its seeded counter-based generator), so every
run is replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeMismatch, TimeOrderViolation
from .schedule import TAU_MAX, TAU_MIN, NoiseSchedule, _log_snr_extended, coeffs, transition_var

DenoiseFn = Callable[[np.ndarray, float], np.ndarray]

MODES = ("ancestral", "ddim")
TIME_GRIDS = ("uniform", "quadratic")


@dataclass(frozen=True)
class LatentState:
    """A noisy data tensor tagged with its diffusion time."""

    values: np.ndarray
    tau: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("latent state contains non-finite entries")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"latent time {self.tau} outside [0, 1]")


@dataclass(frozen=True)
class DataSample:
    """A clean (or predicted-clean) data tensor."""

    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("data sample contains non-finite entries")


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "ddim"
    steps: int = 32
    kappa: float = 0.0
    seed: int = 0
    time_grid: str = "uniform"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.time_grid not in TIME_GRIDS:
            raise ValueError(f"time_grid must be one of {TIME_GRIDS}")


def time_grid(kind: str, steps: int, tau_min: float = TAU_MIN, tau_max: float = TAU_MAX) -> np.ndarray:
    """Decreasing grid of ``steps + 1`` times from ``tau_max`` to ``tau_min``."""
    if kind == "uniform":
        return np.linspace(tau_max, tau_min, steps + 1)
    if kind == "quadratic":
        u = np.linspace(0.0, 1.0, steps + 1)
        return tau_min + (tau_max - tau_min) * (1.0 - u) ** 2
    raise ValueError(f"unknown time grid {kind!r}")


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"{what}: {np.shape(a)} vs {np.shape(b)}")


def forward_marginal(s: NoiseSchedule, x: DataSample, tau: float, noise: np.ndarray) -> LatentState:
    """Draw ``y_tau = beta*x + gamma*noise`` from the clean-data marginal."""
    _check_shapes(x.values, noise, "noise shape must match data shape")
    beta, gamma = coeffs(s, tau)
    return LatentState(beta * x.values + gamma * noise, float(tau))


def forward_transition(s: NoiseSchedule, y_rho: LatentState, tau: float, noise: np.ndarray) -> LatentState:
    """Advance a latent from its time to a later ``tau`` along the forward chain."""
    if y_rho.tau > tau:
        raise TimeOrderViolation(f"cannot run the forward chain backwards: {y_rho.tau} > {tau}")
    if y_rho.tau == tau:
        return y_rho
    _check_shapes(y_rho.values, noise, "noise shape must match latent shape")
    beta_rho, _ = coeffs(s, y_rho.tau)
    beta_tau, _ = coeffs(s, tau)
    std = math.sqrt(transition_var(s, y_rho.tau, tau))
    return LatentState((beta_tau / beta_rho) * y_rho.values + std * noise, float(tau))


def _posterior_coeffs(s: NoiseSchedule, rho: float, tau: float):
    """Coefficients (on y, on x_hat) and variance of the reverse posterior.

    The coefficient on y is written as ``beta_tau * gamma_rho**2 /
    (gamma_tau**2 * beta_rho)``, algebraically equal to
    ``exp(dtheta) * beta_rho / beta_tau`` but stable at both time endpoints.
    """
    beta_rho, gamma_rho = coeffs(s, rho)
    beta_tau, gamma_tau = coeffs(s, tau)
    dtheta = float(_log_snr_extended(s, np.float64(tau)) - _log_snr_extended(s, np.float64(rho)))
    one_minus = -math.expm1(dtheta)  # 1 - exp(theta_tau - theta_rho)
    c_y = beta_tau * gamma_rho**2 / (gamma_tau**2 * beta_rho)
    c_x = one_minus * beta_rho
    var = one_minus * gamma_rho**2
    return c_y, c_x, var


def posterior_mean_var(s: NoiseSchedule, y_tau: LatentState, x_hat: DataSample, rho: float):
    """Mean and scalar variance of the reverse Gaussian posterior at ``rho``."""
    if rho > y_tau.tau:
        raise TimeOrderViolation(f"posterior time must not exceed latent time: {rho} > {y_tau.tau}")
    if rho == y_tau.tau:
        return y_tau.values.copy(), 0.0
    _check_shapes(y_tau.values, x_hat.values, "prediction shape must match latent shape")
    c_y, c_x, var = _posterior_coeffs(s, rho, y_tau.tau)
    return c_y * y_tau.values + c_x * x_hat.values, var


def _ancestral_update(s, y_values, tau, rho, x_hat, kappa, noise):
    c_y, c_x, post_var = _posterior_coeffs(s, rho, tau)
    fwd_var = transition_var(s, rho, tau)
    scale = math.sqrt(post_var ** (1.0 - kappa) * fwd_var**kappa)
    return c_y * y_values + c_x * x_hat + scale * noise


def _ddim_update(s, y_values, tau, rho, x_hat):
    beta_rho, gamma_rho = coeffs(s, rho)
    beta_tau, gamma_tau = coeffs(s, tau)
    return beta_rho * x_hat + gamma_rho * (y_values - beta_tau * x_hat) / gamma_tau


def ancestral_step(
    s: NoiseSchedule,
    denoise: DenoiseFn,
    y_tau: LatentState,
    rho: float,
    kappa: float,
    noise: np.ndarray,
) -> LatentState:
    """One stochastic reverse step to the earlier time ``rho``.

    The injected noise scale is ``sqrt(post_var**(1-kappa) * fwd_var**kappa)``:
    at ``kappa = 0`` it equals the posterior standard deviation, at
    ``kappa = 1`` the forward-transition standard deviation.
    """
    if rho >= y_tau.tau:
        raise TimeOrderViolation(f"reverse step must go to an earlier time: {rho} >= {y_tau.tau}")
    _check_shapes(y_tau.values, noise, "noise shape must match latent shape")
    x_hat = np.asarray(denoise(y_tau.values, y_tau.tau))
    _check_shapes(y_tau.values, x_hat, "prediction shape must match latent shape")
    return LatentState(_ancestral_update(s, y_tau.values, y_tau.tau, rho, x_hat, kappa, noise), float(rho))


def ddim_step(s: NoiseSchedule, denoise: DenoiseFn, y_tau: LatentState, rho: float) -> LatentState:
    """One deterministic reverse step to the earlier time ``rho`` (no noise draw)."""
    if rho >= y_tau.tau:
        raise TimeOrderViolation(f"reverse step must go to an earlier time: {rho} >= {y_tau.tau}")
    x_hat = np.asarray(denoise(y_tau.values, y_tau.tau))
    _check_shapes(y_tau.values, x_hat, "prediction shape must match latent shape")
    return LatentState(_ddim_update(s, y_tau.values, y_tau.tau, rho, x_hat), float(rho))


def sample(
    s: NoiseSchedule,
    denoise: DenoiseFn,
    cfg: SamplerConfig,
    shape,
    cond=None,
) -> DataSample:
    """Run the full reverse chain from pure noise and return the final clean prediction.

    Starts at a standard-normal latent at the clamped top of the time range,
    walks ``cfg.steps`` steps down the grid, and returns the x-prediction made
    during the last step. Noise comes from a counter-based generator seeded
    with ``cfg.seed``, so DDIM runs are bit-identical across repeats. When
    ``cond`` is given, ``denoise`` is called as ``denoise(values, tau, cond)``.
    """
    fn = denoise if cond is None else (lambda v, t: denoise(v, t, cond))
    grid = time_grid(cfg.time_grid, cfg.steps)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    values = rng.standard_normal(shape)
    x_hat = None
    for k in range(cfg.steps):
        tau, rho = float(grid[k]), float(grid[k + 1])
        x_hat = np.asarray(fn(values, tau))
        _check_shapes(values, x_hat, "prediction shape must match latent shape")
        if cfg.mode == "ddim":
            values = _ddim_update(s, values, tau, rho, x_hat)
        else:
            noise = rng.standard_normal(shape)
            values = _ancestral_update(s, values, tau, rho, x_hat, cfg.kappa, noise)
    return DataSample(np.asarray(x_hat))
