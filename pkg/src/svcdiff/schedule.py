"""Variance-preserving noise schedules over continuous time.

A schedule maps a diffusion time ``tau`` in [0, 1] to the signal/noise
coefficient pair ``(beta, gamma)`` of the forward marginal

    y_tau = beta(tau) * x + gamma(tau) * noise,

with ``beta**2 + gamma**2 == 1`` (variance preserving) and a log-SNR

    theta(tau) = log(beta**2 / gamma**2)

that decreases strictly in ``tau``. All schedule arithmetic is done in
64-bit floats; the inter-time transition variance involves a delicate
cancellation near coincident times and uses ``expm1``.

Convention: ``tau = 0`` is clean data, ``tau = 1`` is pure noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergentSnr, InvalidScheduleParams, OutOfRangeTime, TimeOrderViolation

#: Samplers clamp their working time range to [TAU_MIN, TAU_MAX]; the
#: reverse updates divide by gamma and beta, which vanish at the endpoints.
TAU_MIN = 1e-5
TAU_MAX = 1.0 - 1e-5

KINDS = ("vp-cosine", "vp-linear-logsnr")


@dataclass(frozen=True)
class NoiseSchedule:
    """A named schedule kind plus its scalar parameters."""

    kind: str
    params: tuple = field(default_factory=tuple)


def make_schedule(kind: str, params=()) -> NoiseSchedule:
    """Build and validate a schedule.

    ``vp-cosine`` takes no parameters: beta = cos(pi*tau/2), gamma = sin(pi*tau/2).
    ``vp-linear-logsnr`` takes ``(theta_min, theta_max)`` and runs the log-SNR
    linearly from ``theta_max`` at tau=0 down to ``theta_min`` at tau=1.
    """
    params = tuple(float(p) for p in params)
    if kind == "vp-cosine":
        if params:
            raise InvalidScheduleParams("vp-cosine takes no parameters")
        return NoiseSchedule(kind, ())
    if kind == "vp-linear-logsnr":
        if len(params) != 2:
            raise InvalidScheduleParams("vp-linear-logsnr needs (theta_min, theta_max)")
        theta_min, theta_max = params
        if not (math.isfinite(theta_min) and math.isfinite(theta_max)):
            raise InvalidScheduleParams("log-SNR endpoints must be finite")
        if theta_max <= theta_min:
            raise InvalidScheduleParams(
                f"log-SNR must decrease over time: need theta_max > theta_min, "
                f"got {theta_max} <= {theta_min}"
            )
        return NoiseSchedule(kind, params)
    raise InvalidScheduleParams(f"unknown schedule kind {kind!r}")


def _check_tau(tau):
    t = np.asarray(tau, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise OutOfRangeTime(f"tau must lie in [0, 1], got {tau}")
    return t


def coeffs(s: NoiseSchedule, tau):
    """Signal and noise coefficients ``(beta, gamma)`` at ``tau``.

    Accepts scalars or arrays; results satisfy beta**2 + gamma**2 == 1.
    """
    t = _check_tau(tau)
    if s.kind == "vp-cosine":
        beta = np.cos(0.5 * np.pi * t)
        gamma = np.sin(0.5 * np.pi * t)
    else:
        theta = _logsnr_linear(s, t)
        # beta^2 = sigmoid(theta), gamma^2 = sigmoid(-theta)
        beta = np.sqrt(_sigmoid(theta))
        gamma = np.sqrt(_sigmoid(-theta))
    if np.isscalar(tau) or np.ndim(tau) == 0:
        return float(beta), float(gamma)
    return beta, gamma


def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(np.asarray(x) >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def _logsnr_linear(s: NoiseSchedule, t):
    theta_min, theta_max = s.params
    return theta_max + (theta_min - theta_max) * t


def log_snr(s: NoiseSchedule, tau):
    """log-SNR ``theta = 2*(log beta - log gamma)`` at ``tau``.

    Raises :class:`DivergentSnr` where ``gamma`` is exactly zero (tau=0 for
    vp-cosine); returns ``-inf`` at the pure-noise end where ``beta`` is zero.
    """
    t = _check_tau(tau)
    theta = _log_snr_extended(s, t)
    if np.any(np.isposinf(theta)):
        raise DivergentSnr("log-SNR diverges where the noise coefficient is zero")
    if np.isscalar(tau) or np.ndim(tau) == 0:
        return float(theta)
    return theta


def _log_snr_extended(s: NoiseSchedule, t):
    """log-SNR with +/-inf endpoints instead of errors (internal)."""
    if s.kind == "vp-cosine":
        half = 0.5 * np.pi * t
        with np.errstate(divide="ignore"):
            theta = 2.0 * (np.log(np.abs(np.cos(half))) - np.log(np.abs(np.sin(half))))
        theta = np.where(t == 0.0, np.inf, theta)
        theta = np.where(t == 1.0, -np.inf, theta)
        return theta
    return _logsnr_linear(s, t)


def transition_var(s: NoiseSchedule, rho, tau) -> float:
    """Variance of the forward transition from time ``rho`` to ``tau >= rho``.

    Closed form: ``(1 - exp(theta_tau - theta_rho)) * gamma_tau**2``. The
    endpoint rho=0 is handled through the ``exp(-inf) = 0`` limit, and the
    cancellation near rho == tau goes through ``expm1``.
    """
    rho = float(_check_tau(rho))
    tau = float(_check_tau(tau))
    if rho > tau:
        raise TimeOrderViolation(f"need rho <= tau, got rho={rho}, tau={tau}")
    if rho == tau:
        return 0.0
    dtheta = float(_log_snr_extended(s, np.float64(tau)) - _log_snr_extended(s, np.float64(rho)))
    _, gamma_tau = coeffs(s, tau)
    return float(-math.expm1(dtheta) * gamma_tau**2)
