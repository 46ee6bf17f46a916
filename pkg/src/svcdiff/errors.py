"""Exception types shared across the package."""


class SvcdiffError(Exception):
    """Base class for all svcdiff errors."""


# --- schedule ---

class InvalidScheduleParams(SvcdiffError):
    """Schedule parameters are non-finite or violate monotonicity."""


class OutOfRangeTime(SvcdiffError):
    """Diffusion time outside [0, 1]."""


class DivergentSnr(SvcdiffError):
    """log-SNR requested at a point where the noise coefficient is exactly zero."""


class TimeOrderViolation(SvcdiffError):
    """A pair of diffusion times was passed in the wrong order."""


# --- sampler / denoiser ---

class ShapeMismatch(SvcdiffError):
    """Tensor shapes are inconsistent."""


class InvalidArch(SvcdiffError):
    """Denoiser architecture is invalid."""


class EmptyBatch(SvcdiffError):
    """A training batch contained no items."""


class NonFiniteLoss(SvcdiffError):
    """Training aborted because the loss became NaN or infinite."""


# --- distill / slimming ---

class DegenerateStep(SvcdiffError):
    """Distillation target denominator vanished (coincident noise levels)."""


class NonRemovableModule(SvcdiffError):
    """Requested module cannot be removed while keeping the network shape-valid."""


class UnstableLatency(SvcdiffError):
    """Latency measurement noise exceeds half the measured delta."""


class TargetUnreachable(SvcdiffError):
    """No sequence of module removals can reach the latency target."""


# --- features ---

class InvalidRate(SvcdiffError):
    """Sample rate is not positive."""


class EmptyClip(SvcdiffError):
    """Operation requires a non-empty audio clip."""


class ClipTooShort(SvcdiffError):
    """Clip shorter than one analysis window."""


class FrameCountMismatch(SvcdiffError):
    """Paired per-frame features disagree on frame count."""


class InvalidOverlap(SvcdiffError):
    """Overlap fraction outside [0, 1)."""


# --- cli / config ---

class ConfigError(SvcdiffError):
    """Run configuration failed to parse or validate."""
