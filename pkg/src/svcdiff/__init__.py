"""CPU-first singing-voice-conversion engine built on continuous-time diffusion."""

from .schedule import NoiseSchedule, TAU_MAX, TAU_MIN, coeffs, log_snr, make_schedule, transition_var
from .sampler import (
    DataSample,
    LatentState,
    SamplerConfig,
    ancestral_step,
    ddim_step,
    forward_marginal,
    forward_transition,
    posterior_mean_var,
    sample,
    time_grid,
)
from .denoiser import (
    DenoiserParams,
    LossConfig,
    as_denoise_fn,
    grad,
    init_denoiser,
    load_checkpoint,
    loss,
    predict_x,
    save_checkpoint,
    train,
)
from .distill import (
    DistillConfig,
    ModuleContribution,
    SlimEvalSet,
    distill_stage,
    distill_target,
    energy_distance,
    module_contribution,
    progressive_distill,
    slim_network,
)
from .bench import BenchReport, bench_cell, mel_cepstral_distance, run_pipeline, step_sweep

__all__ = [
    "BenchReport",
    "DataSample",
    "DenoiserParams",
    "DistillConfig",
    "LatentState",
    "LossConfig",
    "ModuleContribution",
    "NoiseSchedule",
    "SamplerConfig",
    "SlimEvalSet",
    "TAU_MAX",
    "TAU_MIN",
    "ancestral_step",
    "as_denoise_fn",
    "bench_cell",
    "coeffs",
    "ddim_step",
    "distill_stage",
    "distill_target",
    "energy_distance",
    "forward_marginal",
    "forward_transition",
    "grad",
    "init_denoiser",
    "load_checkpoint",
    "log_snr",
    "loss",
    "make_schedule",
    "mel_cepstral_distance",
    "module_contribution",
    "posterior_mean_var",
    "predict_x",
    "progressive_distill",
    "run_pipeline",
    "sample",
    "save_checkpoint",
    "slim_network",
    "step_sweep",
    "time_grid",
    "train",
    "transition_var",
]

__version__ = "0.1.0"
