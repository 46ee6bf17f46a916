"""Progressive step-halving distillation and latency-aware network slimming.

Distillation trains a student to reproduce two consecutive teacher DDIM steps
in a single step, halving the sampling step count per stage. The target is the
algebraic inversion of the one-step DDIM update: the clean-data prediction
that would land the student exactly on the teacher's two-step endpoint.

Slimming ranks removable hidden blocks by (quality contribution) / (latency
contribution) and removes the cheapest-to-lose block while the network misses
a wall-clock latency target; a network already under target gets its most
valuable block duplicated (in series, right after the original).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .denoiser import (
    AdamState,
    BatchDraws,
    DenoiserParams,
    LossConfig,
    _backward,
    _forward,
    _grads_to_vector,
    _zero_grads,
    adam_step,
    as_denoise_fn,
    loss as denoising_loss,
)
from .errors import (
    DegenerateStep,
    NonFiniteLoss,
    NonRemovableModule,
    TargetUnreachable,
    TimeOrderViolation,
    UnstableLatency,
)
from .sampler import DataSample, LatentState, SamplerConfig, _ddim_update, sample, time_grid
from .schedule import NoiseSchedule, coeffs


@dataclass(frozen=True)
class DistillConfig:
    start_steps: int = 64
    halvings: int = 3
    steps_per_stage: int = 1500
    lr: float = 5e-5
    seed: int = 0
    batch: int = 64
    grid: str = "uniform"

    def __post_init__(self):
        if self.start_steps < 1 or self.start_steps & (self.start_steps - 1):
            raise ValueError(f"start_steps must be a power of two, got {self.start_steps}")
        if self.halvings < 0:
            raise ValueError("halvings must be >= 0")
        if self.start_steps < 2**self.halvings:
            raise ValueError(f"cannot halve {self.start_steps} steps {self.halvings} times")
        if self.steps_per_stage < 0 or self.batch < 1:
            raise ValueError("steps_per_stage must be >= 0 and batch >= 1")


def _as_fn(teacher, cond=None):
    if isinstance(teacher, DenoiserParams):
        return as_denoise_fn(teacher, cond)
    return teacher


def distill_target(teacher, s: NoiseSchedule, y_tau: LatentState, rho_mid: float, rho_end: float, cond=None) -> DataSample:
    """Clean-data target making one student DDIM step match two teacher steps.

    Runs the teacher tau -> rho_mid -> rho_end and solves the affine one-step
    update for the prediction that reproduces the endpoint:
    ``x = (y_end - (gamma_end/gamma_tau) * y_tau) / (beta_end - gamma_end * beta_tau / gamma_tau)``.
    """
    if not rho_end < rho_mid < y_tau.tau:
        raise TimeOrderViolation(
            f"need rho_end < rho_mid < tau, got {rho_end}, {rho_mid}, {y_tau.tau}"
        )
    fn = _as_fn(teacher, cond)
    beta_tau, gamma_tau = coeffs(s, y_tau.tau)
    beta_end, gamma_end = coeffs(s, rho_end)
    denom = beta_end - gamma_end * beta_tau / gamma_tau
    if abs(denom) < 1e-8:
        raise DegenerateStep(
            f"signal/noise ratios at {y_tau.tau} and {rho_end} coincide (denominator {denom})"
        )
    v = y_tau.values
    v_mid = _ddim_update(s, v, y_tau.tau, rho_mid, np.asarray(fn(v, y_tau.tau)))
    v_end = _ddim_update(s, v_mid, rho_mid, rho_end, np.asarray(fn(v_mid, rho_mid)))
    return DataSample((v_end - (gamma_end / gamma_tau) * v) / denom)


def _stack_dataset(p: DenoiserParams, items):
    frames = np.concatenate([np.atleast_2d(x.values) for x, _ in items], axis=0)
    if any(c is not None for _, c in items) and p.cond_dim:
        cond = np.concatenate(
            [
                np.asarray(getattr(c, "vectors", c), dtype=np.float64)
                if c is not None
                else np.zeros((np.atleast_2d(x.values).shape[0], p.cond_dim))
                for x, c in items
            ],
            axis=0,
        )
    else:
        cond = None
    return frames, cond


def distill_stage(
    teacher: DenoiserParams,
    student_init: DenoiserParams,
    dataset,
    s: NoiseSchedule,
    cfg: DistillConfig,
    teacher_steps: int,
    seed: Optional[int] = None,
):
    """Train one student whose step count is half the teacher's.

    Each training step picks one segment of the student grid, noises a batch at
    the segment start, asks the teacher for the two-half-step target, and takes
    an Adam step on the squared error of the student prediction. Returns
    ``(student, per_step_losses)``.
    """
    if teacher_steps % 2 or teacher_steps < 2:
        raise ValueError(f"teacher step count must be even and >= 2, got {teacher_steps}")
    grid = time_grid(cfg.grid, teacher_steps)
    n_segments = teacher_steps // 2
    rng = np.random.Generator(np.random.Philox(cfg.seed if seed is None else seed))
    teacher_fn = as_denoise_fn(teacher)
    vec = student_init.to_vector()
    state = AdamState(np.zeros_like(vec), np.zeros_like(vec))
    opt_cfg = LossConfig(lr=cfg.lr)
    student = student_init
    losses = []
    for step in range(cfg.steps_per_stage):
        k = int(rng.integers(0, n_segments))
        tau, mid, end = float(grid[2 * k]), float(grid[2 * k + 1]), float(grid[2 * k + 2])
        idx = rng.integers(0, len(dataset), size=min(cfg.batch, len(dataset)))
        items = [dataset[int(i)] for i in idx]
        frames, cond = _stack_dataset(student, items)
        noise = rng.standard_normal(frames.shape)
        beta, gamma = coeffs(s, tau)
        noisy = beta * frames + gamma * noise
        if cond is None:
            target = distill_target(teacher_fn, s, LatentState(noisy, tau), mid, end).values
        else:
            target = distill_target(teacher, s, LatentState(noisy, tau), mid, end, cond=cond).values
        pred, cache = _forward(student, noisy, tau, cond, want_cache=True)
        diff = pred - target
        value = float(np.mean(np.sum(diff**2, axis=1)))
        if not math.isfinite(value):
            raise NonFiniteLoss(f"distillation loss became {value} at step {step}")
        losses.append(value)
        grads = _zero_grads(student)
        _backward(student, cache, (2.0 / frames.shape[0]) * diff, grads)
        vec = adam_step(vec, _grads_to_vector(student, grads), state, opt_cfg)
        student = student.from_vector(vec)
    return student, losses


@dataclass
class StageResult:
    stage: int
    steps: int
    params: DenoiserParams
    losses: list
    report: dict


def energy_distance(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    """Squared energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'| between point sets."""
    from scipy.spatial.distance import cdist

    def mean_pairwise(u, v):
        total = 0.0
        for i in range(0, u.shape[0], chunk):
            for j in range(0, v.shape[0], chunk):
                total += float(cdist(u[i : i + chunk], v[j : j + chunk]).sum())
        return total / (u.shape[0] * v.shape[0])

    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    return 2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b)


def progressive_distill(teacher: DenoiserParams, dataset, s: NoiseSchedule, cfg: DistillConfig):
    """Halve the sampling step count ``cfg.halvings`` times.

    Each stage's student becomes the next stage's teacher. Returns a list of
    :class:`StageResult` (one per stage) whose reports carry the stage's step
    counts, loss tail, and (for small unconditioned data) the energy distance
    of student samples to the dataset.
    """
    results = []
    current = teacher
    steps = cfg.start_steps
    unconditioned = all(c is None for _, c in dataset)
    data_matrix = (
        np.concatenate([np.atleast_2d(x.values) for x, _ in dataset], axis=0) if unconditioned else None
    )
    for stage in range(cfg.halvings):
        student, losses = distill_stage(
            current, replace(current), dataset, s, cfg, teacher_steps=steps, seed=cfg.seed + stage
        )
        steps //= 2
        report = {
            "stage": stage,
            "teacher_steps": steps * 2,
            "student_steps": steps,
            "final_loss": losses[-1] if losses else None,
            "loss_tail_mean": float(np.mean(losses[-50:])) if losses else None,
        }
        if unconditioned and data_matrix.shape[1] <= 8:
            cfg_s = SamplerConfig(mode="ddim", steps=steps, seed=cfg.seed + 1000 + stage)
            sampled = sample(s, as_denoise_fn(student), cfg_s, shape=(1024, data_matrix.shape[1]))
            report["energy_distance"] = energy_distance(sampled.values, data_matrix[:1024])
        results.append(StageResult(stage, steps, student, losses, report))
        current = student
    return results


# --- latency-aware slimming ----------------------------------------------------

@dataclass
class ModuleContribution:
    module_id: str
    score_delta: float
    latency_delta: float
    latency_var: float
    ratio: float
    repetitions: int


@dataclass
class SlimEvalSet:
    """Everything needed to score and time a network deterministically."""

    batch: list
    schedule: NoiseSchedule
    loss_cfg: LossConfig
    draws: BatchDraws
    latency_input: np.ndarray
    latency_tau: float = 0.5


def removable_modules(p: DenoiserParams):
    """Hidden blocks that can be deleted while keeping shapes valid."""
    return [f"block{i}" for i, (w, _) in enumerate(p.blocks) if w.shape[0] == w.shape[1]]


def _block_index(p: DenoiserParams, module_id: str) -> int:
    names = [f"block{i}" for i in range(len(p.blocks))]
    if module_id not in names:
        raise NonRemovableModule(f"unknown module {module_id!r}; have {names}")
    idx = names.index(module_id)
    w, _ = p.blocks[idx]
    if w.shape[0] != w.shape[1]:
        raise NonRemovableModule(f"{module_id} is {w.shape[0]}x{w.shape[1]}; identity bypass needs a square block")
    return idx


def remove_module(p: DenoiserParams, module_id: str) -> DenoiserParams:
    idx = _block_index(p, module_id)
    new = replace(p)
    new.blocks = p.blocks[:idx] + p.blocks[idx + 1 :]
    new.arch = tuple(w for i, w in enumerate(p.arch) if i != idx + 1)
    return new


def duplicate_module(p: DenoiserParams, module_id: str) -> DenoiserParams:
    idx = _block_index(p, module_id)
    w, b = p.blocks[idx]
    new = replace(p)
    new.blocks = p.blocks[: idx + 1] + [(w.copy(), b.copy())] + p.blocks[idx + 1 :]
    new.arch = p.arch[: idx + 2] + (p.arch[idx + 1],) + p.arch[idx + 2 :]
    return new


def measure_latency(p: DenoiserParams, values: np.ndarray, tau: float, reps: int = 10):
    """Median single-thread forward wall time over ``reps`` runs (1 warm-up discarded)."""
    from threadpoolctl import threadpool_limits

    frames = np.atleast_2d(values)
    times = np.empty(reps)
    with threadpool_limits(limits=1):
        _forward(p, frames, tau, None)
        for r in range(reps):
            t0 = time.perf_counter()
            _forward(p, frames, tau, None)
            times[r] = time.perf_counter() - t0
    return float(np.median(times)), times


def _paired_latency(p_a: DenoiserParams, p_b: DenoiserParams, values, tau: float, reps: int):
    """Interleaved medians of two nets' forward times, so drift hits both alike."""
    from threadpoolctl import threadpool_limits

    frames = np.atleast_2d(values)
    t_a = np.empty(reps)
    t_b = np.empty(reps)
    with threadpool_limits(limits=1):
        _forward(p_a, frames, tau, None)
        _forward(p_b, frames, tau, None)
        for r in range(reps):
            t0 = time.perf_counter()
            _forward(p_a, frames, tau, None)
            t1 = time.perf_counter()
            _forward(p_b, frames, tau, None)
            t2 = time.perf_counter()
            t_a[r] = t1 - t0
            t_b[r] = t2 - t1
    return float(np.median(t_a)), float(np.median(t_b)), t_a - t_b


def _val_loss(p: DenoiserParams, ev: SlimEvalSet) -> float:
    return denoising_loss(p, ev.batch, ev.schedule, ev.loss_cfg, ev.draws)


def module_contribution(
    net: DenoiserParams,
    module_id: str,
    eval_set: SlimEvalSet,
    latency_reps: int = 10,
    on_unstable: str = "raise",
) -> ModuleContribution:
    """Quality-per-latency contribution of one removable block.

    ``score_delta`` is the validation-loss increase caused by removing the
    block (loss is sign-flipped into a score, so higher delta = more valuable).
    ``latency_delta`` is the mean paired wall-time saving of the removal,
    measured interleaved over ``latency_reps >= 10`` repetitions.
    """
    if latency_reps < 10:
        raise ValueError("latency_reps must be >= 10")
    stripped = remove_module(net, module_id)
    score_delta = _val_loss(stripped, eval_set) - _val_loss(net, eval_set)
    med_with, med_without, diffs = _paired_latency(
        net, stripped, eval_set.latency_input, eval_set.latency_tau, latency_reps
    )
    latency_delta = med_with - med_without
    latency_var = float(np.var(diffs))
    noise = math.sqrt(latency_var / latency_reps)
    if noise > 0.5 * abs(latency_delta) or latency_delta <= 0:
        if on_unstable == "raise":
            raise UnstableLatency(
                f"{module_id}: latency delta {latency_delta:.3e}s +/- {noise:.3e}s is not resolvable"
            )
        latency_delta_eff = max(latency_delta, noise, 1e-9)
    else:
        latency_delta_eff = latency_delta
    ratio = score_delta / latency_delta_eff
    return ModuleContribution(module_id, score_delta, latency_delta, latency_var, ratio, latency_reps)


def slim_network(
    net: DenoiserParams,
    latency_target: float,
    eval_set: SlimEvalSet,
    latency_reps: int = 10,
):
    """Remove lowest-ratio blocks until the latency target is met.

    If the network is already under target, the highest-ratio block is
    duplicated once instead. Returns ``(net, action_log)`` where each log entry
    records module_id, action, score_delta, latency_delta, the before/after
    median latency, and a timestamp.
    """
    if latency_target <= 0:
        raise ValueError("latency_target must be positive")
    log = []

    def contributions(p):
        return [
            module_contribution(p, mid, eval_set, latency_reps, on_unstable="guard")
            for mid in removable_modules(p)
        ]

    latency, _ = measure_latency(net, eval_set.latency_input, eval_set.latency_tau, latency_reps)
    if latency <= latency_target:
        cands = contributions(net)
        if not cands:
            raise TargetUnreachable("no removable modules to duplicate")
        best = max(cands, key=lambda c: c.ratio)
        bigger = duplicate_module(net, best.module_id)
        before, after, _ = _paired_latency(
            net, bigger, eval_set.latency_input, eval_set.latency_tau, latency_reps
        )
        log.append(_action(best, "duplicate", before, after))
        return bigger, log
    while latency > latency_target:
        cands = contributions(net)
        if not cands:
            raise TargetUnreachable(
                f"latency {latency:.3e}s still above target {latency_target:.3e}s with no removable modules left"
            )
        worst = min(cands, key=lambda c: c.ratio)
        stripped = remove_module(net, worst.module_id)
        before, after, _ = _paired_latency(
            net, stripped, eval_set.latency_input, eval_set.latency_tau, latency_reps
        )
        log.append(_action(worst, "remove", before, after))
        net = stripped
        latency = after
    return net, log


def _action(contrib: ModuleContribution, action: str, before: float, after: float) -> dict:
    return {
        "module_id": contrib.module_id,
        "action": action,
        "score_delta": contrib.score_delta,
        "latency_delta": contrib.latency_delta,
        "latency_before": before,
        "latency_after": after,
        "timestamp": time.time(),
    }
