"""Small conditional x-prediction network, its loss, gradients, and training.

The network is a per-frame multilayer perceptron: each data frame is
concatenated with a sinusoidal embedding of the diffusion time, projected to a
hidden trunk, fused additively with a linear projection of the per-frame
conditioning vector, passed through hidden blocks (residual whenever the block
is square, so identity pass-through is exactly expressible), and mapped
linearly back to the data dimension. An optional single-head cross-attention
block lets frames attend over the conditioning sequence.

Parameters live in 64-bit floats in memory so the analytic gradients survive
central-difference checking; checkpoints store 32-bit weights.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import EmptyBatch, InvalidArch, NonFiniteLoss, ShapeMismatch
from .sampler import DataSample, LatentState
from .schedule import TAU_MAX, TAU_MIN, NoiseSchedule, coeffs, log_snr

CHECKPOINT_MAGIC = b"SVCDNZ01"

WEIGHT_FNS = ("unit", "snr")


@dataclass(frozen=True)
class LossConfig:
    weight_fn: str = "unit"
    batch: int = 16
    lr: float = 1e-4
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.weight_fn not in WEIGHT_FNS:
            raise ValueError(f"weight_fn must be one of {WEIGHT_FNS}")
        if self.batch < 1:
            raise ValueError("batch must be positive")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.optimizer != "adam":
            raise ValueError("only the adam optimizer is supported")


@dataclass
class DenoiserParams:
    """Weights of the conditional denoiser plus data-normalization metadata."""

    data_dim: int
    time_embed: int
    cond_dim: int
    arch: tuple
    use_attention: bool
    w_in: np.ndarray
    b_in: np.ndarray
    cond_proj: np.ndarray
    wq: Optional[np.ndarray]
    wk: Optional[np.ndarray]
    wv: Optional[np.ndarray]
    blocks: list  # [(W, b), ...] hidden blocks; residual where square
    w_out: np.ndarray
    b_out: np.ndarray
    # normalization applied by the conversion pipeline (not by predict_x)
    shift: np.ndarray = field(default=None)
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.shift is None:
            self.shift = np.zeros(self.data_dim)
        if self.scale is None:
            self.scale = np.ones(self.data_dim)

    def _arrays(self):
        out = [self.w_in, self.b_in, self.cond_proj]
        if self.use_attention:
            out += [self.wq, self.wk, self.wv]
        for w, b in self.blocks:
            out += [w, b]
        out += [self.w_out, self.b_out]
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._arrays()])

    def from_vector(self, vec: np.ndarray) -> "DenoiserParams":
        arrays = []
        pos = 0
        for a in self._arrays():
            arrays.append(vec[pos : pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != vec.size:
            raise ShapeMismatch(f"vector length {vec.size} != parameter count {pos}")
        new = replace(self)
        new.w_in, new.b_in, new.cond_proj = arrays[0], arrays[1], arrays[2]
        i = 3
        if self.use_attention:
            new.wq, new.wk, new.wv = arrays[3], arrays[4], arrays[5]
            i = 6
        new.blocks = [(arrays[i + 2 * k], arrays[i + 2 * k + 1]) for k in range(len(self.blocks))]
        i += 2 * len(self.blocks)
        new.w_out, new.b_out = arrays[i], arrays[i + 1]
        return new

    def param_count(self) -> int:
        return int(sum(a.size for a in self._arrays()))


def init_denoiser(
    arch,
    cond_dim: int = 256,
    seed: int = 0,
    data_dim: int = 80,
    time_embed: int = 32,
    use_attention: bool = False,
) -> DenoiserParams:
    """Deterministically initialize a denoiser with fan-in-scaled uniform weights."""
    arch = tuple(int(w) for w in arch)
    if not arch:
        raise InvalidArch("architecture needs at least one hidden width")
    if any(w < 1 for w in arch):
        raise InvalidArch(f"hidden widths must be >= 1, got {arch}")
    if data_dim < 1 or cond_dim < 0 or time_embed < 2 or time_embed % 2:
        raise InvalidArch("need data_dim >= 1, cond_dim >= 0, even time_embed >= 2")
    rng = np.random.Generator(np.random.Philox(seed))

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        return rng.uniform(-bound, bound, size=shape)

    w0 = arch[0]
    w_in = uniform(data_dim + time_embed, (data_dim + time_embed, w0))
    b_in = np.zeros(w0)
    cond_proj = uniform(cond_dim, (cond_dim, w0)) if cond_dim else np.zeros((0, w0))
    wq = wk = wv = None
    if use_attention:
        wq = uniform(w0, (w0, w0))
        wk = uniform(cond_dim, (cond_dim, w0)) if cond_dim else np.zeros((0, w0))
        wv = uniform(cond_dim, (cond_dim, w0)) if cond_dim else np.zeros((0, w0))
    blocks = []
    for prev, width in zip(arch, arch[1:]):
        blocks.append((uniform(prev, (prev, width)), np.zeros(width)))
    w_out = uniform(arch[-1], (arch[-1], data_dim))
    b_out = np.zeros(data_dim)
    return DenoiserParams(
        data_dim, time_embed, cond_dim, arch, use_attention,
        w_in, b_in, cond_proj, wq, wk, wv, blocks, w_out, b_out,
    )


def time_embedding(taus, width: int) -> np.ndarray:
    """Sinusoidal embedding of diffusion times, one row per entry of ``taus``."""
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = 1000.0 * taus[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _cond_array(cond):
    if cond is None:
        return None
    vec = getattr(cond, "vectors", cond)
    return np.asarray(vec, dtype=np.float64)


def _softmax_rows(s):
    z = s - s.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(p: DenoiserParams, frames, taus, cond, want_cache=False):
    """Core forward pass over stacked frames with per-frame times.

    ``frames``: (N, data_dim); ``taus``: scalar or (N,); ``cond``: (N, cond_dim)
    or None. The attention block only makes sense when all frames belong to one
    utterance (single tau), which is how :func:`predict_x` calls it.
    """
    n = frames.shape[0]
    taus = np.broadcast_to(np.atleast_1d(np.asarray(taus, dtype=np.float64)), (n,))
    emb = time_embedding(taus, p.time_embed)
    x_full = np.concatenate([frames, emb], axis=1)
    z0 = x_full @ p.w_in + p.b_in
    if cond is not None and p.cond_dim:
        z0 = z0 + cond @ p.cond_proj
    h1 = np.tanh(z0)
    h = h1
    attn_cache = None
    if p.use_attention and cond is not None and p.cond_dim:
        scale = 1.0 / math.sqrt(p.arch[0])
        q = h1 @ p.wq
        k = cond @ p.wk
        v = cond @ p.wv
        a = _softmax_rows(q @ k.T * scale)
        h = h1 + a @ v
        attn_cache = (q, k, v, a, scale)
    hs = [h]
    ts = []
    for w, b in p.blocks:
        t = np.tanh(hs[-1] @ w + b)
        ts.append(t)
        hs.append(hs[-1] + t if w.shape[0] == w.shape[1] else t)
    out = hs[-1] @ p.w_out + p.b_out
    if not want_cache:
        return out
    return out, (x_full, h1, attn_cache, hs, ts, cond)


def _backward(p: DenoiserParams, cache, d_out, grads):
    """Accumulate parameter gradients for one stacked forward pass."""
    x_full, h1, attn_cache, hs, ts, cond = cache
    grads["w_out"] += hs[-1].T @ d_out
    grads["b_out"] += d_out.sum(axis=0)
    dh = d_out @ p.w_out.T
    for idx in range(len(p.blocks) - 1, -1, -1):
        w, _ = p.blocks[idx]
        t = ts[idx]
        h_prev = hs[idx]
        dz = dh * (1.0 - t * t)
        grads[f"block{idx}_w"] += h_prev.T @ dz
        grads[f"block{idx}_b"] += dz.sum(axis=0)
        if w.shape[0] == w.shape[1]:
            dh = dh + dz @ w.T
        else:
            dh = dz @ w.T
    dh1 = dh
    if attn_cache is not None:
        q, k, v, a, scale = attn_cache
        d_attn = dh  # h = h1 + a @ v
        dv = a.T @ d_attn
        grads["wv"] += cond.T @ dv
        da = d_attn @ v.T
        ds = a * (da - (da * a).sum(axis=1, keepdims=True))
        dq = ds @ k * scale
        dk = ds.T @ q * scale
        grads["wq"] += h1.T @ dq
        grads["wk"] += cond.T @ dk
        dh1 = dh + dq @ p.wq.T
    dz0 = dh1 * (1.0 - h1 * h1)
    grads["w_in"] += x_full.T @ dz0
    grads["b_in"] += dz0.sum(axis=0)
    if cond is not None and p.cond_dim:
        grads["cond_proj"] += cond.T @ dz0


def _zero_grads(p: DenoiserParams):
    grads = {
        "w_in": np.zeros_like(p.w_in),
        "b_in": np.zeros_like(p.b_in),
        "cond_proj": np.zeros_like(p.cond_proj),
        "w_out": np.zeros_like(p.w_out),
        "b_out": np.zeros_like(p.b_out),
    }
    if p.use_attention:
        grads["wq"] = np.zeros_like(p.wq)
        grads["wk"] = np.zeros_like(p.wk)
        grads["wv"] = np.zeros_like(p.wv)
    for idx, (w, b) in enumerate(p.blocks):
        grads[f"block{idx}_w"] = np.zeros_like(w)
        grads[f"block{idx}_b"] = np.zeros_like(b)
    return grads


def _grads_to_vector(p: DenoiserParams, grads) -> np.ndarray:
    order = ["w_in", "b_in", "cond_proj"]
    if p.use_attention:
        order += ["wq", "wk", "wv"]
    for idx in range(len(p.blocks)):
        order += [f"block{idx}_w", f"block{idx}_b"]
    order += ["w_out", "b_out"]
    return np.concatenate([grads[name].ravel() for name in order])


def _check_frames(p: DenoiserParams, values) -> np.ndarray:
    frames = np.asarray(values, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[None, :]
    if frames.ndim != 2 or frames.shape[1] != p.data_dim:
        raise ShapeMismatch(f"expected frames x {p.data_dim}, got {np.shape(values)}")
    return frames


def predict_x(p: DenoiserParams, y: LatentState, cond=None) -> DataSample:
    """Predict the clean data for a noisy latent; ``cond=None`` acts as zeros."""
    frames = _check_frames(p, y.values)
    c = _cond_array(cond)
    if c is not None:
        if c.ndim != 2 or c.shape[1] != p.cond_dim:
            raise ShapeMismatch(f"expected conditioning frames x {p.cond_dim}, got {c.shape}")
        if c.shape[0] != frames.shape[0]:
            raise ShapeMismatch(f"conditioning has {c.shape[0]} frames, latent has {frames.shape[0]}")
    out = _forward(p, frames, y.tau, c)
    return DataSample(out.reshape(np.shape(y.values)))


def as_denoise_fn(p: DenoiserParams, cond=None):
    """Adapter giving the 2-argument callable the samplers expect."""
    c = _cond_array(cond)

    def denoise(values, tau):
        return _forward(p, _check_frames(p, values), tau, c).reshape(np.shape(values))

    return denoise


@dataclass(frozen=True)
class BatchDraws:
    """Frozen stochastic inputs of one loss evaluation: times and noises."""

    times: np.ndarray
    noises: list


def draw_batch_noise(rng: np.random.Generator, batch) -> BatchDraws:
    """Draw per-item uniform (clamped) times and standard-normal noises."""
    times = rng.uniform(TAU_MIN, TAU_MAX, size=len(batch))
    noises = [rng.standard_normal(np.shape(item[0].values)) for item in batch]
    return BatchDraws(times, noises)


def _weight(cfg: LossConfig, s: NoiseSchedule, tau: float) -> float:
    if cfg.weight_fn == "unit":
        return 1.0
    return math.exp(log_snr(s, tau))


def _loss_terms(p, batch, s, cfg, draws):
    """Per-item noisy inputs and weights shared by loss and grad."""
    if not batch:
        raise EmptyBatch("loss needs a non-empty batch")
    if len(draws.times) != len(batch) or len(draws.noises) != len(batch):
        raise ShapeMismatch("draws do not match batch size")
    items = []
    for (x, cond), tau, noise in zip(batch, draws.times, draws.noises):
        frames = _check_frames(p, x.values)
        if np.shape(noise) != np.shape(x.values):
            raise ShapeMismatch("noise shape must match data shape")
        beta, gamma = coeffs(s, float(tau))
        noisy = beta * frames + gamma * np.asarray(noise, dtype=np.float64).reshape(frames.shape)
        items.append((frames, noisy, float(tau), _cond_array(cond), _weight(cfg, s, float(tau))))
    return items


def _stack_items(p: DenoiserParams, items):
    """Fuse a batch into one stacked forward pass (valid without attention)."""
    frames = np.concatenate([it[0] for it in items], axis=0)
    noisy = np.concatenate([it[1] for it in items], axis=0)
    taus = np.concatenate([np.full(it[0].shape[0], it[2]) for it in items])
    weights = np.concatenate([np.full(it[0].shape[0], it[4]) for it in items])
    if any(it[3] is not None for it in items) and p.cond_dim:
        cond = np.concatenate(
            [it[3] if it[3] is not None else np.zeros((it[0].shape[0], p.cond_dim)) for it in items],
            axis=0,
        )
    else:
        cond = None
    return frames, noisy, taus, cond, weights


def loss(p: DenoiserParams, batch, s: NoiseSchedule, cfg: LossConfig, draws: BatchDraws) -> float:
    """Weighted squared-error denoising loss, averaged over the batch."""
    items = _loss_terms(p, batch, s, cfg, draws)
    if not p.use_attention:
        frames, noisy, taus, cond, weights = _stack_items(p, items)
        diff = _forward(p, noisy, taus, cond) - frames
        return float(weights @ np.sum(diff**2, axis=1)) / len(items)
    total = 0.0
    for frames, noisy, tau, c, w in items:
        pred = _forward(p, noisy, tau, c)
        total += w * float(np.sum((pred - frames) ** 2))
    return total / len(items)


def grad(p: DenoiserParams, batch, s: NoiseSchedule, cfg: LossConfig, draws: BatchDraws):
    """Exact gradient of :func:`loss` at ``p`` for the fixed draws.

    Returns ``(loss_value, gradient_vector)`` with the vector aligned to
    ``DenoiserParams.to_vector`` order.
    """
    items = _loss_terms(p, batch, s, cfg, draws)
    grads = _zero_grads(p)
    inv_b = 1.0 / len(items)
    if not p.use_attention:
        frames, noisy, taus, cond, weights = _stack_items(p, items)
        pred, cache = _forward(p, noisy, taus, cond, want_cache=True)
        diff = pred - frames
        total = float(weights @ np.sum(diff**2, axis=1)) * inv_b
        if math.isfinite(total):
            _backward(p, cache, (2.0 * inv_b) * weights[:, None] * diff, grads)
        return total, _grads_to_vector(p, grads)
    total = 0.0
    for frames, noisy, tau, c, w in items:
        pred, cache = _forward(p, noisy, tau, c, want_cache=True)
        diff = pred - frames
        term = w * float(np.sum(diff**2))
        total += term
        if math.isfinite(term):  # a non-finite term aborts training anyway
            _backward(p, cache, (2.0 * w * inv_b) * diff, grads)
    return total * inv_b, _grads_to_vector(p, grads)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(vec, g, state: AdamState, cfg: LossConfig) -> np.ndarray:
    state.t += 1
    state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    m_hat = state.m / (1 - cfg.beta1**state.t)
    v_hat = state.v / (1 - cfg.beta2**state.t)
    return vec - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def train(
    p: DenoiserParams,
    dataset,
    s: NoiseSchedule,
    cfg: LossConfig,
    steps: int,
    seed: int = 0,
):
    """Adam-train the denoiser; returns ``(params, per_step_losses)``.

    ``dataset`` is a list of ``(DataSample, conditioning-or-None)`` pairs. The
    run is fully reproducible from ``(seed, dataset, cfg, steps)``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not dataset:
        raise EmptyBatch("training needs a non-empty dataset")
    rng = np.random.Generator(np.random.Philox(seed))
    vec = p.to_vector()
    state = AdamState(np.zeros_like(vec), np.zeros_like(vec))
    losses = []
    current = p
    for step in range(steps):
        idx = rng.integers(0, len(dataset), size=min(cfg.batch, len(dataset)))
        batch = [dataset[int(i)] for i in idx]
        draws = draw_batch_noise(rng, batch)
        value, g = grad(current, batch, s, cfg, draws)
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss became {value} at step {step}")
        losses.append(value)
        vec = adam_step(vec, g, state, cfg)
        current = current.from_vector(vec)
    return current, losses


# --- checkpoint I/O -----------------------------------------------------------

def save_checkpoint(p: DenoiserParams, path):
    """Little-endian binary: magic, arch header, normalization, raw 32-bit weights."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        head = [p.data_dim, p.time_embed, p.cond_dim, int(p.use_attention), len(p.arch)]
        fh.write(struct.pack("<5I", *head))
        fh.write(struct.pack(f"<{len(p.arch)}I", *p.arch))
        fh.write(np.asarray(p.shift, dtype="<f4").tobytes())
        fh.write(np.asarray(p.scale, dtype="<f4").tobytes())
        fh.write(p.to_vector().astype("<f4").tobytes())


def load_checkpoint(path) -> DenoiserParams:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a denoiser checkpoint: bad magic {magic!r}")
        data_dim, time_embed, cond_dim, attn, n_arch = struct.unpack("<5I", fh.read(20))
        arch = struct.unpack(f"<{n_arch}I", fh.read(4 * n_arch))
        shift = np.frombuffer(fh.read(4 * data_dim), dtype="<f4").astype(np.float64)
        scale = np.frombuffer(fh.read(4 * data_dim), dtype="<f4").astype(np.float64)
        p = init_denoiser(
            arch, cond_dim=cond_dim, data_dim=data_dim,
            time_embed=time_embed, use_attention=bool(attn),
        )
        vec = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
        out = p.from_vector(vec)
        out.shift, out.scale = shift, scale
        return out
