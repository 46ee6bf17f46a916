import math

import numpy as np
import pytest

from svcdiff.denoiser import (
    BatchDraws,
    LossConfig,
    as_denoise_fn,
    draw_batch_noise,
    grad,
    init_denoiser,
    load_checkpoint,
    loss,
    predict_x,
    save_checkpoint,
    time_embedding,
    train,
)
from svcdiff.errors import EmptyBatch, InvalidArch, NonFiniteLoss, ShapeMismatch
from svcdiff.sampler import DataSample, LatentState
from svcdiff.schedule import coeffs, make_schedule

S = make_schedule("vp-cosine")


def reference_forward(p, frames, tau, cond):
    """Independent re-implementation of the forward pass with plain loops."""
    n = frames.shape[0]
    half = p.time_embed // 2
    emb = np.zeros(p.time_embed)
    for j in range(half):
        freq = math.exp(-math.log(10000.0) * j / half)
        emb[j] = math.sin(1000.0 * tau * freq)
        emb[half + j] = math.cos(1000.0 * tau * freq)
    out = np.zeros((n, p.data_dim))
    for i in range(n):
        x = np.concatenate([frames[i], emb])
        z0 = x @ p.w_in + p.b_in
        if cond is not None:
            z0 = z0 + cond[i] @ p.cond_proj
        h = np.tanh(z0)
        for w, b in p.blocks:
            t = np.tanh(h @ w + b)
            h = h + t if w.shape[0] == w.shape[1] else t
        out[i] = h @ p.w_out + p.b_out
    return out


class TestInit:
    def test_deterministic_bytes(self):
        a = init_denoiser((64, 64), seed=1)
        b = init_denoiser((64, 64), seed=1)
        assert a.to_vector().tobytes() == b.to_vector().tobytes()

    def test_different_seed_differs(self):
        a = init_denoiser((16,), seed=1)
        b = init_denoiser((16,), seed=2)
        assert not np.array_equal(a.to_vector(), b.to_vector())

    def test_param_count_closed_form(self):
        d, e, c = 80, 32, 256
        p = init_denoiser((128, 128, 128), cond_dim=c, data_dim=d, time_embed=e)
        expected = (
            (d + e) * 128 + 128        # input layer
            + c * 128                  # conditioning projection
            + 2 * (128 * 128 + 128)    # two hidden blocks
            + 128 * d + d              # output layer
        )
        assert p.param_count() == expected
        assert p.to_vector().size == expected

    def test_empty_arch_rejected(self):
        with pytest.raises(InvalidArch):
            init_denoiser(())

    def test_bad_width_rejected(self):
        with pytest.raises(InvalidArch):
            init_denoiser((8, 0))


class TestPredict:
    def test_zero_weights_give_zero_output(self):
        p = init_denoiser((8, 8), cond_dim=4, data_dim=3, time_embed=4, seed=0)
        p = p.from_vector(np.zeros(p.param_count()))
        y = LatentState(np.ones((5, 3)), 0.5)
        out = predict_x(p, y, np.ones((5, 4)))
        assert np.array_equal(out.values, np.zeros((5, 3)))

    @pytest.mark.parametrize("attn", [False, True])
    def test_cond_none_equals_cond_zero(self, attn):
        p = init_denoiser((12, 12), cond_dim=6, data_dim=4, time_embed=8, seed=3, use_attention=attn)
        y = LatentState(np.random.default_rng(0).standard_normal((7, 4)), 0.4)
        a = predict_x(p, y, None)
        b = predict_x(p, y, np.zeros((7, 6)))
        assert np.array_equal(a.values, b.values)

    def test_matches_independent_forward(self):
        rng = np.random.default_rng(5)
        p = init_denoiser((10, 10, 6), cond_dim=5, data_dim=4, time_embed=6, seed=9)
        frames = rng.standard_normal((6, 4))
        cond = rng.standard_normal((6, 5))
        got = predict_x(p, LatentState(frames, 0.37), cond).values
        want = reference_forward(p, frames, 0.37, cond)
        assert np.allclose(got, want, atol=1e-12)

    def test_cond_width_mismatch(self):
        p = init_denoiser((8,), cond_dim=4, data_dim=3, time_embed=4)
        y = LatentState(np.zeros((2, 3)), 0.5)
        with pytest.raises(ShapeMismatch):
            predict_x(p, y, np.zeros((2, 5)))

    def test_cond_frame_mismatch(self):
        p = init_denoiser((8,), cond_dim=4, data_dim=3, time_embed=4)
        y = LatentState(np.zeros((2, 3)), 0.5)
        with pytest.raises(ShapeMismatch):
            predict_x(p, y, np.zeros((3, 4)))

    def test_doubling_first_layer_changes_output(self):
        p = init_denoiser((8, 8), cond_dim=0, data_dim=3, time_embed=4, seed=1)
        y = LatentState(np.ones((2, 3)), 0.5)
        base = predict_x(p, y).values
        p.w_in = 2.0 * p.w_in
        assert not np.allclose(predict_x(p, y).values, base)

    def test_finite_output(self):
        p = init_denoiser((32, 32), seed=4)
        y = LatentState(np.random.default_rng(1).standard_normal((9, 80)), 0.9)
        out = predict_x(p, y, np.random.default_rng(2).standard_normal((9, 256)))
        assert np.all(np.isfinite(out.values)) and out.values.shape == (9, 80)


def _point_mass_net(x0, data_dim):
    """A net that outputs exactly x0 everywhere: zero weights, bias = x0."""
    p = init_denoiser((8,), cond_dim=0, data_dim=data_dim, time_embed=4, seed=0)
    p = p.from_vector(np.zeros(p.param_count()))
    p.b_out = np.asarray(x0, dtype=np.float64).copy()
    return p


class TestLoss:
    def test_perfect_denoiser_on_point_mass(self):
        x0 = np.array([0.3, -0.7])
        p = _point_mass_net(x0, 2)
        batch = [(DataSample(x0.reshape(1, 2)), None)] * 3
        draws = draw_batch_noise(np.random.default_rng(0), batch)
        assert loss(p, batch, S, LossConfig(), draws) == 0.0

    def test_zero_predictor_gives_mean_squared_norm(self):
        rng = np.random.default_rng(8)
        p = init_denoiser((8,), cond_dim=0, data_dim=3, time_embed=4)
        p = p.from_vector(np.zeros(p.param_count()))
        batch = [(DataSample(rng.standard_normal((4, 3))), None) for _ in range(5)]
        draws = draw_batch_noise(rng, batch)
        expected = np.mean([np.sum(x.values**2) for x, _ in batch])
        assert loss(p, batch, S, LossConfig(), draws) == pytest.approx(expected, rel=1e-12)

    def test_replay_oracle(self):
        # recompute the loss from the stored draws with the independent forward
        rng = np.random.default_rng(3)
        p = init_denoiser((10, 10), cond_dim=4, data_dim=3, time_embed=6, seed=7)
        batch = [
            (DataSample(rng.standard_normal((5, 3))), rng.standard_normal((5, 4)))
            for _ in range(4)
        ]
        draws = draw_batch_noise(rng, batch)
        got = loss(p, batch, S, LossConfig(), draws)
        total = 0.0
        for (x, cond), tau, noise in zip(batch, draws.times, draws.noises):
            b, g = coeffs(S, float(tau))
            noisy = b * x.values + g * noise
            pred = reference_forward(p, noisy, float(tau), cond)
            total += np.sum((pred - x.values) ** 2)
        assert got == pytest.approx(total / len(batch), rel=1e-12)

    def test_snr_weighting(self):
        p = init_denoiser((8,), cond_dim=0, data_dim=2, time_embed=4)
        p = p.from_vector(np.zeros(p.param_count()))
        x = DataSample(np.array([[1.0, 1.0]]))
        draws = BatchDraws(np.array([0.5]), [np.zeros((1, 2))])
        unit = loss(p, [(x, None)], S, LossConfig(weight_fn="unit"), draws)
        snr = loss(p, [(x, None)], S, LossConfig(weight_fn="snr"), draws)
        assert snr == pytest.approx(unit, rel=1e-12)  # e^0 = 1 at tau = 0.5

    def test_empty_batch(self):
        p = init_denoiser((8,), cond_dim=0, data_dim=2, time_embed=4)
        with pytest.raises(EmptyBatch):
            loss(p, [], S, LossConfig(), BatchDraws(np.array([]), []))


class TestGrad:
    def test_zero_loss_gives_zero_gradient(self):
        x0 = np.array([0.4, 0.1, -0.2])
        p = _point_mass_net(x0, 3)
        batch = [(DataSample(x0.reshape(1, 3)), None)] * 2
        draws = draw_batch_noise(np.random.default_rng(5), batch)
        value, g = grad(p, batch, S, LossConfig(), draws)
        assert value == 0.0
        assert np.array_equal(g, np.zeros_like(g))

    def test_deterministic_for_fixed_draws(self):
        rng = np.random.default_rng(0)
        p = init_denoiser((12, 12), cond_dim=3, data_dim=4, time_embed=6, seed=2)
        batch = [(DataSample(rng.standard_normal((3, 4))), rng.standard_normal((3, 3)))]
        draws = draw_batch_noise(rng, batch)
        _, g1 = grad(p, batch, S, LossConfig(), draws)
        _, g2 = grad(p, batch, S, LossConfig(), draws)
        assert np.array_equal(g1, g2)

    @pytest.mark.parametrize(
        "seed,arch,cond_dim,attn,wf",
        [
            (0, (24, 24), 12, False, "unit"),
            (1, (16, 16, 16), 8, True, "unit"),
            (2, (20, 10), 6, False, "snr"),
        ],
    )
    def test_finite_difference_check(self, seed, arch, cond_dim, attn, wf):
        # central differences, h = 1e-4, 64-bit, >= 100 coordinates per config
        rng = np.random.default_rng(seed)
        p = init_denoiser(arch, cond_dim=cond_dim, data_dim=5, time_embed=8,
                          seed=seed + 10, use_attention=attn)
        batch = []
        for i in range(3):
            x = DataSample(rng.standard_normal((4, 5)))
            cond = rng.standard_normal((4, cond_dim)) if i % 2 == 0 else None
            batch.append((x, cond))
        cfg = LossConfig(weight_fn=wf)
        draws = draw_batch_noise(np.random.Generator(np.random.Philox(seed)), batch)
        _, g = grad(p, batch, S, cfg, draws)
        vec = p.to_vector()
        h = 1e-4
        idx = rng.choice(vec.size, size=110, replace=False)
        for i in idx:
            vp, vm = vec.copy(), vec.copy()
            vp[i] += h
            vm[i] -= h
            fd = (
                loss(p.from_vector(vp), batch, S, cfg, draws)
                - loss(p.from_vector(vm), batch, S, cfg, draws)
            ) / (2 * h)
            rel = abs(g[i] - fd) / max(abs(g[i]) + abs(fd), 1e-10)
            assert rel < 1e-4, f"coordinate {i}: analytic {g[i]} vs fd {fd}"


class TestTrain:
    def test_lr_zero_leaves_params_unchanged(self):
        p = init_denoiser((8,), cond_dim=0, data_dim=2, time_embed=4, seed=0)
        data = [(DataSample(np.ones((1, 2))), None)]
        p2, _ = train(p, data, S, LossConfig(lr=0.0, batch=1), steps=5, seed=0)
        assert np.array_equal(p.to_vector(), p2.to_vector())

    def test_point_mass_smoke(self):
        x0 = np.array([[0.5, -0.25, 1.0]])
        data = [(DataSample(x0), None)] * 8
        p = init_denoiser((64, 64), cond_dim=0, data_dim=3, time_embed=16, seed=1)
        _, losses = train(p, data, S, LossConfig(batch=8, lr=1e-3), steps=2000, seed=7)
        assert np.mean(losses[-20:]) < 0.01 * np.mean(losses[:20])

    def test_reproducible_from_seed(self):
        data = [(DataSample(np.random.default_rng(0).standard_normal((2, 3))), None)]
        p = init_denoiser((8,), cond_dim=0, data_dim=3, time_embed=4, seed=0)
        a, la = train(p, data, S, LossConfig(batch=1, lr=1e-3), steps=20, seed=42)
        b, lb = train(p, data, S, LossConfig(batch=1, lr=1e-3), steps=20, seed=42)
        assert la == lb
        assert np.array_equal(a.to_vector(), b.to_vector())

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_non_finite_loss_aborts(self):
        p = init_denoiser((8,), cond_dim=0, data_dim=2, time_embed=4, seed=0)
        p.w_out = p.w_out * 1e300
        data = [(DataSample(np.full((1, 2), 1e20)), None)]
        with pytest.raises(NonFiniteLoss):
            train(p, data, S, LossConfig(batch=1), steps=3, seed=0)

    def test_gaussian_dataset_approaches_analytic_posterior_mean(self):
        mu, sigma = 0.4, 1.0
        rng = np.random.default_rng(11)
        data = [(DataSample(np.array([[v]])), None) for v in rng.normal(mu, sigma, 256)]
        p = init_denoiser((48, 48), cond_dim=0, data_dim=1, time_embed=16, seed=2)

        def gap(params):
            fn = as_denoise_fn(params)
            total = 0.0
            for tau in (0.1, 0.3, 0.5, 0.7, 0.9):
                b, g = coeffs(S, tau)
                m = b * b * sigma**2 + g * g
                ys = np.linspace(b * mu - 3 * math.sqrt(m), b * mu + 3 * math.sqrt(m), 41)
                target = mu + (b * sigma**2 / m) * (ys - b * mu)
                pred = fn(ys[:, None], tau).ravel()
                total += float(np.mean((pred - target) ** 2))
            return total / 5

        before = gap(p)
        trained, _ = train(p, data, S, LossConfig(batch=32, lr=2e-3), steps=3000, seed=9)
        assert gap(trained) < before / 10


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = init_denoiser((24, 24), cond_dim=16, data_dim=6, time_embed=8, seed=5)
        p.shift = np.linspace(-1, 1, 6)
        p.scale = np.linspace(0.5, 2.0, 6)
        path = tmp_path / "net.bin"
        save_checkpoint(p, path)
        q = load_checkpoint(path)
        assert q.arch == p.arch and q.cond_dim == p.cond_dim
        assert np.array_equal(q.to_vector(), p.to_vector().astype(np.float32).astype(np.float64))
        assert np.allclose(q.shift, p.shift, atol=1e-6)
        assert np.allclose(q.scale, p.scale, atol=1e-6)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_attention_round_trip(self, tmp_path):
        p = init_denoiser((12,), cond_dim=8, data_dim=4, time_embed=4, seed=1, use_attention=True)
        path = tmp_path / "attn.bin"
        save_checkpoint(p, path)
        q = load_checkpoint(path)
        assert q.use_attention
        y = LatentState(np.random.default_rng(3).standard_normal((5, 4)), 0.6)
        cond = np.random.default_rng(4).standard_normal((5, 8))
        assert np.allclose(predict_x(p, y, cond).values, predict_x(q, y, cond).values, atol=1e-5)


class TestConfig:
    def test_bad_weight_fn(self):
        with pytest.raises(ValueError):
            LossConfig(weight_fn="karras")

    def test_negative_lr(self):
        with pytest.raises(ValueError):
            LossConfig(lr=-1.0)

    def test_embedding_shape(self):
        emb = time_embedding([0.1, 0.9], 16)
        assert emb.shape == (2, 16)
        assert np.all(np.isfinite(emb))
