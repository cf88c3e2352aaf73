"""Tests for the convolutional network, its hand gradients, and training."""

import numpy as np
import pytest

from dcreg.learn import (
    LipschitzReport,
    NetworkArch,
    NetworkParameters,
    OptimizerState,
    TrainAdapter,
    TrainConfig,
    _epoch_lr,
    adam_step,
    backward_batch,
    checkpoint_load,
    checkpoint_save,
    clone_parameters,
    evaluate_loss,
    forward_batch,
    init_network,
    layer_spectral_norms,
    lipschitz_estimate,
    network_forward,
    network_gradient,
    network_map,
    train,
)
from dcreg.linalg import DimensionMismatchError
from dcreg.rng import Rng


def dense_params(arch, rng, scale=0.5):
    """Random parameters with every layer populated (no zero last layer)."""
    params = init_network(arch, rng)
    for i in range(arch.n_layers):
        k = params.kernels[i]
        params.kernels[i] = scale * rng.gaussian_vector(k.size).reshape(k.shape)
        params.biases[i] = 0.1 * rng.gaussian_vector(params.biases[i].size)
    return params


def fd_layer_grads(params, inputs, targets, wd=0.0, h=1e-5):
    """Central finite differences through the full training loss."""
    grads = []
    for layer in range(params.arch.n_layers):
        pair = []
        for arr in (params.kernels[layer], params.biases[layer]):
            g = np.zeros_like(arr)
            flat, gf = arr.ravel(), g.ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                lp, _ = network_gradient(params, inputs, targets, wd)
                flat[j] = orig - h
                lm, _ = network_gradient(params, inputs, targets, wd)
                flat[j] = orig
                gf[j] = (lp - lm) / (2.0 * h)
            pair.append(g)
        grads.append(tuple(pair))
    return grads


def max_rel_err(analytic, fd):
    num, scale = 0.0, 0.0
    for (ak, ab), (fk, fb) in zip(analytic, fd):
        num = max(num, np.max(np.abs(ak - fk)), np.max(np.abs(ab - fb)))
        scale = max(scale, np.max(np.abs(fk)), np.max(np.abs(fb)))
    return num / max(scale, 1e-12)


def clean_point(arch, rng, shape, margin=1e-3):
    """Draw (params, input, target) with every ReLU argument clear of 0.

    Central differences are meaningless when the perturbation can flip a
    unit, so probe points whose pre-activations sit within `margin` of
    the kink are redrawn.
    """
    while True:
        params = dense_params(arch, rng)
        x = rng.gaussian_vector(shape[0] * shape[1]).reshape(shape)
        t = rng.gaussian_vector(shape[0] * shape[1]).reshape(shape)
        _, cache = forward_batch(params, x[None, None])
        gaps = [np.min(np.abs(z)) for _, z in cache[: arch.n_layers - 1]]
        if not gaps or min(gaps) >= margin:
            return params, x, t


class TestNetworkArch:
    def test_defaults(self):
        arch = NetworkArch()
        assert arch.channels == (1, 8, 8, 1)
        assert arch.kernel == (3, 3)
        assert arch.residual
        assert arch.n_layers == 3

    def test_needs_two_channel_entries(self):
        with pytest.raises(ValueError):
            NetworkArch(channels=(1,))

    def test_residual_needs_matching_ends(self):
        with pytest.raises(ValueError):
            NetworkArch(channels=(1, 4, 2), residual=True)
        NetworkArch(channels=(1, 4, 2), residual=False)

    def test_kernel_sides_must_be_odd(self):
        with pytest.raises(ValueError):
            NetworkArch(kernel=(2, 3))
        with pytest.raises(ValueError):
            NetworkArch(kernel=(3, 4))


class TestInit:
    def test_last_layer_zero_biases_zero(self):
        rng = Rng(11)
        params = init_network(NetworkArch(channels=(1, 4, 4, 1)), rng)
        assert np.array_equal(params.kernels[-1], np.zeros_like(params.kernels[-1]))
        for b in params.biases:
            assert np.array_equal(b, np.zeros_like(b))

    def test_fan_in_bound(self):
        rng = Rng(12)
        arch = NetworkArch(channels=(1, 6, 6, 1))
        params = init_network(arch, rng)
        for layer in range(arch.n_layers - 1):
            c_in = arch.channels[layer]
            bound = 1.0 / np.sqrt(c_in * 9)
            assert np.max(np.abs(params.kernels[layer])) <= bound

    def test_same_seed_same_weights(self):
        a = init_network(NetworkArch(), Rng(77))
        b = init_network(NetworkArch(), Rng(77))
        for ka, kb in zip(a.kernels, b.kernels):
            assert np.array_equal(ka, kb)

    def test_clone_is_independent(self):
        params = dense_params(NetworkArch(channels=(1, 2, 1)), Rng(5))
        copy = clone_parameters(params)
        copy.kernels[0][0, 0, 0, 0] += 1.0
        assert params.kernels[0][0, 0, 0, 0] != copy.kernels[0][0, 0, 0, 0]


class TestForward:
    def test_zero_init_residual_is_identity(self):
        rng = Rng(101)
        params = init_network(NetworkArch(channels=(1, 4, 1)), rng)
        x = rng.gaussian_vector(35).reshape(5, 7)
        assert np.array_equal(network_forward(params, x), x)
        batch = rng.gaussian_vector(3 * 35).reshape(3, 5, 7)
        assert np.array_equal(network_forward(params, batch), batch)

    def test_identity_stencil_no_residual(self):
        arch = NetworkArch(channels=(1, 1), kernel=(3, 3), residual=False)
        params = init_network(arch, Rng(0))
        params.kernels[0] = np.zeros((1, 1, 3, 3))
        params.kernels[0][0, 0, 1, 1] = 1.0
        x = Rng(102).gaussian_vector(36).reshape(6, 6)
        assert np.array_equal(network_forward(params, x), x)

    def test_shapes_preserved(self):
        rng = Rng(103)
        params = dense_params(NetworkArch(channels=(1, 3, 1)), rng)
        assert network_forward(params, np.zeros((7, 5))).shape == (7, 5)
        assert network_forward(params, np.zeros((2, 7, 5))).shape == (2, 7, 5)
        out, _ = forward_batch(params, np.zeros((2, 1, 7, 5)))
        assert out.shape == (2, 1, 7, 5)

    def test_rank_and_channel_errors(self):
        params = dense_params(NetworkArch(channels=(2, 2), residual=True), Rng(1))
        with pytest.raises(DimensionMismatchError):
            network_forward(params, np.zeros((4, 4)))
        with pytest.raises(DimensionMismatchError):
            network_forward(params, np.zeros((1, 3, 4, 4)))
        one_ch = dense_params(NetworkArch(channels=(1, 2, 1)), Rng(2))
        with pytest.raises(DimensionMismatchError):
            network_forward(one_ch, np.zeros((1, 1, 1, 4, 4)))

    def test_row_kernel_keeps_rows_independent(self):
        rng = Rng(104)
        arch = NetworkArch(channels=(1, 3, 1), kernel=(1, 3))
        params = dense_params(arch, rng)
        x = rng.gaussian_vector(4 * 8).reshape(4, 8)
        x_mod = x.copy()
        x_mod[2] += rng.gaussian_vector(8)
        out, out_mod = network_forward(params, x), network_forward(params, x_mod)
        for row in (0, 1, 3):
            assert np.array_equal(out[row], out_mod[row])
        assert not np.array_equal(out[2], out_mod[2])

    def test_batch_matches_single(self):
        rng = Rng(105)
        params = dense_params(NetworkArch(channels=(1, 4, 4, 1)), rng)
        batch = rng.gaussian_vector(3 * 36).reshape(3, 6, 6)
        out = network_forward(params, batch)
        for i in range(3):
            single = network_forward(params, batch[i])
            assert np.allclose(out[i], single, rtol=0.0, atol=1e-12)

    def test_network_map_callable(self):
        rng = Rng(106)
        params = dense_params(NetworkArch(channels=(1, 2, 1)), rng)
        x = rng.gaussian_vector(16).reshape(4, 4)
        assert np.array_equal(network_map(params)(x), network_forward(params, x))


class TestGradient:
    def test_zero_gradient_at_exact_fit(self):
        rng = Rng(201)
        params = init_network(NetworkArch(channels=(1, 4, 1)), rng)
        x = rng.gaussian_vector(2 * 25).reshape(2, 5, 5)
        loss, grads = network_gradient(params, x, x)
        assert loss == 0.0
        for dk, db in grads:
            assert np.array_equal(dk, np.zeros_like(dk))
            assert np.array_equal(db, np.zeros_like(db))

    def test_decay_term_alone(self):
        rng = Rng(202)
        params = init_network(NetworkArch(channels=(1, 4, 1)), rng)
        x = rng.gaussian_vector(25).reshape(5, 5)
        wd = 1e-2
        loss, grads = network_gradient(params, x, x, weight_decay=wd)
        expected_loss = wd * sum(float((k * k).sum()) for k in params.kernels)
        assert loss == pytest.approx(expected_loss, rel=1e-15)
        for (dk, db), k in zip(grads, params.kernels):
            assert np.allclose(dk, 2.0 * wd * k, rtol=0.0, atol=1e-15)
            assert np.array_equal(db, np.zeros_like(db))

    def test_matches_finite_differences(self):
        rng = Rng(203)
        arch = NetworkArch(channels=(1, 4, 1))
        worst = 0.0
        for _ in range(10):
            params, x, t = clean_point(arch, rng, (6, 6))
            _, analytic = network_gradient(params, x, t)
            fd = fd_layer_grads(params, x, t)
            worst = max(worst, max_rel_err(analytic, fd))
        assert worst <= 1e-4

    def test_matches_finite_differences_deeper(self):
        rng = Rng(204)
        arch = NetworkArch(channels=(1, 3, 3, 1))
        params = dense_params(arch, rng)
        x = rng.gaussian_vector(2 * 25).reshape(2, 5, 5)
        t = rng.gaussian_vector(2 * 25).reshape(2, 5, 5)
        _, analytic = network_gradient(params, x, t, weight_decay=1e-3)
        fd = fd_layer_grads(params, x, t, wd=1e-3)
        assert max_rel_err(analytic, fd) <= 1e-4

    def test_matches_finite_differences_row_kernel(self):
        rng = Rng(205)
        arch = NetworkArch(channels=(1, 3, 1), kernel=(1, 3))
        params = dense_params(arch, rng)
        x = rng.gaussian_vector(4 * 6).reshape(4, 6)
        t = rng.gaussian_vector(4 * 6).reshape(4, 6)
        _, analytic = network_gradient(params, x, t)
        fd = fd_layer_grads(params, x, t)
        assert max_rel_err(analytic, fd) <= 1e-4

    def test_input_gradient_matches_finite_differences(self):
        rng = Rng(206)
        params = dense_params(NetworkArch(channels=(1, 3, 1)), rng)
        x = rng.gaussian_vector(25).reshape(1, 1, 5, 5)
        t = rng.gaussian_vector(25).reshape(1, 1, 5, 5)
        out, cache = forward_batch(params, x)
        _, dx = backward_batch(params, cache, 2.0 * (out - t))
        h = 1e-6
        fd = np.zeros_like(x)
        for j in range(x.size):
            orig = x.ravel()[j]
            x.ravel()[j] = orig + h
            op, _ = forward_batch(params, x)
            lp = float(((op - t) ** 2).sum())
            x.ravel()[j] = orig - h
            om, _ = forward_batch(params, x)
            lm = float(((om - t) ** 2).sum())
            x.ravel()[j] = orig
            fd.ravel()[j] = (lp - lm) / (2.0 * h)
        scale = max(np.max(np.abs(fd)), 1e-12)
        assert np.max(np.abs(dx - fd)) / scale <= 1e-4

    def test_batch_mean_semantics(self):
        rng = Rng(207)
        params = dense_params(NetworkArch(channels=(1, 3, 1)), rng)
        x = rng.gaussian_vector(16).reshape(4, 4)
        t = rng.gaussian_vector(16).reshape(4, 4)
        loss1, grads1 = network_gradient(params, x[None], t[None])
        loss2, grads2 = network_gradient(
            params, np.stack([x, x]), np.stack([t, t])
        )
        assert loss2 == pytest.approx(loss1, rel=1e-14)
        for (dk1, db1), (dk2, db2) in zip(grads1, grads2):
            assert np.allclose(dk1, dk2, rtol=0.0, atol=1e-13)
            assert np.allclose(db1, db2, rtol=0.0, atol=1e-13)

    def test_batch_size_mismatch(self):
        params = dense_params(NetworkArch(channels=(1, 2, 1)), Rng(3))
        with pytest.raises(DimensionMismatchError):
            network_gradient(params, np.zeros((2, 4, 4)), np.zeros((3, 4, 4)))


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = dense_params(NetworkArch(channels=(1, 2, 1)), Rng(301))
        before = clone_parameters(params)
        state = OptimizerState.zeros_like(params)
        grads = [
            (np.zeros_like(k), np.zeros_like(b))
            for k, b in zip(params.kernels, params.biases)
        ]
        adam_step(params, grads, state, lr=1e-2)
        for k0, k1 in zip(before.kernels, params.kernels):
            assert np.array_equal(k0, k1)
        assert state.t == 1

    def test_first_step_closed_form(self):
        rng = Rng(302)
        params = dense_params(NetworkArch(channels=(1, 2, 1)), rng)
        before = clone_parameters(params)
        grads = [
            (rng.gaussian_vector(k.size).reshape(k.shape), rng.gaussian_vector(b.size))
            for k, b in zip(params.kernels, params.biases)
        ]
        state = OptimizerState.zeros_like(params)
        lr, eps = 3e-3, 1e-8
        adam_step(params, grads, state, lr=lr, eps=eps)
        for (gk, gb), k0, k1, b0, b1 in zip(
            grads, before.kernels, params.kernels, before.biases, params.biases
        ):
            assert np.allclose(k1, k0 - lr * gk / (np.abs(gk) + eps), atol=1e-15)
            assert np.allclose(b1, b0 - lr * gb / (np.abs(gb) + eps), atol=1e-15)

    def test_scalar_quadratic_reaches_minimum(self):
        arch = NetworkArch(channels=(1, 1), kernel=(1, 1), residual=False)
        params = init_network(arch, Rng(0))
        state = OptimizerState.zeros_like(params)
        for _ in range(1000):
            w = params.kernels[0][0, 0, 0, 0]
            grads = [(np.full((1, 1, 1, 1), 2.0 * (w - 3.0)), np.zeros(1))]
            adam_step(params, grads, state, lr=0.1)
        assert abs(params.kernels[0][0, 0, 0, 0] - 3.0) <= 1e-3
        assert state.t == 1000


class TestTrain:
    def test_identity_task_starts_and_stays_at_zero(self):
        rng = Rng(401)
        data = rng.gaussian_vector(4 * 25).reshape(4, 5, 5)
        cfg = TrainConfig(epochs=3, batch_size=2, arch=NetworkArch(channels=(1, 3, 1)))
        params, history = train(data, data, cfg, Rng(402))
        assert history["train_loss"][0] == 0.0
        assert history["train_loss"][-1] <= history["train_loss"][0] + 1e-30
        assert evaluate_loss(params, data, data) == 0.0

    def test_overfits_single_sample(self):
        rng = Rng(403)
        x = rng.gaussian_vector(36).reshape(1, 6, 6)
        t = x + 0.3 * rng.gaussian_vector(36).reshape(1, 6, 6)
        cfg = TrainConfig(
            epochs=400,
            batch_size=1,
            lr_start=1e-2,
            lr_final=1e-3,
            arch=NetworkArch(channels=(1, 6, 1)),
        )
        params, history = train(x, t, cfg, Rng(404))
        initial = history["train_loss"][0]
        final = evaluate_loss(params, x, t)
        assert final <= 1e-4 * initial

    def test_bitwise_determinism(self):
        rng = Rng(405)
        x = rng.gaussian_vector(6 * 16).reshape(6, 4, 4)
        t = x + 0.1 * rng.gaussian_vector(6 * 16).reshape(6, 4, 4)
        cfg = TrainConfig(epochs=5, batch_size=2, arch=NetworkArch(channels=(1, 3, 1)))
        p1, h1 = train(x, t, cfg, Rng(406))
        p2, h2 = train(x, t, cfg, Rng(406))
        for k1, k2 in zip(p1.kernels, p2.kernels):
            assert np.array_equal(k1, k2)
        for b1, b2 in zip(p1.biases, p2.biases):
            assert np.array_equal(b1, b2)
        assert h1["train_loss"] == h2["train_loss"]
        p3, _ = train(x, t, cfg, Rng(407))
        assert any(
            not np.array_equal(k1, k3) for k1, k3 in zip(p1.kernels, p3.kernels)
        )

    def test_validation_loss_reported(self):
        rng = Rng(408)
        x = rng.gaussian_vector(4 * 16).reshape(4, 4, 4)
        vx = rng.gaussian_vector(2 * 16).reshape(2, 4, 4)
        cfg = TrainConfig(epochs=2, batch_size=2, arch=NetworkArch(channels=(1, 2, 1)))
        params, history = train(x, x, cfg, Rng(409), val_inputs=vx, val_targets=vx)
        assert history["val_loss"] == evaluate_loss(params, vx, vx)
        assert len(history["train_loss"]) == cfg.epochs

    def test_empty_and_mismatched_datasets(self):
        cfg = TrainConfig(epochs=1, arch=NetworkArch(channels=(1, 2, 1)))
        with pytest.raises(ValueError):
            train(np.zeros((0, 4, 4)), np.zeros((0, 4, 4)), cfg, Rng(1))
        with pytest.raises(DimensionMismatchError):
            train(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)), cfg, Rng(1))

    def test_adapter_sees_every_index(self):
        seen = []

        class Recorder(TrainAdapter):
            def forward(self, u_out, idx):
                seen.append(np.array(idx))
                assert u_out.ndim == 3
                return u_out

        rng = Rng(410)
        x = rng.gaussian_vector(5 * 16).reshape(5, 4, 4)
        cfg = TrainConfig(epochs=1, batch_size=2, arch=NetworkArch(channels=(1, 2, 1)))
        train(x, x, cfg, Rng(411), adapter=Recorder())
        assert sorted(np.concatenate(seen).tolist()) == [0, 1, 2, 3, 4]

    def test_adapter_gradient_pullback(self):
        class Halving(TrainAdapter):
            def forward(self, u_out, idx):
                return 0.5 * u_out

            def backward(self, d_wrapped, idx):
                return 0.5 * d_wrapped

        rng = Rng(412)
        adapter = Halving()
        params = dense_params(NetworkArch(channels=(1, 3, 1)), rng)
        x = rng.gaussian_vector(25).reshape(1, 5, 5)
        t = rng.gaussian_vector(25).reshape(5, 5)

        xb = x[:, None]
        out, cache = forward_batch(params, xb)
        resid = adapter.forward(out[:, 0], np.array([0])) - t[None]
        d_wrapped = 2.0 * resid
        dout = adapter.backward(d_wrapped, np.array([0]))[:, None]
        grads, _ = backward_batch(params, cache, dout)

        h = 1e-5
        for layer in range(params.arch.n_layers):
            dk = grads[layer][0]
            flat = params.kernels[layer].ravel()
            for j in range(0, flat.size, 7):
                orig = flat[j]
                flat[j] = orig + h
                lp = evaluate_loss(params, x, t[None], adapter)
                flat[j] = orig - h
                lm = evaluate_loss(params, x, t[None], adapter)
                flat[j] = orig
                fd = (lp - lm) / (2.0 * h)
                assert abs(fd - dk.ravel()[j]) <= 1e-4 * max(abs(fd), 1e-8)

    def test_continue_from_given_params(self):
        rng = Rng(413)
        x = rng.gaussian_vector(2 * 16).reshape(2, 4, 4)
        cfg = TrainConfig(epochs=1, batch_size=2, arch=NetworkArch(channels=(1, 2, 1)))
        warm = dense_params(cfg.arch, Rng(414))
        tag = warm.kernels[0].copy()
        params, _ = train(x, x, cfg, Rng(415), params=warm)
        assert params is warm
        assert not np.array_equal(params.kernels[0], tag)


class TestLearningRate:
    def test_endpoints_and_monotone_decay(self):
        cfg = TrainConfig(epochs=10, lr_start=1e-2, lr_final=1e-4)
        rates = [_epoch_lr(cfg, e) for e in range(cfg.epochs)]
        assert rates[0] == 1e-2
        assert rates[-1] == pytest.approx(1e-4, rel=1e-12)
        assert all(a > b for a, b in zip(rates, rates[1:]))

    def test_degenerate_schedules(self):
        assert _epoch_lr(TrainConfig(epochs=1, lr_start=5e-3, lr_final=1e-9), 0) == 5e-3
        cfg = TrainConfig(epochs=7, lr_start=2e-3, lr_final=2e-3)
        assert _epoch_lr(cfg, 3) == 2e-3


class TestLipschitz:
    def test_identity_network_reports_one(self):
        params = init_network(NetworkArch(channels=(1, 4, 1)), Rng(501))
        report = lipschitz_estimate(params, (6, 6), Rng(502))
        assert report.upper == 1.0
        assert report.lower == pytest.approx(1.0, abs=1e-12)

    def test_scaling_stencil_reports_three(self):
        arch = NetworkArch(channels=(1, 1), kernel=(3, 3), residual=False)
        params = init_network(arch, Rng(0))
        params.kernels[0] = np.zeros((1, 1, 3, 3))
        params.kernels[0][0, 0, 1, 1] = 3.0
        report = lipschitz_estimate(params, (5, 5), Rng(503))
        assert report.lower == pytest.approx(3.0, abs=1e-4)
        assert report.upper == pytest.approx(3.0, abs=1e-4)

    def test_lower_never_exceeds_upper(self):
        for seed in range(504, 509):
            params = dense_params(NetworkArch(channels=(1, 4, 4, 1)), Rng(seed))
            report = lipschitz_estimate(params, (6, 6), Rng(seed + 100))
            assert report.lower <= report.upper + 1e-6

    def test_layer_norms_match_dense_svd(self):
        rng = Rng(510)
        arch = NetworkArch(channels=(1, 1), kernel=(3, 3), residual=False)
        params = dense_params(arch, rng)
        n = 4
        cols = []
        for j in range(n * n):
            e = np.zeros((1, 1, n, n))
            e.ravel()[j] = 1.0
            out, _ = forward_batch(params, e)
            bias = params.biases[0][0]
            cols.append((out - bias).ravel())
        dense = np.stack(cols, axis=1)
        sigma = np.linalg.svd(dense, compute_uv=False)[0]
        est = layer_spectral_norms(params, (n, n), Rng(511))[0]
        assert est == pytest.approx(sigma, rel=1e-6)

    def test_weight_decay_orders_upper_bounds(self):
        rng = Rng(512)
        clean = rng.gaussian_vector(12 * 36).reshape(12, 6, 6)
        noisy = clean + 0.2 * rng.gaussian_vector(12 * 36).reshape(12, 6, 6)
        uppers = []
        for wd in (0.0, 1e-3, 1e-2):
            cfg = TrainConfig(
                epochs=30,
                batch_size=4,
                lr_start=3e-3,
                lr_final=1e-3,
                weight_decay=wd,
                arch=NetworkArch(channels=(1, 4, 1)),
            )
            params, _ = train(noisy, clean, cfg, Rng(513))
            uppers.append(lipschitz_estimate(params, (6, 6), Rng(514)).upper)
        assert uppers[0] >= uppers[1] >= uppers[2]


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = Rng(601)
        arch = NetworkArch(channels=(1, 3, 1), kernel=(1, 3))
        params = dense_params(arch, rng)
        meta = {"seed": 7, "stage": "sinogram"}
        path = tmp_path / "net.npz"
        checkpoint_save(path, params, meta)
        loaded, got_meta = checkpoint_load(path)
        assert loaded.arch == arch
        for k0, k1 in zip(params.kernels, loaded.kernels):
            assert np.array_equal(k0, k1)
        for b0, b1 in zip(params.biases, loaded.biases):
            assert np.array_equal(b0, b1)
        assert got_meta == meta

    def test_round_trip_preserves_behavior(self, tmp_path):
        rng = Rng(602)
        params = dense_params(NetworkArch(channels=(1, 4, 1)), rng)
        path = tmp_path / "net.npz"
        checkpoint_save(path, params)
        loaded, meta = checkpoint_load(path)
        assert meta == {}
        x = rng.gaussian_vector(25).reshape(5, 5)
        assert np.array_equal(network_forward(params, x), network_forward(loaded, x))

    def test_version_mismatch_rejected(self, tmp_path):
        params = init_network(NetworkArch(channels=(1, 2, 1)), Rng(603))
        path = tmp_path / "net.npz"
        checkpoint_save(path, params)
        with np.load(path, allow_pickle=False) as data:
            payload = {name: data[name] for name in data.files}
        payload["version"] = np.array(99)
        np.savez(tmp_path / "bad.npz", **payload)
        with pytest.raises(ValueError, match="version"):
            checkpoint_load(tmp_path / "bad.npz")
