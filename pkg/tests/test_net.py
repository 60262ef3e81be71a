import struct
from functools import partial

import numpy as np
import pytest

from metaloss.losses import gamma_baikal, gamma_ce, gamma_mse, gamma_taylor
from metaloss.net import (
    ConfigurationError,
    Dataset,
    IdxFormatError,
    Network,
    TrainConfig,
    TrainingDivergedError,
    accuracy,
    decomposed_step,
    load_checkpoint,
    load_idx,
    make_blobs,
    one_hot,
    save_checkpoint,
    split_dataset,
    train,
)
from oracles import loss_gradient_fd


def check_step_against_fd(kind, gamma_fn, eta=1e-3, seed=0, params=None, hidden=(3,)):
    """One decomposed step must equal -eta * (finite-difference loss gradient)."""
    rng = np.random.default_rng(seed)
    net = Network((2, *hidden, 2), rng_seed=seed)
    x = rng.uniform(-1, 1, 2)
    y = np.array([0.0, 1.0]) if rng.uniform() < 0.5 else np.array([1.0, 0.0])
    before = net.get_flat()
    grad = loss_gradient_fd(net, x, y, kind, params=params)
    applied = decomposed_step(net, x, y, gamma_fn, TrainConfig(eta=eta, epochs=1))
    assert applied
    update = net.get_flat() - before
    expected = -eta * grad
    np.testing.assert_allclose(update, expected, rtol=1e-4, atol=1e-10)
    return update.size


class TestForward:
    def test_zero_weights_give_uniform_output(self):
        net = Network((3, 5, 4), rng_seed=1)
        net.set_flat(np.zeros(net.num_params()))
        out = net.forward(np.array([0.3, -2.0, 5.0]))
        np.testing.assert_allclose(out, 0.25)

    def test_identical_final_rows_give_even_split(self):
        net = Network((2, 2), rng_seed=0)
        net.weights[0][...] = np.array([[0.7, 0.7], [-0.2, -0.2]])
        net.biases[0][...] = 0.1
        out = net.forward(np.array([1.5, -0.3]))
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_output_is_valid_distribution(self):
        rng = np.random.default_rng(3)
        net = Network((4, 6, 3), rng_seed=3)
        batch = rng.normal(size=(50, 4))
        out = net.forward(batch)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out > 0) and np.all(out < 1)

    def test_batch_matches_single(self):
        net = Network((3, 4, 2), rng_seed=5)
        batch = np.random.default_rng(5).normal(size=(10, 3))
        from_batch = net.forward(batch)
        singles = np.array([net.forward(row) for row in batch])
        np.testing.assert_allclose(from_batch, singles, atol=1e-15)

    def test_seeded_construction_is_bit_stable(self):
        x = np.array([0.1, 0.2, 0.3, 0.4])
        a = Network((4, 8, 3), rng_seed=11).forward(x)
        b = Network((4, 8, 3), rng_seed=11).forward(x)
        assert np.array_equal(a, b)

    def test_dimension_mismatch(self):
        net = Network((3, 2), rng_seed=0)
        with pytest.raises(ConfigurationError):
            net.forward(np.zeros(4))

    def test_fresh_wide_net_outputs_near_uniform_in_expectation(self):
        """Symmetric init keeps the mean output within 0.02 of 1/n."""
        rng = np.random.default_rng(17)
        net = Network((4, 32, 10), rng_seed=17)
        inputs = rng.normal(size=(1000, 4))
        mean_out = net.forward(inputs).mean(axis=0)
        np.testing.assert_allclose(mean_out, 0.1, atol=0.02)


class TestDecomposedStep:
    def test_zero_gamma_leaves_network_unchanged(self):
        net = Network((2, 3, 2), rng_seed=0)
        before = net.get_flat()
        applied = decomposed_step(
            net, np.array([0.5, -0.5]), np.array([1.0, 0.0]), lambda h, y: np.zeros_like(h), TrainConfig(eta=0.5, epochs=1)
        )
        assert applied
        assert np.array_equal(net.get_flat(), before)

    def test_mse_with_outputs_forced_equal_to_labels(self):
        """Feeding the outputs back as their own labels makes MSE silent."""
        net = Network((2, 3, 2), rng_seed=1)
        before = net.get_flat()
        decomposed_step(
            net, np.array([0.1, 0.9]), np.array([1.0, 0.0]), lambda h, y: gamma_mse(h, h), TrainConfig(eta=0.5, epochs=1)
        )
        assert np.array_equal(net.get_flat(), before)

    def test_gradient_oracle_mse(self):
        coords = 0
        for seed in range(4):
            coords += check_step_against_fd("mse", gamma_mse, seed=seed)
        assert coords >= 50

    def test_gradient_oracle_ce(self):
        coords = 0
        for seed in range(4):
            coords += check_step_against_fd("ce", gamma_ce, seed=seed)
        assert coords >= 50

    def test_gradient_oracle_taylor_random_params(self):
        rng = np.random.default_rng(21)
        coords = 0
        for seed in range(4):
            params = rng.normal(size=8)
            coords += check_step_against_fd("taylor", partial(gamma_taylor, params), seed=seed, params=params)
        assert coords >= 50

    def test_gradient_oracle_baikal_interior(self):
        """Baikal is checked only where outputs are comfortably interior."""
        for seed in range(4):
            net = Network((2, 3, 2), rng_seed=seed)
            x = np.random.default_rng(seed).uniform(-1, 1, 2)
            h = net.forward(x)
            assert np.all(h > 0.1) and np.all(h < 0.9)
            check_step_against_fd("baikal", gamma_baikal, seed=seed)

    def test_non_finite_gamma_aborts_step(self):
        net = Network((2, 3, 2), rng_seed=2)
        before = net.get_flat()
        applied = decomposed_step(
            net,
            np.array([0.5, -0.5]),
            np.array([1.0, 0.0]),
            lambda h, y: np.full_like(h, np.nan),
            TrainConfig(eta=0.1, epochs=1),
        )
        assert not applied
        assert np.array_equal(net.get_flat(), before)

    def test_softmax_normalization_preserved_after_steps(self):
        net = Network((2, 4, 3), rng_seed=3)
        ds = make_blobs(3, 10, 2, 0.4, rng_seed=3)
        labels = one_hot(ds.labels, 3)
        config = TrainConfig(eta=0.2, epochs=1)
        for i in range(len(ds)):
            decomposed_step(net, ds.features[i], labels[i], gamma_ce, config)
            out = net.forward(ds.features[i])
            assert out.sum() == pytest.approx(1.0, abs=1e-9)


class TestTrain:
    def test_ce_learns_separable_blobs(self):
        ds = make_blobs(2, 100, 2, 0.3, rng_seed=7)
        net = Network((2, 8, 2), rng_seed=7)
        _, log = train(net, ds, gamma_ce, TrainConfig(eta=0.1, epochs=50, rng_seed=7))
        assert log.accuracy[-1] >= 0.95

    def test_zero_gamma_keeps_null_accuracy(self):
        ds = make_blobs(2, 20, 2, 0.3, rng_seed=9)
        net = Network((2, 4, 2), rng_seed=9)
        null_acc = accuracy(net, ds)
        _, log = train(net, ds, lambda h, y: np.zeros_like(h), TrainConfig(eta=0.5, epochs=5, rng_seed=9))
        assert log.accuracy == [null_acc] * 5

    def test_gate_violating_params_fail_to_learn(self):
        ds = make_blobs(2, 30, 2, 0.3, rng_seed=11)
        lam = np.array([0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0])
        net = Network((2, 6, 2), rng_seed=11)
        _, log = train(net, ds, partial(gamma_taylor, lam), TrainConfig(eta=0.3, epochs=8, rng_seed=11))
        assert log.accuracy[-1] <= 0.5 + 0.15

    def test_fixed_seed_reproduces_run_log(self):
        ds = make_blobs(2, 30, 2, 0.3, rng_seed=13)
        logs = []
        for _ in range(2):
            net = Network((2, 6, 2), rng_seed=13)
            _, log = train(net, ds, gamma_ce, TrainConfig(eta=0.2, epochs=6, rng_seed=13, log_per_sample=True))
            logs.append(log)
        assert logs[0].accuracy == logs[1].accuracy
        for a, b in zip(logs[0].target_h, logs[1].target_h):
            assert np.array_equal(a, b)

    def test_per_sample_log_shapes(self):
        ds = make_blobs(2, 15, 2, 0.3, rng_seed=15)
        net = Network((2, 4, 2), rng_seed=15)
        _, log = train(net, ds, gamma_ce, TrainConfig(eta=0.1, epochs=3, rng_seed=15, log_per_sample=True))
        assert len(log.target_h) == 3
        assert all(row.shape == (30,) for row in log.target_h)
        for t, nt in zip(log.target_h, log.mean_nontarget_h):
            np.testing.assert_allclose(nt, (1.0 - t) / (ds.n_classes - 1))

    def test_all_aborted_epoch_raises_divergence(self):
        ds = make_blobs(2, 10, 2, 0.3, rng_seed=17)
        net = Network((2, 4, 2), rng_seed=17)
        with pytest.raises(TrainingDivergedError) as excinfo:
            train(net, ds, lambda h, y: np.full_like(h, np.inf), TrainConfig(eta=0.1, epochs=3, rng_seed=17))
        assert excinfo.value.run_log.diverged
        assert excinfo.value.run_log.accuracy == []

    def test_class_count_mismatch(self):
        ds = make_blobs(3, 5, 2, 0.3, rng_seed=19)
        net = Network((2, 4, 2), rng_seed=19)
        with pytest.raises(ConfigurationError):
            train(net, ds, gamma_ce, TrainConfig(eta=0.1, epochs=1))


class TestBlobs:
    def test_shапes_and_balance(self):
        ds = make_blobs(2, 100, 2, 0.3, rng_seed=7)
        assert len(ds) == 200
        assert ds.dim == 2
        assert np.bincount(ds.labels).tolist() == [100, 100]

    def test_same_seed_same_data(self):
        a = make_blobs(3, 20, 4, 0.5, rng_seed=23)
        b = make_blobs(3, 20, 4, 0.5, rng_seed=23)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_tiny_spread_is_linearly_separable(self):
        """A bare linear-softmax layer reaches 100% when clusters collapse."""
        ds = make_blobs(2, 50, 2, 1e-6, rng_seed=29)
        net = Network((2, 2), rng_seed=29)
        _, log = train(net, ds, gamma_ce, TrainConfig(eta=0.5, epochs=20, rng_seed=29))
        assert log.accuracy[-1] == 1.0

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            make_blobs(1, 10, 2, 0.3, rng_seed=0)
        with pytest.raises(ValueError):
            make_blobs(2, 10, 2, 0.0, rng_seed=0)


class TestSplit:
    def test_split_sizes_and_determinism(self):
        ds = make_blobs(2, 50, 2, 0.3, rng_seed=31)
        train_a, val_a = split_dataset(ds, 0.2, rng_seed=5)
        train_b, val_b = split_dataset(ds, 0.2, rng_seed=5)
        assert len(val_a) == 20 and len(train_a) == 80
        assert np.array_equal(train_a.features, train_b.features)
        assert np.array_equal(val_a.features, val_b.features)

    def test_split_partition_complete(self):
        ds = make_blobs(2, 25, 2, 0.3, rng_seed=33)
        tr, va = split_dataset(ds, 0.2, rng_seed=1)
        merged = np.vstack([tr.features, va.features])
        assert merged.shape == ds.features.shape
        assert {tuple(r) for r in merged} == {tuple(r) for r in ds.features}

    def test_bad_fraction(self):
        ds = make_blobs(2, 5, 2, 0.3, rng_seed=0)
        with pytest.raises(ValueError):
            split_dataset(ds, 0.0, rng_seed=0)


def write_idx_fixture(tmp_path, n=4, rows=28, cols=28, image_magic=0x803, label_magic=0x801, truncate=False):
    rng = np.random.default_rng(37)
    pixels = rng.integers(0, 256, size=(n, rows, cols), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    img = struct.pack(">IIII", image_magic, n, rows, cols) + pixels.tobytes()
    lbl = struct.pack(">II", label_magic, n) + labels.tobytes()
    if truncate:
        img = img[: 16 + n * rows * cols // 2]
    img_path = tmp_path / "images.idx"
    lbl_path = tmp_path / "labels.idx"
    img_path.write_bytes(img)
    lbl_path.write_bytes(lbl)
    return img_path, lbl_path, pixels, labels


class TestIdxLoader:
    def test_well_formed_fixture(self, tmp_path):
        img, lbl, pixels, labels = write_idx_fixture(tmp_path)
        ds = load_idx(img, lbl)
        assert len(ds) == 4
        assert ds.dim == 784
        np.testing.assert_allclose(ds.features, pixels.reshape(4, -1) / 255.0)
        assert np.array_equal(ds.labels, labels)
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0

    def test_limit_takes_leading_samples(self, tmp_path):
        img, lbl, pixels, labels = write_idx_fixture(tmp_path)
        ds = load_idx(img, lbl, limit=2)
        assert len(ds) == 2
        np.testing.assert_allclose(ds.features, pixels.reshape(4, -1)[:2] / 255.0)
        assert np.array_equal(ds.labels, labels[:2])

    def test_wrong_image_magic(self, tmp_path):
        img, lbl, *_ = write_idx_fixture(tmp_path, image_magic=0x805)
        with pytest.raises(IdxFormatError, match="byte offset 0"):
            load_idx(img, lbl)

    def test_wrong_label_magic(self, tmp_path):
        img, lbl, *_ = write_idx_fixture(tmp_path, label_magic=0x803)
        with pytest.raises(IdxFormatError, match="bad magic"):
            load_idx(img, lbl)

    def test_truncated_images(self, tmp_path):
        img, lbl, *_ = write_idx_fixture(tmp_path, truncate=True)
        with pytest.raises(IdxFormatError, match="byte offset"):
            load_idx(img, lbl)


class TestCheckpoints:
    def test_round_trip_preserves_outputs(self, tmp_path):
        net = Network((3, 5, 2), rng_seed=41)
        path = tmp_path / "model.json"
        save_checkpoint(net, path)
        restored = load_checkpoint(path)
        x = np.random.default_rng(41).normal(size=(5, 3))
        assert np.array_equal(net.forward(x), restored.forward(x))
