import numpy as np
import pytest

from c2lab import detector as det
from c2lab.model import Dataset, FeatureVector, Label, LabeledSample, Provenance


def small_params(seed=0, dtype="float64", hidden=(8, 6)):
    rng = np.random.default_rng(seed)
    return det.DetectorParams.initialize(rng, input_len=20, hidden_sizes=hidden, dtype=dtype)


def random_rows(rng, n):
    x = rng.integers(16, 16408, size=(n, 20)).astype(np.float64)
    # realistic padding suffixes
    for row in x:
        k = rng.integers(1, 21)
        row[k:] = -1.0
    return x


def test_forward_outputs_probabilities():
    params = small_params()
    rng = np.random.default_rng(1)
    x = det.normalize(random_rows(rng, 32))
    probs = det.forward(params, x)
    assert probs.shape == (32, 2)
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_forward_single_row_shape():
    params = small_params()
    probs = det.forward(params, np.zeros(20))
    assert probs.shape == (2,)


def test_ties_flag_as_c2():
    # zero weights force identical logits; the cheap mistake wins
    zero = det.DetectorParams(
        [np.zeros((20, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)]
    )
    fv = FeatureVector.from_sizes([304, 192])
    assert det.predict(zero, [fv]) == [Label.C2]


def test_class_order_pins_c2_to_column_zero():
    assert det.LABEL_INDEX[Label.C2] == 0
    assert det.LABEL_INDEX[Label.NON_C2] == 1
    assert det.CLASS_ORDER == (Label.C2, Label.NON_C2)


def test_normalization_scale():
    x = np.array([[16408.0] + [-1.0] * 19])
    norm = det.normalize(x)
    assert norm[0, 0] == pytest.approx(1.0)
    assert norm[0, 1] == pytest.approx(-1.0 / 16408)
    assert np.allclose(det.denormalize(norm), x)


def test_dropout_needs_rng():
    params = small_params()
    with pytest.raises(ValueError):
        det.forward(params, np.zeros((2, 20)), training=True, dropout_rate=0.5)


def test_save_load_roundtrip(tmp_path):
    params = small_params(seed=3, dtype="float32")
    path = tmp_path / "net.bin"
    params.save(path)
    loaded = det.DetectorParams.load(path)
    assert loaded.layer_sizes == params.layer_sizes
    assert loaded.norm_scale == params.norm_scale
    for a, b in zip(loaded.weights, params.weights):
        assert a.dtype == b.dtype
        assert np.array_equal(a, b)
    rng = np.random.default_rng(5)
    x = det.normalize(random_rows(rng, 16))
    assert np.array_equal(det.forward(loaded, x), det.forward(params, x))


def test_load_rejects_corrupt_files(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTDETZ" + b"\x00" * 64)
    with pytest.raises(ValueError):
        det.DetectorParams.load(path)
    good = tmp_path / "good.bin"
    small_params(dtype="float32").save(good)
    trailing = tmp_path / "trailing.bin"
    trailing.write_bytes(good.read_bytes() + b"\x00")
    with pytest.raises(ValueError):
        det.DetectorParams.load(trailing)


def _separable_dataset(n=240, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n // 2):
        c2 = [int(v) for v in rng.integers(280, 340, size=4)]
        samples.append(LabeledSample(FeatureVector.from_sizes(c2), Label.C2, Provenance.REGULAR))
        web = [int(v) for v in rng.integers(2000, 16000, size=12)]
        samples.append(LabeledSample(FeatureVector.from_sizes(web), Label.NON_C2, Provenance.WEB))
    return Dataset(samples, seed)


def test_training_learns_a_separable_problem():
    ds = _separable_dataset()
    cfg = det.TrainConfig(hidden_sizes=(32, 16), max_epochs=12, batch_size=32, seed=1)
    params, history = det.train(ds, cfg)
    assert det.accuracy(params, ds) >= 0.95
    assert 1 <= len(history) <= 12
    for entry in history:
        assert set(entry) == {"epoch", "train_loss", "val_loss", "val_accuracy"}


def test_training_is_seed_deterministic():
    ds = _separable_dataset()
    cfg = det.TrainConfig(hidden_sizes=(16, 8), max_epochs=4, batch_size=32, seed=7)
    p1, h1 = det.train(ds, cfg)
    p2, h2 = det.train(ds, cfg)
    assert h1 == h2
    assert all(np.array_equal(a, b) for a, b in zip(p1.weights, p2.weights))


def test_training_needs_both_classes():
    ds = _separable_dataset().only(Label.C2)
    with pytest.raises(ValueError):
        det.train(ds, det.TrainConfig(hidden_sizes=(8,), max_epochs=1))


def test_early_stopping_respects_patience():
    ds = _separable_dataset(n=120)
    cfg = det.TrainConfig(hidden_sizes=(16,), max_epochs=20, patience=2, batch_size=32, seed=2)
    _params, history = det.train(ds, cfg)
    assert len(history) <= 20


def test_train_config_validation():
    with pytest.raises(ValueError):
        det.TrainConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        det.TrainConfig(val_fraction=0.6)


def test_loss_matches_cross_entropy_formula():
    logits = np.array([[2.0, -1.0], [0.5, 0.5], [-3.0, 1.0]])
    y = np.array([0, 1, 1])
    manual = float(np.mean(
        [-np.log(np.exp(l[t]) / np.exp(l).sum()) for l, t in zip(logits, y)]
    ))
    assert det.cross_entropy(logits, y) == pytest.approx(manual, rel=1e-12)


def test_input_gradient_matches_finite_differences():
    params = small_params(seed=11, dtype="float64")
    rng = np.random.default_rng(4)
    x = det.normalize(random_rows(rng, 3))
    y = np.array([0, 1, 0])
    analytic = det.input_gradient(params, x, y)
    h = 1e-6
    for i in range(len(x)):
        for j in range(0, 20, 3):
            xp, xm = x.copy(), x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            numeric = (det.loss_on(params, xp[i], y[i]) - det.loss_on(params, xm[i], y[i])) / (2 * h)
            assert analytic[i, j] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_per_sample_gradients_not_batch_scaled():
    params = small_params(seed=11, dtype="float64")
    x = det.normalize(np.arange(40, dtype=np.float64).reshape(2, 20) * 100 + 100)
    single = det.input_gradient(params, x[0], 0)
    batch = det.input_gradient(params, x, np.array([0, 0]))
    assert np.allclose(single, batch[0])


def test_accuracy_on_known_predictions():
    zero = det.DetectorParams([np.zeros((20, 2))], [np.zeros(2)])
    ds = _separable_dataset(n=40)
    # ties everywhere: every sample lands on C2
    acc = det.accuracy(zero, ds)
    assert acc == pytest.approx(0.5)
