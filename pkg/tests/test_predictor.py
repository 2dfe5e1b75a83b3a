import numpy as np
import pytest

import oracles
from uqcat import (
    PhantomSpec,
    PredictorConfig,
    PredictorError,
    TinySegmenter,
    TrainConfig,
    TrainingDivergedError,
    Volume,
    binary_cross_entropy,
    composite_loss,
    dice_score,
    generate_phantom,
    gradient_check,
    soft_dice_loss,
    train,
)
from uqcat.predictor import _loss_and_grad_wrt_logits, _PlateauSchedule, channel_dropout_scale


def small_phantom(seed=4):
    return generate_phantom(PhantomSpec(dims=(16, 16, 8), radius_range=(2.0, 3.0), seed=seed))


# --------------------------------------------------------------------------
# forward contract
# --------------------------------------------------------------------------

def test_forward_rate_zero_deterministic():
    img, _ = small_phantom()
    model = TinySegmenter(seed=1)
    p1 = model.forward(img)
    p2 = model.forward(img, dropout_rate=0.0, seed=999)  # seed irrelevant at rate 0
    assert np.array_equal(p1.data, p2.data)
    assert p1.data.min() >= 0.0 and p1.data.max() <= 1.0


def test_forward_seed_contract():
    img, _ = small_phantom()
    model = TinySegmenter(seed=1)
    a = model.forward(img, dropout_rate=0.03, seed=7)
    b = model.forward(img, dropout_rate=0.03, seed=7)
    c = model.forward(img, dropout_rate=0.03, seed=8)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_forward_dims_validation():
    model = TinySegmenter(seed=0)
    odd = Volume(np.zeros((15, 16, 4), dtype=np.float32))
    with pytest.raises(PredictorError, match="divisible"):
        model.forward(odd)
    with pytest.raises(PredictorError, match="dropout"):
        model.forward(Volume(np.zeros((16, 16, 4), dtype=np.float32)), dropout_rate=1.0)


def test_higher_dropout_disrupts_more(trained_model, small_cohort):
    img = small_cohort[6][0]
    baseline = trained_model.forward(img).data.astype(np.float64)
    mad = {}
    for rate in (0.03, 0.40):
        devs = [
            np.mean(np.abs(trained_model.forward(img, rate, seed=s).data.astype(np.float64) - baseline))
            for s in range(50)
        ]
        mad[rate] = float(np.mean(devs))
    assert mad[0.40] > mad[0.03]


def test_context_channels_replicate_at_edges():
    img, _ = small_phantom()
    model = TinySegmenter(PredictorConfig(context_slices=2), seed=0)
    x = model._stack_slices(img)
    # slice 0: context channels below the volume clamp to slice 0
    assert np.array_equal(x[0, 0], x[0, 2])
    assert np.array_equal(x[0, 1], x[0, 2])
    assert np.array_equal(x[0, 2], img.data[:, :, 0])
    nz = img.dims[2]
    assert np.array_equal(x[nz - 1, 4], img.data[:, :, nz - 1])
    assert np.array_equal(x[nz - 1, 3], img.data[:, :, nz - 1])


def test_expectation_consistency_with_sample_count(trained_model):
    # standard error of the N-sample mean map shrinks ~ 1/sqrt(N); dropout
    # deviations are heavy-tailed, so estimate the SE over many replicates
    img, _ = small_phantom(seed=12)
    rate = 0.12
    replicates = 30
    pool = np.stack(
        [trained_model.forward(img, rate, seed=s).data for s in range(80 * replicates)]
    ).astype(np.float64)

    def se_of_mean(n):
        means = pool[: n * replicates].reshape(replicates, n, *img.dims).mean(axis=1)
        return float(np.sqrt(np.mean(means.var(axis=0))))

    se = {n: se_of_mean(n) for n in (5, 20, 80)}
    assert se[5] > se[20] > se[80]
    assert 1.4 < se[5] / se[20] < 2.8  # theoretical 2.0
    assert 1.4 < se[20] / se[80] < 2.8


def test_channel_dropout_frequency_and_scaling():
    rng = np.random.default_rng(123)
    rate = 0.15
    n_channels = 8
    drops = np.zeros(n_channels)
    trials = 10_000
    for _ in range(trials):
        scale = channel_dropout_scale(n_channels, rate, rng)
        dropped = scale == 0.0
        drops += dropped
        survivors = scale[~dropped]
        assert np.allclose(survivors, 1.0 / (1.0 - rate), atol=1e-6)
    freq = drops / trials
    assert np.all(np.abs(freq - rate) <= 0.02)


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def test_soft_dice_perfect_prediction_is_zero():
    y = np.zeros((4, 4, 4), dtype=np.float32)
    y[1:3, 1:3, 1:3] = 1.0
    assert soft_dice_loss(y, y) == pytest.approx(0.0, abs=1e-12)


def test_soft_dice_disjoint_closed_form():
    p = np.zeros((4, 4, 2), dtype=np.float32)
    y = np.zeros((4, 4, 2), dtype=np.float32)
    p[0, :, :] = 1.0  # 8 voxels
    y[2, :, :] = 1.0  # disjoint 8 voxels
    assert soft_dice_loss(p, y) == pytest.approx(1.0 - 1.0 / 17.0, abs=1e-12)
    assert soft_dice_loss(p, y) == pytest.approx(0.9411764705882353, abs=1e-12)


def test_soft_dice_matches_scalar_oracle():
    y = np.zeros((2, 2, 2), dtype=np.float32)
    y[:, :, 0] = 1.0
    p = np.full((2, 2, 2), 0.5, dtype=np.float32)
    assert soft_dice_loss(p, y) == pytest.approx(oracles.soft_dice(p, y), abs=1e-12)


def test_composite_loss_cases():
    rng = np.random.default_rng(3)
    y = (rng.random((3, 3, 3)) > 0.5).astype(np.float32)
    confident = np.clip(y, 1e-9, 1 - 1e-9)
    assert composite_loss(confident, y) <= 1e-3

    p = rng.random((3, 3, 3)).astype(np.float32)
    assert composite_loss(p, y, w_ce=1.0, w_dice=0.0) == pytest.approx(binary_cross_entropy(p, y), abs=1e-12)
    assert composite_loss(p, y) == pytest.approx(oracles.composite(p, y), abs=1e-6)


def test_dice_score_cases():
    a = np.zeros((4, 4, 1), dtype=np.float32)
    b = np.zeros((4, 4, 1), dtype=np.float32)
    a[0:2, 0:2] = 1.0  # 4 voxels
    b[1:3, 0:2] = 1.0  # 4 voxels, overlap 2
    assert dice_score(a, a) == 1.0
    assert dice_score(a, 1.0 - a) == 0.0
    assert dice_score(a, b) == pytest.approx(0.5)
    assert dice_score(np.zeros((2, 2, 2)), np.zeros((2, 2, 2))) == 1.0
    assert dice_score(a, b) == pytest.approx(oracles.dice_overlap(a, b))


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------

def test_gradient_check_random_init():
    img, lab = small_phantom(seed=5)
    model = TinySegmenter(seed=2)
    assert gradient_check(model, img, lab, n_coords=120, seed=0) <= 1e-3


def test_gradient_zero_weights_zero_input_first_layer():
    model = TinySegmenter(seed=0)
    for k in model.params:
        model.params[k] = np.zeros_like(model.params[k])
    img = Volume(np.zeros((8, 8, 4), dtype=np.float32))
    lab = Volume(np.zeros((8, 8, 4), dtype=np.float32))
    from uqcat.predictor import _label_batch

    params64 = {k: v.astype(np.float64) for k, v in model.params.items()}
    x = model._stack_slices(img, dtype=np.float64)
    logits, cache = model._forward_slices(x, params64, 0.0, None, want_cache=True)
    _, dlogits = _loss_and_grad_wrt_logits(logits, _label_batch(lab), 0.3, 0.7)
    grads = model._backward_slices(dlogits, params64, cache)
    # first-layer weights multiply the zero input, so their gradient is exactly 0
    assert np.array_equal(grads["enc0.W"], np.zeros_like(grads["enc0.W"]))


def test_bce_gradient_matches_closed_form():
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(3, 1, 4, 4))
    y = (rng.random((3, 1, 4, 4)) > 0.5).astype(np.float64)
    _, grad = _loss_and_grad_wrt_logits(logits, y, w_ce=1.0, w_dice=0.0)
    from scipy.special import expit

    closed = (expit(logits) - y) / y.size
    assert np.abs(grad - closed).max() <= 1e-5


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def test_training_improves_and_is_deterministic(small_cohort):
    cfg = TrainConfig(epochs=4, seed=11)
    m1 = TinySegmenter(seed=6)
    h1 = train(m1, small_cohort[:4], cfg)
    m2 = TinySegmenter(seed=6)
    h2 = train(m2, small_cohort[:4], cfg)
    assert h1.train_loss[-1] < h1.train_loss[0]
    assert h1.train_loss == h2.train_loss
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])


def test_trained_model_reaches_good_dice(trained_model, small_cohort):
    scores = []
    for img, lab in small_cohort[6:]:
        pred = trained_model.forward(img)
        scores.append(dice_score(pred.data >= 0.5, lab))
    assert min(scores) >= 0.85


def test_training_divergence_detected(small_cohort):
    model = TinySegmenter(seed=0)
    model.params["head.b"] = np.array([np.nan], dtype=np.float32)
    with pytest.raises(TrainingDivergedError):
        train(model, small_cohort[:1], TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(PredictorError):
        TrainConfig(w_ce=0.5, w_dice=0.6)
    with pytest.raises(PredictorError):
        TrainConfig(plateau_factor=1.5)
    with pytest.raises(PredictorError):
        TrainConfig(batch_slices=0)
    with pytest.raises(PredictorError):
        PredictorConfig(n_blocks=0)
    with pytest.raises(PredictorError):
        train(TinySegmenter(), [], TrainConfig())


def test_plateau_schedule_semantics():
    sched = _PlateauSchedule(lr=1.0, factor=0.25, patience=3, cooldown=2)
    lrs = [sched.step(1.0) for _ in range(10)]
    # first value sets best; three stale epochs trigger a cut; two cool down;
    # then three more stale epochs trigger the next cut
    assert lrs == [1.0, 1.0, 1.0, 0.25, 0.25, 0.25, 0.25, 0.25, 0.0625, 0.0625]

    sched = _PlateauSchedule(lr=1.0, factor=0.25, patience=3, cooldown=2)
    improving = [sched.step(1.0 / (t + 1)) for t in range(8)]
    assert improving == [1.0] * 8


# --------------------------------------------------------------------------
# checkpointing
# --------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, trained_model, small_cohort):
    path = tmp_path / "model.uqp"
    trained_model.save(path)
    back = TinySegmenter.load(path)
    assert back.config == trained_model.config
    for k in trained_model.params:
        assert np.array_equal(back.params[k], trained_model.params[k])
    img = small_cohort[7][0]
    assert np.array_equal(back.forward(img).data, trained_model.forward(img).data)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.uqp"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(PredictorError):
        TinySegmenter.load(path)
    with pytest.raises(FileNotFoundError):
        TinySegmenter.load(tmp_path / "absent.uqp")
