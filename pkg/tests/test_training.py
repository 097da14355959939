import csv

import numpy as np
import pytest

from conftest import numeric_grad, random_sample, rel_err
from jnfbench import signal as sig
from jnfbench import training as tr
from jnfbench.acoustics import RenderedSample
from jnfbench.neural import autodiff as ad
from jnfbench.neural.model import ModelConfig, build_model


def tiny_model(variant="FT-JNF", hidden=(4, 3), dtype="float64"):
    return build_model(ModelConfig(variant=variant, hidden=hidden, dtype=dtype), np.random.default_rng(0))


def test_noise_mask_examples(rng):
    assert tr.derive_noise_mask(1.0) == 0
    np.testing.assert_allclose(tr.derive_noise_mask(0.3 + 0.2j), 0.7 - 0.2j)
    m = rng.standard_normal((5, 6)) + 1j * rng.standard_normal((5, 6))
    y = rng.standard_normal((5, 6)) + 1j * rng.standard_normal((5, 6))
    np.testing.assert_allclose(sig.apply_mask(m, y) + sig.apply_mask(tr.derive_noise_mask(m), y), y, atol=1e-12)


def test_loss_zero_for_perfect_estimates(rng):
    s, v = rng.standard_normal((1, 2048)), rng.standard_normal((1, 2048))
    loss = tr.combined_loss(s, ad.Tensor(s), v, ad.Tensor(v))
    assert loss.value == pytest.approx(0.0, abs=1e-5)


def test_loss_two_point_oracle():
    """Two-sample signal against a brute-force two-frame STFT computed by direct DFT."""
    p = sig.StftParams(window_length=2, hop=1)
    s = np.array([1.0, -1.0])
    loss = tr.combined_loss(s, ad.Tensor(np.zeros(2)), alpha=10.0, params=p)
    # frames of the zero-padded signal [0, 1, -1, 0] with window sqrt(0.5 - 0.5 cos(pi n)) = [0, 1]
    w = np.array([0.0, 1.0])
    padded = np.array([0.0, 1.0, -1.0, 0.0])
    mags = []
    for i in range(3):
        frame = padded[i:i + 2] * w
        mags += [abs(frame[0] + frame[1]), abs(frame[0] - frame[1])]
    # the estimate's magnitudes are sqrt(0 + delta) = 1e-6
    expected = 10 * 2 + np.sum(np.abs(np.array(mags) - 1e-6))
    assert loss.value == pytest.approx(expected, rel=1e-12)
    assert loss.value == pytest.approx(24.0, rel=1e-6)


def test_loss_time_term_homogeneous(rng):
    s = rng.standard_normal(1024)
    e = rng.standard_normal(1024)
    t1 = tr.combined_loss(s, ad.Tensor(s + e)).value - _mag(s, s + e)
    t2 = tr.combined_loss(s, ad.Tensor(s + 2 * e)).value - _mag(s, s + 2 * e)
    assert t2 == pytest.approx(2 * t1, rel=1e-9)


def _mag(a, b):
    return float(np.sum(np.abs(np.abs(sig.stft(a)) - np.sqrt(np.abs(sig.stft(b)) ** 2 + 1e-12))))


def test_stft_istft_tensor_gradients(rng):
    x = ad.parameter(rng.standard_normal(700))
    re, im = tr.stft_tensor(x, sig.DEFAULT_STFT)
    w1, w2 = rng.standard_normal(re.shape), rng.standard_normal(im.shape)
    ad.add(ad.sum_(ad.mul(re, w1)), ad.sum_(ad.mul(im, w2))).backward()
    f = lambda: float(np.sum(sig.stft(x.value).real * w1) + np.sum(sig.stft(x.value).imag * w2))
    idx = rng.choice(700, 20, replace=False)
    num = numeric_grad(f, x.value)
    assert rel_err(x.grad[idx], num[idx]) < 1e-6

    a, b = ad.parameter(re.value.copy()), ad.parameter(im.value.copy())
    y = tr.istft_tensor(a, b, sig.DEFAULT_STFT, 700)
    wy = rng.standard_normal(700)
    ad.sum_(ad.mul(y, wy)).backward()
    g = lambda: float(np.sum(sig.istft(a.value + 1j * b.value, length=700) * wy))
    assert rel_err(a.grad, numeric_grad(g, a.value)) < 1e-6
    assert rel_err(b.grad, numeric_grad(g, b.value)) < 1e-6


def test_mask_sum_identity_for_network_output(rng):
    smp = random_sample(rng, 2048)
    m = tiny_model()
    spec = sig.stft(smp.noisy)
    out = m.forward(spec)
    m_re, m_im = tr.uncompress_tensor(out)
    s_re, s_im = tr.complex_mask_product(m_re, m_im, spec[None, 0])
    v_re, v_im = tr.complex_mask_product(ad.sub(1.0, m_re), ad.mul(m_im, -1.0), spec[None, 0])
    total = (s_re.value + v_re.value) + 1j * (s_im.value + v_im.value)
    np.testing.assert_allclose(total[0], spec[0], atol=1e-12)
    s_hat = sig.istft(s_re.value + 1j * s_im.value, length=2048)
    v_hat = sig.istft(v_re.value + 1j * v_im.value, length=2048)
    np.testing.assert_allclose(s_hat + v_hat, smp.noisy[None, 0], atol=1e-6)


def test_full_loss_gradient(rng):
    samples = [random_sample(rng, 1024, sample_id=str(i)) for i in range(2)]
    m = tiny_model()
    loss = tr.batch_loss(m, samples)
    loss.backward()
    assert loss.value > 0
    f = lambda: float(tr.batch_loss(m, samples).value)
    for name in ("lstm1.fwd.W", "lstm2.bwd.b", "ff.W"):
        p = m.params[name]
        idx = tuple(np.unravel_index(rng.choice(p.value.size, 4, replace=False), p.value.shape))
        # small step keeps the l1 kinks out of the difference quotient
        num = numeric_grad(f, p.value, h=1e-7)
        assert rel_err(p.grad[idx], num[idx]) < 1e-3


def test_speech_only_loss_drops_noise_terms(rng):
    smp = random_sample(rng, 1024)
    m = tiny_model()
    full = tr.batch_loss(m, [smp]).value
    speech = tr.batch_loss(m, [smp], speech_only=True).value
    noise_free = RenderedSample(noisy=smp.noisy, target=smp.target, noise=None, snr_db=0.0)
    assert tr.batch_loss(m, [noise_free], speech_only=True).value == speech
    assert speech < full


def test_nan_loss_aborts(rng):
    smp = random_sample(rng, 1024)
    smp.noisy[0, 10] = np.nan
    with pytest.raises(tr.TrainingDiverged):
        tr.batch_loss(tiny_model(), [smp])


def test_crops(rng):
    smp = random_sample(rng, 48000)
    same = tr.crop_random(smp, 3.0, rng)
    np.testing.assert_array_equal(same.noisy, smp.noisy)
    a = tr.crop_random(smp, 1.0, np.random.default_rng(9))
    b = tr.crop_random(smp, 1.0, np.random.default_rng(9))
    np.testing.assert_array_equal(a.noisy, b.noisy)
    assert a.n_samples == 16000
    short = random_sample(rng, 10000)
    tiled = tr.crop_random(short, 1.0, rng)
    np.testing.assert_array_equal(tiled.target[10000:], short.target[:6000])
    # cropping keeps the mixture decomposition aligned
    np.testing.assert_array_equal(a.noisy - a.noise, smp.reverberant_target[:, _offset(smp, a)])
    c = tr.center_crop(smp, 1.0)
    np.testing.assert_array_equal(c.target, smp.target[16000:32000])


def _offset(full, crop):
    start = int(np.flatnonzero(full.target == crop.target[0])[0])
    return slice(start, start + crop.n_samples)


def test_adam_matches_reference():
    p = ad.parameter(np.array([1.0, -2.0]))
    opt = tr.Adam({"p": p}, lr=0.1)
    m = v = np.zeros(2)
    x = p.value.copy()
    for t in range(1, 4):
        g = 2 * x
        p.grad = 2 * p.value.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.value, x, rtol=1e-12)


def test_zero_learning_rate_keeps_parameters(rng):
    samples = [random_sample(rng, 2048, sample_id=str(i)) for i in range(3)]
    m = tiny_model()
    before = {k: p.value.copy() for k, p in m.params.items()}
    tr.train(m, samples, tr.TrainConfig(learning_rate=0.0, crop_seconds=0.1, max_epochs=1, batch_size=2))
    for k, p in m.params.items():
        np.testing.assert_array_equal(p.value, before[k])


def test_train_logs_and_selects_best(tmp_path, rng):
    samples = [random_sample(rng, 3200, sample_id=str(i)) for i in range(4)]
    cfg = tr.TrainConfig(crop_seconds=0.1, max_epochs=4, batch_size=2, learning_rate=1e-2, seed=3)
    m = tiny_model()
    state = tr.train(m, samples[:3], cfg, samples[3:], run_dir=tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "train_log.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2", "3", "4"]
    assert set(rows[0]) == {"epoch", "train_loss", "val_loss", "wall_seconds"}
    vals = [float(r["val_loss"]) for r in rows]
    assert state.best_validation_loss == min(vals)
    assert (tmp_path / "best.ckpt").exists()
    # restored parameters reproduce the best validation loss
    assert tr.evaluate_loss(m, [tr.center_crop(s, 0.1) for s in samples[3:]], cfg) == pytest.approx(min(vals))
    # determinism
    m2 = tiny_model()
    state2 = tr.train(m2, samples[:3], cfg, samples[3:])
    assert state2.step_losses == state.step_losses


def test_patience_stops_early(rng):
    samples = [random_sample(rng, 1600, sample_id=str(i)) for i in range(2)]
    cfg = tr.TrainConfig(crop_seconds=0.1, max_epochs=50, patience=2, batch_size=2, learning_rate=0.0)
    state = tr.train(tiny_model(), samples[:1], cfg, samples[1:])
    assert state.epoch == 3 and state.best_epoch == 1


def test_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(alpha=0)
    cfg = tr.TrainConfig()
    assert (cfg.batch_size, cfg.crop_seconds, cfg.max_epochs, cfg.alpha, cfg.learning_rate) == (6, 3.0, 250, 10.0, 1e-3)
