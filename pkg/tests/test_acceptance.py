"""Acceptance criteria 1-9, each at its stated tolerance; one PASS/FAIL line per criterion."""
import time

import numpy as np
import pytest

from conftest import numeric_grad, rel_err, report
from jnfbench import acoustics as ac
from jnfbench import beamforming as bf
from jnfbench import signal as sig
from jnfbench import training as tr
from jnfbench.corpus import SyntheticCorpus
from jnfbench.evaluation import PipelineSpec, evaluate, si_sdr
from jnfbench.experiments import DeskProtocol, majority, run_desk, trend_checks
from jnfbench.neural import autodiff as ad
from jnfbench.neural.lstm import bilstm, init_lstm
from jnfbench.neural.model import ModelConfig, build_model


def test_criterion_1_stft_round_trip():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    errs = []
    for _ in range(5):
        x = rng.standard_normal(3 * 16000)
        y = sig.istft(sig.stft(x), length=len(x))
        errs.append(np.linalg.norm(y - x) / np.linalg.norm(x))
    elapsed = (time.perf_counter() - t0) / 5
    ok = max(errs) < 1e-6 and elapsed < 1.0
    report(1, ok, f"max rel l2 error {max(errs):.2e} (< 1e-6), {elapsed:.3f} s per 3 s signal (< 1 s)")
    assert ok


def _fd_error(fn, arrays, rng, h=1e-5):
    params = [ad.parameter(a) for a in arrays]
    out = fn(*params)
    w = rng.standard_normal(out.shape)
    ad.sum_(ad.mul(out, w)).backward()
    f = lambda: float(np.sum(fn(*[ad.Tensor(q.value) for q in params]).value * w))
    return max(rel_err(p.grad, numeric_grad(f, p.value, h)) for p in params)


def _primitive_errors(rng):
    x, y = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    perm = np.argsort(rng.random((5, 4)), axis=1)
    A = rng.standard_normal((3, 5))
    cases = {
        "add": (ad.add, [x, y]),
        "sub": (ad.sub, [x, y]),
        "mul": (ad.mul, [x, y]),
        "matmul": (ad.matmul, [x, rng.standard_normal((4, 3))]),
        "tanh": (ad.tanh, [x]),
        "sigmoid": (ad.sigmoid, [x]),
        "atanh_clipped": (ad.atanh_clipped, [np.tanh(x)]),
        "concat": (lambda a, b: ad.concat([a, b], 1), [x, y]),
        "slice": (lambda a: ad.slice_(a, (slice(1, 4), slice(None, None, 2))), [x]),
        "transpose": (lambda a: ad.transpose(a, (1, 0)), [x]),
        "reshape": (lambda a: ad.reshape(a, (2, 10)), [x]),
        "sum": (lambda a: ad.sum_(a, axis=0), [x]),
        "take_along_axis": (lambda a: ad.take_along_axis(a, perm, 1), [x]),
        "abs1_loss": (ad.abs1_loss, [x]),
        "complex_magnitude": (ad.complex_magnitude, [x, y]),
        "linear_map": (lambda a: ad.linear_map([a], lambda v: A @ v, lambda g: (A.T @ g,)), [x]),
    }
    return {name: _fd_error(fn, arrays, rng) for name, (fn, arrays) in cases.items()}


def test_criterion_2_autodiff():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    prim = _primitive_errors(rng)
    # two-layer bi-LSTM, gradients wrt the input and every weight
    shapes = [(3, 3), (3, 3), (6, 2), (6, 2)]
    layers = [init_lstm(i, h, rng) for i, h in shapes]
    arrays = [rng.standard_normal((2, 4, 3))] + [getattr(l, n).value for l in layers for n in ("W", "R", "b")]

    def stack(s, *ps):
        L = [type(layers[0])(*ps[3 * j:3 * j + 3]) for j in range(4)]
        return bilstm(L[2], L[3], bilstm(L[0], L[1], s))

    lstm_err = _fd_error(stack, arrays, rng)
    # end-to-end tiny model (C=3, F=9, T=7, H=(4,3)) with a scalar loss
    spec = rng.standard_normal((3, 9, 7)) + 1j * rng.standard_normal((3, 9, 7))
    model = build_model(ModelConfig("FT-JNF", hidden=(4, 3), n_bins=9), np.random.default_rng(0))
    wm = rng.standard_normal((1, 9, 7, 2))
    ad.sum_(ad.mul(model.forward(spec), wm)).backward()
    g = lambda: float(np.sum(model.forward(spec).value * wm))
    model_err = max(rel_err(p.grad, numeric_grad(g, p.value)) for p in model.params.values())
    elapsed = time.perf_counter() - t0
    worst = max(prim, key=prim.get)
    ok = max(prim.values()) < 1e-4 and lstm_err < 1e-4 and model_err < 1e-3 and elapsed < 30
    report(2, ok, f"primitives max rel err {prim[worst]:.1e} ({worst}), bi-LSTM {lstm_err:.1e} (< 1e-4), "
                  f"tiny model {model_err:.1e} (< 1e-3), {elapsed:.1f} s (< 30 s)")
    assert ok


def test_criterion_3_mvdr():
    from test_beamforming import anechoic_two_source

    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    F, T = 257, 60
    d = rng.standard_normal((F, 3)) + 1j * rng.standard_normal((F, 3))
    d /= d[:, :1]
    s = rng.standard_normal((F, T)) + 1j * rng.standard_normal((F, T))
    noise = rng.standard_normal((3, F, T)) + 1j * rng.standard_normal((3, F, T))
    phi_vv = bf.recursive_covariance(noise, 0.95)
    w = bf.mvdr_weights(np.broadcast_to(d[:, None], (F, T, 3)), phi_vv)
    constraint = float(np.max(np.abs(np.sum(w.conj() * d[:, None], axis=-1) - 1)))
    recovery = float(np.max(np.abs(bf.beamform(w, np.einsum("fc,ft->cft", d, s)) - s)))
    # oracle pipeline on real covariances: constraint at every (k, i)
    xs, xv, aligned = anechoic_two_source()
    Y, S, V = sig.stft(xs + xv), sig.stft(xs), sig.stft(xv)
    phi_ss, phi_v = bf.recursive_covariance(S), bf.recursive_covariance(V)
    d_est = bf.estimate_atf(phi_ss, phi_v)
    w_est = bf.mvdr_weights(d_est, phi_v)
    constraint = max(constraint, float(np.max(np.abs(np.sum(w_est.conj() * d_est, axis=-1) - 1))))
    est = sig.istft(bf.beamform(w_est, Y), length=xs.shape[1])
    gain = si_sdr(est, aligned) - si_sdr(xs[0] + xv[0], aligned)
    elapsed = time.perf_counter() - t0
    ok = constraint < 1e-6 and recovery < 1e-6 and gain > 3 and elapsed < 30
    report(3, ok, f"max |wᴴd-1| {constraint:.1e}, plane-wave error {recovery:.1e} (< 1e-6), "
                  f"anechoic SI-SDR gain {gain:.2f} dB (> 3), {elapsed:.1f} s (< 30 s)")
    assert ok


def test_criterion_4_mask_identities():
    rng = np.random.default_rng(4)
    y = rng.standard_normal((3, 257, 40)) + 1j * rng.standard_normal((3, 257, 40))
    worst_sum = 0.0
    for variant in ("T-JNF", "FT-JNF", "FT-NSF"):
        model = build_model(ModelConfig(variant, hidden=(8, 4)), rng)
        out = model.forward(y * 50, rng)  # large inputs push outputs towards saturation
        m_re, m_im = tr.uncompress_tensor(out)
        s_re, s_im = tr.complex_mask_product(m_re, m_im, y[None, 0])
        v_re, v_im = tr.complex_mask_product(ad.sub(1.0, m_re), ad.mul(m_im, -1.0), y[None, 0])
        total = (s_re.value + v_re.value) + 1j * (s_im.value + v_im.value)
        worst_sum = max(worst_sum, float(np.max(np.abs(total[0] - y[0]))))
        ms = m_re.value + 1j * m_im.value
        direct = sig.apply_mask(ms[0], y[0]) + sig.apply_mask(tr.derive_noise_mask(ms[0]), y[0])
        worst_sum = max(worst_sum, float(np.max(np.abs(direct - y[0]))))
    m = rng.uniform(-5, 5, 1000) + 1j * rng.uniform(-5, 5, 1000)
    codec = float(np.max(np.abs(sig.uncompress_mask(sig.compress_mask(m)) - m)))
    ok = worst_sum <= 1e-12 and codec < 1e-6
    report(4, ok, f"max |Ŝ+V̂-Y0| {worst_sum:.1e} (<= 1e-12), codec round trip {codec:.1e} (< 1e-6)")
    assert ok


def test_criterion_5_architecture_contracts():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    F, T = 33, 20
    y = rng.standard_normal((3, F, T)) + 1j * rng.standard_normal((3, F, T))
    mk = lambda v, **kw: build_model(ModelConfig(v, hidden=(8, 6), n_bins=F, **kw), np.random.default_rng(1))
    results = {}
    m = mk("T-JNF")
    ok_t = True
    for k in (0, 7, F - 1):
        z = np.zeros_like(y)
        z[:, k] = y[:, k]
        ok_t &= np.array_equal(m.forward(y).value[0, k], m.forward(z).value[0, k])
    results["T-JNF narrow-band independence"] = ok_t
    m = mk("F-JNF")
    ok_f = True
    for i in (0, 9, T - 1):
        z = np.zeros_like(y)
        z[:, :, i] = y[:, :, i]
        ok_f &= np.array_equal(m.forward(y).value[0, :, i], m.forward(z).value[0, :, i])
    results["F-JNF wide-band independence"] = ok_f
    m = mk("FT-JNF")
    z = y.copy()
    z[:, F - 1, T - 1] += 1.0
    results["FT-JNF global dependence"] = bool(np.all(np.abs(m.forward(y).value - m.forward(z).value)[0, 0, 0] > 0))
    ok_nsf = True
    for nsf, jnf in (("T-NSF", "T-JNF"), ("F-NSF", "F-JNF"), ("FT-NSF", "FT-JNF")):
        a = mk(nsf)
        b = type(a)(ModelConfig(jnf, hidden=(8, 6), n_bins=F, append_freq_index=True), a.params)
        ok_nsf &= np.array_equal(a.forward(y, shuffle=False).value, b.forward(y).value)
    results["NSF identity-permutation equivalence"] = ok_nsf
    elapsed = time.perf_counter() - t0
    ok = all(results.values()) and elapsed < 60
    failed = [k for k, v in results.items() if not v]
    report(5, ok, f"{len(results) - len(failed)}/{len(results)} contracts hold"
                  f"{' (failed: ' + ', '.join(failed) + ')' if failed else ''}, {elapsed:.1f} s (< 60 s)")
    assert ok


def test_criterion_6_acoustics():
    t0 = time.perf_counter()
    scenes = [ac.sample_scene(seed) for seed in range(10_000)]
    rooms = np.array([s.room for s in scenes])
    t60 = np.array([s.t60 for s in scenes])
    ranges_ok = bool(
        rooms[:, 0].min() >= 2.5 and rooms[:, 0].max() <= 5 and rooms[:, 1].min() >= 3 and rooms[:, 1].max() <= 9
        and rooms[:, 2].min() >= 2.2 and rooms[:, 2].max() <= 3.5 and t60.min() >= 0.2 and t60.max() <= 0.5)
    dist = np.array([np.hypot(*(np.array(s.target_pos[:2]) - s.mic_center[:2])) for s in scenes])
    ranges_ok &= bool(dist.min() >= 0.3 and dist.max() <= 1.0)
    inter = np.array([[np.hypot(*(np.array(p[:2]) - s.mic_center[:2])) for p in s.interferer_pos] for s in scenes])
    ranges_ok &= bool(inter.min() >= 1.0)
    # anechoic direct path
    room, mic = (6.0, 6.0, 3.0), np.array([2.0, 2.0, 1.5])
    rir = ac.image_source_rir(room, mic + [1.715, 0, 0], mic, t60=0.3, absorption=1.0)
    h = rir.taps[0, 0]
    amp_err = abs(h[80] - 1 / (4 * np.pi * 1.715)) / (1 / (4 * np.pi * 1.715))
    direct_ok = int(np.argmax(np.abs(h))) == 80 and rir.direct_delay[0, 0] == 80 and amp_err < 1e-6
    # Schroeder T60 on 20 scenes
    rel = []
    for seed in range(20):
        s = ac.sample_scene(1000 + seed)
        r = ac.image_source_rir(s.room, s.target_pos, s.mics[:1], s.t60)
        rel.append(ac.schroeder_t60(r.taps[0, 0], 16000) / s.t60 - 1)
    rel = np.array(rel)
    t60_ok = bool(np.all(np.abs(rel) <= 0.25))
    elapsed = time.perf_counter() - t0
    ok = ranges_ok and direct_ok and t60_ok and elapsed < 300
    report(6, ok, f"10^4 scenes in ranges: {ranges_ok}; direct path delay 80, amplitude rel err {amp_err:.1e}; "
                  f"T60 rel error in [{rel.min():+.2f}, {rel.max():+.2f}] (±0.25); {elapsed:.0f} s (< 300 s)")
    assert ok


def _overfit_samples():
    corpus = SyntheticCorpus(seed=70, size=12)
    out = []
    for j in range(2):
        scene = ac.sample_scene(700 + j)
        srcs = [corpus.load(corpus.ids[6 * j + i])[:16000] for i in range(6)]
        smp = ac.render_scene(scene, srcs[0], srcs[1:])
        smp.sample_id = f"overfit-{j}"
        out.append(smp)
    return out


def _overfit_run(samples):
    scale = tr.fit_input_scale(samples)
    model = build_model(ModelConfig("FT-JNF", hidden=(16, 8), input_scale=scale), np.random.default_rng(0))
    cfg = tr.TrainConfig(batch_size=2, crop_seconds=1.0, max_epochs=200, patience=10**6, max_steps=200, seed=0)
    return tr.train(model, samples, cfg).step_losses


def test_criterion_7_overfit():
    t0 = time.perf_counter()
    samples = _overfit_samples()
    losses = _overfit_run(samples)
    elapsed = time.perf_counter() - t0
    again = _overfit_run(samples)
    reduction = 1 - losses[-1] / losses[0]
    deterministic = again == losses
    ok = len(losses) == 200 and reduction >= 0.5 and deterministic and elapsed < 300
    report(7, ok, f"loss {losses[0]:.1f} -> {losses[-1]:.1f} after {len(losses)} steps "
                  f"({100 * reduction:.0f}% reduction, >= 50%), deterministic: {deterministic}, "
                  f"{elapsed:.0f} s per run (< 300 s)")
    assert ok


@pytest.mark.slow
def test_criterion_8_desk_trend():
    protocol = DeskProtocol()
    t0 = time.perf_counter()
    per_seed, lines = [], []
    for seed in range(3):
        res = run_desk(seed, protocol)
        checks = trend_checks(res.means)
        per_seed.append(checks)
        lines.append(f"seed {seed}: " + ", ".join(f"{v} {m:+.2f}" for v, m in res.means.items())
                     + f" -> a={checks['a']} b={checks['b']} c={checks['c']}")
        print(lines[-1])
    elapsed = time.perf_counter() - t0
    verdict = majority(per_seed)
    ok = all(verdict.values()) and elapsed < 7200
    report(8, ok, f"majority over 3 seeds: (a) spatial > 0 dB and > PF: {verdict['a']}, (b) FT-JNF > T-JNF: "
                  f"{verdict['b']}, (c) FT-JNF > FT-NSF: {verdict['c']}; {elapsed / 60:.0f} min (< 120 min) | "
                  + " | ".join(lines))
    assert ok


def test_criterion_9_evaluation_harness():
    rng = np.random.default_rng(9)
    x = rng.standard_normal(16000)
    n = rng.standard_normal(16000)
    n -= np.dot(n, x) / np.dot(x, x) * x
    n *= np.sqrt(np.dot(x, x) / 100 / np.dot(n, n))
    ortho = abs(si_sdr(x + n, x) - 20.0)
    base = si_sdr(x + 3 * n, x)
    scale = max(abs(si_sdr(c * (x + 3 * n), x) - base) for c in (1e-3, 0.1, 2.0, 1e3))
    samples = []
    for j in range(5):
        noisy = rng.standard_normal((3, 8000))
        samples.append(ac.RenderedSample(noisy=noisy, target=rng.standard_normal(8000),
                                         noise=rng.standard_normal((3, 8000)), snr_db=0.0, sample_id=str(j)))
    rep = evaluate([PipelineSpec(["identity"])], samples)[0]
    identity_zero = bool(np.all(rep.delta == 0.0))
    ok = identity_zero and ortho < 1e-9 and scale < 1e-9
    report(9, ok, f"identity ΔSI-SDR exactly 0: {identity_zero}; orthogonal construction error {ortho:.1e}; "
                  f"scale invariance error {scale:.1e} (< 1e-9)")
    assert ok
