import numpy as np
import pytest

from trajdiff.evaluation import (CLOUD_COLUMNS, CURVE_COLUMNS, ade, best_of_n, cloud_steps,
                                 diversity, evaluate, export_step_clouds, fde, min_k, run_chains,
                                 sample, trace_curves, tradeoff_sweep, window_rng)
from trajdiff.model import DiffusionNet, ModelConfig
from trajdiff.schedule import build_schedule

T = 12


def _line(dx=0.0, dy=0.0):
    base = np.stack([np.arange(T, dtype=float), np.zeros(T)], axis=1)
    return base + [dx, dy]


def test_ade_fde_identical_is_zero():
    p = _line()
    assert ade(p, p) == 0.0 and fde(p, p) == 0.0


def test_ade_fde_constant_offset():
    p = _line()
    assert ade(p + [3.0, 4.0], p) == 5.0
    assert fde(p + [3.0, 4.0], p) == 5.0


def test_ade_fde_final_step_offset():
    gt = _line()
    pred = gt.copy()
    pred[-1] += [0.0, 6.0]
    assert ade(pred, gt) == 0.5
    assert fde(pred, gt) == 6.0


def test_ade_against_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(T, 2)), rng.normal(size=(T, 2))
    ref = sum(((a[t, 0] - b[t, 0]) ** 2 + (a[t, 1] - b[t, 1]) ** 2) ** 0.5 for t in range(T)) / T
    assert ade(a, b) == pytest.approx(ref, rel=1e-14)


def test_metric_shape_mismatch():
    with pytest.raises(ValueError):
        ade(np.zeros((T, 2)), np.zeros((T - 1, 2)))


def test_diversity_fixtures():
    p = _line()
    assert diversity(np.stack([p, p, p])) == 0.0
    assert diversity(np.stack([p, p + [0.0, 2.0]])) == 2.0
    # Pairwise distances 1, 2, 1 between offsets 0, 1, 2.
    three = np.stack([p, p + [0.0, 1.0], p + [0.0, 2.0]])
    assert diversity(three) == pytest.approx(4 / 3, rel=1e-15)
    assert diversity(p[None]) == 0.0


def test_diversity_symmetric_and_translation_invariant():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(7, T, 2))
    d = diversity(s)
    assert abs(diversity(s[::-1]) - d) < 1e-12
    assert abs(diversity(s + [100.0, -40.0]) - d) < 1e-12


def test_best_of_n_single_sample_is_ade():
    rng = np.random.default_rng(2)
    s, gt = rng.normal(size=(1, T, 2)), rng.normal(size=(T, 2))
    assert best_of_n(s, gt) == (ade(s[0], gt), fde(s[0], gt))


def test_best_of_n_duplicates_do_not_matter():
    rng = np.random.default_rng(3)
    s, gt = rng.normal(size=(4, T, 2)), rng.normal(size=(T, 2))
    assert best_of_n(np.concatenate([s, s]), gt) == best_of_n(s, gt)


def test_best_of_n_minimizes_each_metric_separately():
    gt = _line()
    near_path = gt + [0.0, 1.0]            # ADE 1, FDE 1
    near_end = gt + [0.0, 3.0]
    near_end[-1] = gt[-1]                  # ADE 33/12, FDE 0
    far = gt + [0.0, 5.0]                  # ADE 5, FDE 5
    a, f = best_of_n(np.stack([far, near_end, near_path]), gt)
    assert a == 1.0 and f == 0.0


def test_min_k_non_increasing():
    rng = np.random.default_rng(4)
    s, gt = rng.normal(size=(20, T, 2)), rng.normal(size=(T, 2))
    values = [min_k(s, gt, k) for k in (1, 3, 5, 20)]
    for (a0, f0), (a1, f1) in zip(values, values[1:]):
        assert a1 <= a0 and f1 <= f0
    assert values[-1] == best_of_n(s, gt)


def test_evaluate_report_keys_and_values():
    rng = np.random.default_rng(5)
    gts = rng.normal(size=(3, T, 2))
    samples = np.repeat(gts[:, None], 20, axis=1)
    d = evaluate(samples, gts).to_dict()
    for key in ("ade", "fde", "min3_ade", "min3_fde", "min5_ade", "min5_fde", "min20_ade"):
        assert d[key] == 0.0
    assert d["diversity"] == 0.0 and d["n_windows"] == 3 and d["n_samples"] == 20


def test_evaluate_averages_windows():
    gts = np.stack([_line(), _line()])
    samples = np.stack([gts[0][None] + [3.0, 4.0], gts[1][None]])
    report = evaluate(samples, gts)
    assert report.ade == 2.5 and report.fde == 2.5


def _oracle_stub(y0, schedule):
    def predict(yk, k):
        ab = schedule.alpha_bar[k - 1]
        return (yk - np.sqrt(ab) * y0) / np.sqrt(schedule.one_minus_alpha_bar[k - 1])
    predict.T_pred = y0.shape[-2]
    return predict


def test_true_noise_chain_contracts_to_target():
    s = build_schedule(100, 1e-4, 0.05)
    y0 = _line(1.0, -2.0) * 0.1
    out = sample(_oracle_stub(y0, s), np.zeros((8, 2)), s, 6, np.random.default_rng(0),
                 keep_trace=True)
    assert np.max(np.abs(out.samples - y0)) < 1e-10
    assert out.trace.shape == (101, 6, T, 2)
    assert np.array_equal(out.trace[-1], out.samples)


def test_zero_predictor_keeps_finite_and_shrinks_to_prior():
    s = build_schedule(50, 1e-4, 0.05)
    stub = lambda yk, k: np.zeros_like(yk)
    out = sample(stub, np.zeros((8, 2)), s, 4, np.random.default_rng(1))
    assert np.all(np.isfinite(out.samples))


def _tiny_net():
    cfg = ModelConfig(d_model=8, heads=2, layers=1, ff_dim=16, enc_dim=4, enc_hidden=8)
    return DiffusionNet(cfg, rng=np.random.default_rng(0))


def test_sampling_reproducible_and_chunk_independent():
    s = build_schedule(10)
    net = _tiny_net()
    X = np.random.default_rng(2).normal(size=(5, 8, 2))
    a, ta = run_chains(net, X, s, 3, [window_rng(7, w) for w in range(5)], keep_trace=True)
    b, _ = run_chains(net, X, s, 3, [window_rng(7, w) for w in range(5)], chunk=2)
    assert a.shape == (5, 3, T, 2) and ta.shape == (11, 5, 3, T, 2)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)
    c, _ = run_chains(net, X, s, 3, [window_rng(8, w) for w in range(5)])
    assert not np.allclose(a, c)
    # A window sampled alone reproduces its row of the batch.
    single = sample(net, X[3], s, 3, window_rng(7, 3)).samples
    np.testing.assert_allclose(single, a[3], rtol=1e-12, atol=1e-13)


def test_run_chains_argument_checks():
    s = build_schedule(5)
    with pytest.raises(ValueError):
        run_chains(_tiny_net(), np.zeros((2, 8, 2)), s, 3, [window_rng(0, 0)])
    with pytest.raises(ValueError):
        run_chains(_tiny_net(), np.zeros((1, 8, 2)), s, 0, [window_rng(0, 0)])


def test_trace_curves_and_sweep():
    s = build_schedule(10)
    net = _tiny_net()
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(2, 8, 2)), rng.normal(size=(2, T, 2))
    rows, trace = tradeoff_sweep(net, X, Y, s, 5, seed=1, scale=2.0)
    assert len(rows) == 11 and [r["step"] for r in rows] == list(range(11))
    assert set(rows[0]) == set(CURVE_COLUMNS)
    ref = evaluate(trace[-1], Y * 2.0)
    assert rows[-1]["ade"] == pytest.approx(ref.ade, rel=1e-14)
    assert rows[-1]["diversity"] == pytest.approx(ref.diversity, rel=1e-14)
    assert rows[-1]["min3"] == pytest.approx(ref.min_k[3][0], rel=1e-14)
    assert trace_curves(trace, Y * 2.0) == rows


def test_cloud_steps():
    assert cloud_steps(100, 10) == list(range(0, 101, 10))
    assert cloud_steps(100, 100) == [0, 100]
    assert cloud_steps(25, 10) == [0, 10, 20, 25]
    with pytest.raises(ValueError):
        cloud_steps(10, 0)


@pytest.mark.parametrize("stride,snapshots", [(100, 2), (10, 11)])
def test_export_step_clouds_counts(stride, snapshots):
    trace = np.random.default_rng(4).normal(size=(101, 3, T, 2))
    rows = export_step_clouds(trace, stride)
    assert len(CLOUD_COLUMNS) == 5
    assert len(rows) == snapshots * 3 * T
    assert len({r[0] for r in rows}) == snapshots
    step, n, t, x, y = rows[-1]
    assert (step, n, t) == (100, 2, T - 1) and (x, y) == tuple(trace[100, 2, T - 1])
