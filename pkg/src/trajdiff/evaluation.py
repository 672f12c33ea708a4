"""Reverse-chain sampling and multi-modal forecasting metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .diffusion import reverse_step
from .schedule import NoiseSchedule

MIN_K = (3, 5, 20)


@dataclass
class SampleSet:
    """``samples`` is (N, T_pred, 2); ``trace`` when kept is (K + 1, N, T_pred, 2).

    ``trace[s]`` is the chain state after ``s`` completed reverse steps, so
    ``trace[0]`` is the initial Gaussian draw and ``trace[K]`` equals ``samples``.
    """

    samples: np.ndarray
    trace: np.ndarray | None = None
    window_id: int | str = 0


def window_rng(seed: int, window: int) -> np.random.Generator:
    """Sampling stream of one window; independent of how windows are batched."""
    return np.random.default_rng([int(seed), 4, int(window)])


def _predict_eps(net, yk: np.ndarray, k: int, f) -> np.ndarray:
    if hasattr(net, "denoise"):
        return net.denoise(yk, np.full(len(yk), k), f).data
    return np.asarray(net(yk, k))


def run_chains(net, X, schedule: NoiseSchedule, n_samples: int, rngs, keep_trace: bool = False,
               chunk: int = 64):
    """Ancestral sampling for a batch of histories.

    ``X`` is (W, T_init, 2) and ``rngs`` holds one generator per window. Each
    window draws ``y_K`` then one ``z`` per step ``k = K..2`` from its own
    generator, so results do not depend on ``chunk``.

    ``net`` is either a :class:`~trajdiff.model.DiffusionNet` or a callable
    ``net(yk, k)`` standing in for the noise predictor on flattened chains.
    Returns ``(samples, trace)`` with shapes (W, N, T, 2) and (K + 1, W, N, T, 2).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    X = np.asarray(X, dtype=np.float64)
    W = len(X)
    if len(rngs) != W:
        raise ValueError(f"{len(rngs)} generators for {W} windows")
    T = net.config.T_pred if hasattr(net, "config") else getattr(net, "T_pred", 12)
    K = schedule.K
    samples = np.empty((W, n_samples, T, 2))
    trace = np.empty((K + 1, W, n_samples, T, 2)) if keep_trace else None
    with ag.no_grad():
        for lo in range(0, W, chunk):
            hi = min(lo + chunk, W)
            f = None
            if hasattr(net, "encode_history"):
                f = net.encode_history(X[lo:hi]).data
                f = np.repeat(f, n_samples, axis=0)
            y = np.stack([rngs[w].standard_normal((n_samples, T, 2)) for w in range(lo, hi)])
            if keep_trace:
                trace[0, lo:hi] = y
            y = y.reshape(-1, T, 2)
            for done, k in enumerate(range(K, 0, -1), start=1):
                if k > 1:
                    z = np.concatenate([rngs[w].standard_normal((n_samples, T, 2))
                                        for w in range(lo, hi)])
                else:
                    z = np.zeros_like(y)
                eps_hat = _predict_eps(net, y, k, f)
                y = reverse_step(schedule, y, k, eps_hat, z)
                if keep_trace:
                    trace[done, lo:hi] = y.reshape(hi - lo, n_samples, T, 2)
            samples[lo:hi] = y.reshape(hi - lo, n_samples, T, 2)
    return samples, trace


def sample(net, x, schedule: NoiseSchedule, n_samples: int, rng: np.random.Generator,
           keep_trace: bool = False, window_id: int | str = 0) -> SampleSet:
    """Draw ``n_samples`` futures for one observed path ``x`` (T_init, 2)."""
    x = np.asarray(x, dtype=np.float64)
    samples, trace = run_chains(net, x[None], schedule, n_samples, [rng], keep_trace)
    return SampleSet(samples[0], None if trace is None else trace[:, 0], window_id)


# ---------------------------------------------------------------------------
# metrics


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape[-2:] != gt.shape[-2:] or pred.shape[-1] != 2:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} do not align")
    return pred, gt


def ade(pred, gt):
    """Mean Euclidean displacement over timesteps; broadcasts over leading axes."""
    pred, gt = _check_pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1).mean(axis=-1)


def fde(pred, gt):
    """Euclidean displacement at the final timestep."""
    pred, gt = _check_pair(pred, gt)
    return np.linalg.norm(pred[..., -1, :] - gt[..., -1, :], axis=-1)


def best_of_n(samples, gt) -> tuple[float, float]:
    """Minimum ADE and minimum FDE over samples, each minimized independently."""
    samples = getattr(samples, "samples", samples)
    samples, gt = _check_pair(samples, gt)
    if samples.ndim != 3:
        raise ValueError(f"expected (N, T, 2) samples, got {samples.shape}")
    return float(ade(samples, gt).min()), float(fde(samples, gt).min())


def min_k(samples, gt, k: int) -> tuple[float, float]:
    """Best-of over the first ``k`` samples (nested subsets, so non-increasing in k)."""
    samples = getattr(samples, "samples", samples)
    if k < 1:
        raise ValueError("k must be at least 1")
    return best_of_n(np.asarray(samples)[:k], gt)


def diversity(samples) -> float:
    """Mean over unordered sample pairs of their per-timestep-averaged distance."""
    samples = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    if samples.ndim != 3 or samples.shape[-1] != 2:
        raise ValueError(f"expected (N, T, 2) samples, got {samples.shape}")
    n = len(samples)
    if n < 2:
        return 0.0
    i, j = np.triu_indices(n, k=1)
    return float(np.linalg.norm(samples[i] - samples[j], axis=-1).mean())


def _batch_metrics(samples: np.ndarray, gts: np.ndarray) -> dict[str, np.ndarray]:
    """Per-window metrics for samples (W, N, T, 2) against gts (W, T, 2)."""
    a = ade(samples, gts[:, None])
    f = fde(samples, gts[:, None])
    n = samples.shape[1]
    out = {"ade": a.min(axis=1), "fde": f.min(axis=1)}
    for k in MIN_K:
        kk = min(k, n)
        out[f"min{k}_ade"] = a[:, :kk].min(axis=1)
        out[f"min{k}_fde"] = f[:, :kk].min(axis=1)
    if n > 1:
        i, j = np.triu_indices(n, k=1)
        out["diversity"] = np.linalg.norm(samples[:, i] - samples[:, j], axis=-1).mean(axis=(1, 2))
    else:
        out["diversity"] = np.zeros(len(samples))
    return out


@dataclass
class MetricReport:
    ade: float
    fde: float
    min_k: dict[int, tuple[float, float]]
    diversity: float
    n_windows: int
    n_samples: int
    curves: list[dict] | None = field(default=None)

    def to_dict(self) -> dict:
        out = {"ade": self.ade, "fde": self.fde, "diversity": self.diversity,
               "n_windows": self.n_windows, "n_samples": self.n_samples}
        for k, (a, f) in sorted(self.min_k.items()):
            out[f"min{k}_ade"] = a
            out[f"min{k}_fde"] = f
        if self.curves is not None:
            out["curves"] = self.curves
        return out


def evaluate(samples, gts) -> MetricReport:
    """Average best-of-N, min-k and diversity over windows.

    ``samples`` is (W, N, T, 2), ``gts`` is (W, T, 2), both in the same units.
    """
    samples = np.asarray(samples, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if samples.ndim != 4 or gts.shape != (samples.shape[0],) + samples.shape[2:]:
        raise ValueError(f"samples {samples.shape} and ground truth {gts.shape} do not align")
    m = {key: float(v.mean()) for key, v in _batch_metrics(samples, gts).items()}
    n = samples.shape[1]
    table = {k: (m[f"min{k}_ade"], m[f"min{k}_fde"]) for k in MIN_K if k <= n}
    return MetricReport(m["ade"], m["fde"], table, m["diversity"], len(samples), n)


CURVE_COLUMNS = ("step", "ade", "fde", "min3", "min5", "diversity")


def trace_curves(trace, gts) -> list[dict]:
    """One row per reverse step of a traced run.

    ``trace`` is (K + 1, W, N, T, 2); row ``s`` evaluates the state after ``s``
    completed reverse steps, averaged over windows.
    """
    trace = np.asarray(trace, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    rows = []
    for step, state in enumerate(trace):
        m = _batch_metrics(state, gts)
        rows.append({"step": step, "ade": float(m["ade"].mean()), "fde": float(m["fde"].mean()),
                     "min3": float(m["min3_ade"].mean()), "min5": float(m["min5_ade"].mean()),
                     "diversity": float(m["diversity"].mean())})
    return rows


def tradeoff_sweep(net, X, Y, schedule: NoiseSchedule, n_samples: int, seed: int,
                   scale: float = 1.0):
    """Sample every window with a full trace and tabulate metrics per reverse step.

    ``X``/``Y`` are normalized histories and futures in network units; ``scale``
    converts distances back to scene units. Returns ``(rows, trace)``.
    """
    rngs = [window_rng(seed, w) for w in range(len(X))]
    _, trace = run_chains(net, X, schedule, n_samples, rngs, keep_trace=True)
    trace = trace * scale
    return trace_curves(trace, np.asarray(Y) * scale), trace


CLOUD_COLUMNS = ("step", "sample", "t", "x", "y")


def cloud_steps(K: int, stride: int) -> list[int]:
    if stride < 1:
        raise ValueError("stride must be positive")
    steps = list(range(0, K + 1, stride))
    if steps[-1] != K:
        steps.append(K)
    return steps


def export_step_clouds(trace, stride: int = 10) -> list[tuple]:
    """Flatten a (K + 1, N, T, 2) trace into ``(step, sample, t, x, y)`` rows every ``stride`` steps."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 4:
        raise ValueError(f"expected (K + 1, N, T, 2) trace, got {trace.shape}")
    rows = []
    for step in cloud_steps(len(trace) - 1, stride):
        for n, path in enumerate(trace[step]):
            for t, (px, py) in enumerate(path):
                rows.append((step, n, t, float(px), float(py)))
    return rows
