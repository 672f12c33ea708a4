"""Estimator wrapper so the diffusion forecaster composes with sklearn tooling."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Checkpoint
from .evaluation import evaluate, run_chains, window_rng
from .model import DiffusionNet, ModelConfig, init_params
from .schedule import build_schedule
from .training import TrainConfig, rng_streams, train_loop


def check_paths(A, length: int | None = None, name: str = "X") -> np.ndarray:
    """Validate a stack of 2-D paths ``(n, T, 2)``; a single ``(T, 2)`` path is promoted."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 2:
        A = A[None]
    if A.ndim != 3 or A.shape[-1] != 2:
        raise ValueError(f"{name} must have shape (n, T, 2), got {A.shape}")
    if length is not None and A.shape[1] != length:
        raise ValueError(f"{name} must have {length} timesteps, got {A.shape[1]}")
    flat = check_array(A.reshape(len(A), -1), dtype=np.float64, ensure_all_finite=True,
                       input_name=name)
    return flat.reshape(A.shape)


class MotionDiffusion(BaseEstimator):
    """Conditional trajectory diffusion forecaster.

    ``fit(X, Y)`` learns futures ``Y`` (n, T_pred, 2) given histories ``X``
    (n, T_init, 2). Inputs may be in any frame: every window is translated so
    its last observed point is the origin and divided by ``coord_scale``;
    outputs are mapped back to the caller's frame.

    ``predict`` returns ``n_samples`` stochastic futures per window with shape
    (n, n_samples, T_pred, 2). ``score`` is the negative best-of-N ADE.
    """

    def __init__(self, n_steps=100, beta_min=1e-4, beta_max=0.05, d_model=64, heads=4,
                 layers=3, ff_dim=128, enc_dim=32, enc_hidden=64, learning_rate=1e-3,
                 batch_size=32, max_steps=1000, grad_clip=0.0, n_samples=20,
                 coord_scale=1.0, random_state=0):
        self.n_steps = n_steps
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.d_model = d_model
        self.heads = heads
        self.layers = layers
        self.ff_dim = ff_dim
        self.enc_dim = enc_dim
        self.enc_hidden = enc_hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.grad_clip = grad_clip
        self.n_samples = n_samples
        self.coord_scale = coord_scale
        self.random_state = random_state

    def _model_config(self, T_init: int, T_pred: int) -> ModelConfig:
        return ModelConfig(d_model=self.d_model, heads=self.heads, layers=self.layers,
                           ff_dim=self.ff_dim, enc_dim=self.enc_dim,
                           enc_hidden=self.enc_hidden, T_init=T_init, T_pred=T_pred,
                           step_norm=float(self.n_steps))

    def _train_config(self, checkpoint_every: int = 0) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           steps=self.max_steps, seed=self.random_state,
                           grad_clip=self.grad_clip, checkpoint_every=checkpoint_every)

    def _to_net(self, X, Y=None):
        origin = X[:, -1:, :]
        Xn = (X - origin) / self.coord_scale
        Yn = None if Y is None else (Y - origin) / self.coord_scale
        return Xn, Yn, origin

    def initialize(self, T_init: int = 8, T_pred: int = 12) -> "MotionDiffusion":
        """Set up an untrained model (what ``fit`` starts from)."""
        if self.coord_scale <= 0:
            raise ValueError("coord_scale must be positive")
        self.schedule_ = build_schedule(self.n_steps, self.beta_min, self.beta_max)
        config = self._model_config(T_init, T_pred)
        streams = rng_streams(self.random_state)
        self.net_ = DiffusionNet(config, init_params(config, streams["init"]))
        self.n_iter_ = 0
        self.loss_curve_ = []
        self.log_rows_ = []
        return self

    def fit(self, X, Y, checkpoint_sink=None, checkpoint_every=0):
        """Train from scratch. ``checkpoint_sink(step, self)`` runs every
        ``checkpoint_every`` steps (0: only at the end)."""
        X = check_paths(X, name="X")
        Y = check_paths(Y, name="Y")
        if len(X) != len(Y):
            raise ValueError(f"X has {len(X)} windows but Y has {len(Y)}")
        self.initialize(X.shape[1], Y.shape[1])
        Xn, Yn, _ = self._to_net(X, Y)
        sink = None
        if checkpoint_sink is not None:
            def sink(step, _params):
                self.n_iter_ = step
                checkpoint_sink(step, self)
        result = train_loop(self.net_, self._train_config(checkpoint_every), (Xn, Yn),
                            self.schedule_, sink, rng_streams(self.random_state))
        self.n_iter_ = self.max_steps
        self.loss_curve_ = result.losses
        self.log_rows_ = result.log_rows
        return self

    def sample(self, X, n_samples=None, seed=None, keep_trace=False, window_offset=0):
        """Futures in the caller's frame; with ``keep_trace`` also returns the
        per-step chain states (K + 1, n, n_samples, T_pred, 2)."""
        check_is_fitted(self, "net_")
        X = check_paths(X, self.net_.config.T_init, name="X")
        n = self.n_samples if n_samples is None else n_samples
        seed = self.random_state if seed is None else seed
        Xn, _, origin = self._to_net(X)
        rngs = [window_rng(seed, window_offset + w) for w in range(len(X))]
        samples, trace = run_chains(self.net_, Xn, self.schedule_, n, rngs, keep_trace)
        samples = samples * self.coord_scale + origin[:, None]
        if keep_trace:
            return samples, trace * self.coord_scale + origin[None, :, None]
        return samples

    def predict(self, X):
        return self.sample(X)

    def score(self, X, Y):
        Y = check_paths(Y, self.net_.config.T_pred if hasattr(self, "net_") else None, name="Y")
        return -evaluate(self.sample(X), Y).ade

    # -- checkpoints ---------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "net_")
        return Checkpoint(model=self.net_.config.to_dict(), schedule=self.schedule_.keys(),
                          params=self.net_.params.state_dict(), seed=int(self.random_state),
                          step=int(self.n_iter_), extra={"estimator": self.get_params()})

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "MotionDiffusion":
        params = dict(ckpt.extra.get("estimator", {}))
        est = cls(**params) if params else cls()
        sched = ckpt.schedule
        est.set_params(n_steps=sched["K"], beta_min=sched["beta_min"], beta_max=sched["beta_max"])
        config = ModelConfig(**ckpt.model)
        est.schedule_ = build_schedule(sched["K"], sched["beta_min"], sched["beta_max"])
        store = init_params(config, np.random.default_rng(0))
        store.load_state_dict(ckpt.params)
        est.net_ = DiffusionNet(config, store)
        est.n_iter_ = ckpt.step
        est.loss_curve_ = []
        est.log_rows_ = []
        return est
