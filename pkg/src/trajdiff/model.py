"""History encoder and Transformer noise predictor.

Data flow of :meth:`DiffusionNet.denoise` for a batch of noisy futures::

    y_k (B, T, 2) --gated up--> (B, T, D) --+
    f (B, E) --------linear---> (B, 1, D) --+--> + positions --> L x encoder layer
                                                          |
    eps_hat (B, T, 2) <--gated D/2->2 <--gelu-- gated D->D/2

Both gated blocks see the step context ``c = [k, sin k, cos k, f]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import ParamStore, Tensor


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    heads: int = 4
    layers: int = 3
    ff_dim: int = 128
    enc_dim: int = 32
    enc_hidden: int = 64
    T_init: int = 8
    T_pred: int = 12
    # Typical size of the raw step index; only scales its initial weights.
    step_norm: float = 100.0

    def __post_init__(self):
        for name in ("d_model", "heads", "layers", "ff_dim", "enc_dim",
                     "enc_hidden", "T_init", "T_pred"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.T_init < 2:
            raise ValueError("T_init must be at least 2")
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.d_model < 2:
            raise ValueError("d_model must be at least 2")
        if self.step_norm <= 0:
            raise ValueError("step_norm must be positive")

    @property
    def ctx_dim(self) -> int:
        return 3 + self.enc_dim

    @property
    def history_features(self) -> int:
        return 2 * self.T_init + 2 * (self.T_init - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def _dense(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))


def _add_gated(store: ParamStore, prefix: str, rng, d_in: int, d_out: int,
               ctx_dim: int, step_norm: float) -> None:
    store.add(f"{prefix}.W1", _dense(rng, d_in, d_out))
    store.add(f"{prefix}.b1", np.zeros(d_out))
    for w, b in (("W2", "b2"), ("W3", "b3")):
        W = _dense(rng, ctx_dim, d_out)
        W[0] /= step_norm  # raw step index k is O(K), the rest O(1)
        store.add(f"{prefix}.{w}", W)
        store.add(f"{prefix}.{b}", np.zeros(d_out))


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParamStore:
    """Fan-in scaled Gaussian weights, zero biases, unit layer-norm gains."""
    c = config
    store = ParamStore()
    store.add("enc.W1", _dense(rng, c.history_features, c.enc_hidden))
    store.add("enc.b1", np.zeros(c.enc_hidden))
    store.add("enc.W2", _dense(rng, c.enc_hidden, c.enc_dim))
    store.add("enc.b2", np.zeros(c.enc_dim))

    _add_gated(store, "up", rng, 2, c.d_model, c.ctx_dim, c.step_norm)
    store.add("cond.W", _dense(rng, c.enc_dim, c.d_model))
    store.add("cond.b", np.zeros(c.d_model))

    D = c.d_model
    for i in range(c.layers):
        p = f"layer{i}"
        for name in ("q", "k", "v", "o"):
            store.add(f"{p}.attn.W{name}", _dense(rng, D, D))
            store.add(f"{p}.attn.b{name}", np.zeros(D))
        store.add(f"{p}.ln1.g", np.ones(D))
        store.add(f"{p}.ln1.b", np.zeros(D))
        store.add(f"{p}.ff.W1", _dense(rng, D, c.ff_dim))
        store.add(f"{p}.ff.b1", np.zeros(c.ff_dim))
        store.add(f"{p}.ff.W2", _dense(rng, c.ff_dim, D))
        store.add(f"{p}.ff.b2", np.zeros(D))
        store.add(f"{p}.ln2.g", np.ones(D))
        store.add(f"{p}.ln2.b", np.zeros(D))

    half = max(D // 2, 1)
    _add_gated(store, "down1", rng, D, half, c.ctx_dim, c.step_norm)
    _add_gated(store, "down2", rng, half, 2, c.ctx_dim, c.step_norm)
    return store


def positional_embedding(T: int, d: int) -> np.ndarray:
    """Sinusoidal table: even columns sin(t / 10000^(2i/d)), odd columns cos."""
    pos = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d)
    table = np.zeros((T, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d // 2])
    return table


def step_context(k, f) -> Tensor:
    """``c = [k, sin k, cos k, f]`` per batch row."""
    f = ag.as_tensor(f)
    k = np.asarray(k, dtype=np.float64).reshape(-1)
    if f.ndim == 1:
        f = ag.reshape(f, (1, -1))
    if k.size == 1 and f.shape[0] > 1:
        k = np.full(f.shape[0], k[0])
    if k.size != f.shape[0]:
        raise ValueError(f"{k.size} step indices for {f.shape[0]} state embeddings")
    steps = np.stack([k, np.sin(k), np.cos(k)], axis=1)
    return ag.concat([Tensor(steps), f], axis=-1)


def gated_block(h, ctx, params: ParamStore, prefix: str) -> Tensor:
    """``(W1 h + b1) * sigmoid(W2 c + b2) + (W3 c + b3)``.

    ``h`` is ``(B, T, d_in)``; ``ctx`` is ``(B, ctx_dim)`` and is shared by
    every timestep of its row.
    """
    h, ctx = ag.as_tensor(h), ag.as_tensor(ctx)
    if h.ndim != 3 or ctx.ndim != 2 or ctx.shape[0] != h.shape[0]:
        raise ValueError(f"gated_block: incompatible shapes h={h.shape} ctx={ctx.shape}")
    W2 = params[f"{prefix}.W2"]
    if ctx.shape[1] != W2.shape[0]:
        raise ValueError(f"gated_block: context width {ctx.shape[1]} != {W2.shape[0]}")
    B = h.shape[0]
    value = ag.linear(h, params[f"{prefix}.W1"], params[f"{prefix}.b1"])
    gate = ag.sigmoid(ag.linear(ctx, W2, params[f"{prefix}.b2"]))
    shift = ag.linear(ctx, params[f"{prefix}.W3"], params[f"{prefix}.b3"])
    d_out = value.shape[-1]
    return ag.add(ag.mul(value, ag.reshape(gate, (B, 1, d_out))),
                  ag.reshape(shift, (B, 1, d_out)))


def encoder_layer(h: Tensor, params: ParamStore, prefix: str, heads: int) -> Tensor:
    """Post-norm Transformer encoder layer (bidirectional self-attention + GELU MLP)."""
    def proj(x, name):
        return ag.linear(x, params[f"{prefix}.attn.W{name}"], params[f"{prefix}.attn.b{name}"])

    att = ag.softmax_attention(proj(h, "q"), proj(h, "k"), proj(h, "v"), heads)
    h = ag.layer_norm(ag.add(h, proj(att, "o")),
                      params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    ff = ag.gelu(ag.linear(h, params[f"{prefix}.ff.W1"], params[f"{prefix}.ff.b1"]))
    ff = ag.linear(ff, params[f"{prefix}.ff.W2"], params[f"{prefix}.ff.b2"])
    return ag.layer_norm(ag.add(h, ff), params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])


class DiffusionNet:
    """Encoder F_psi plus noise predictor eps_theta sharing one ParamStore."""

    def __init__(self, config: ModelConfig, params: ParamStore | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        if params is None:
            params = init_params(config, rng if rng is not None else np.random.default_rng(0))
        self.params = params
        self._pos = positional_embedding(config.T_pred, config.d_model)

    def history_features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (self.config.T_init, 2):
            raise ValueError(f"history must be (T_init={self.config.T_init}, 2) per window, "
                             f"got {x.shape}")
        vel = np.diff(x, axis=1)
        return np.concatenate([x.reshape(len(x), -1), vel.reshape(len(x), -1)], axis=1)

    def encode_history(self, x) -> Tensor:
        """State embedding ``f`` of shape ``(B, enc_dim)`` from ``(B, T_init, 2)`` histories."""
        p = self.params
        h = ag.tanh(ag.linear(self.history_features(x), p["enc.W1"], p["enc.b1"]))
        return ag.linear(h, p["enc.W2"], p["enc.b2"])

    def denoise(self, yk, k, f) -> Tensor:
        """Noise estimate for ``yk`` at step(s) ``k`` under state embedding ``f``.

        ``yk`` may be a single ``(T_pred, 2)`` path (then ``f`` is ``(enc_dim,)``
        and the result is ``(T_pred, 2)``) or a ``(B, T_pred, 2)`` batch.
        """
        c = self.config
        yk = ag.as_tensor(yk)
        single = yk.ndim == 2
        if single:
            yk = ag.reshape(yk, (1,) + yk.shape)
        if yk.ndim != 3 or yk.shape[1:] != (c.T_pred, 2):
            raise ValueError(f"noisy future must be (T_pred={c.T_pred}, 2), got {yk.shape}")
        k_arr = np.asarray(k)
        if not np.issubdtype(k_arr.dtype, np.integer) or np.any(k_arr < 1):
            raise ValueError(f"step index must be a positive integer, got {k}")
        f = ag.as_tensor(f)
        if f.ndim == 1:
            f = ag.reshape(f, (1, -1))
        if f.shape != (yk.shape[0], c.enc_dim):
            raise ValueError(f"state embedding must be ({yk.shape[0]}, {c.enc_dim}), got {f.shape}")

        p = self.params
        B = yk.shape[0]
        ctx = step_context(k_arr, f)
        h = gated_block(yk, ctx, p, "up")
        cond = ag.reshape(ag.linear(f, p["cond.W"], p["cond.b"]), (B, 1, c.d_model))
        h = ag.add(ag.add(h, cond), self._pos)
        for i in range(c.layers):
            h = encoder_layer(h, p, f"layer{i}", c.heads)
        h = ag.gelu(gated_block(h, ctx, p, "down1"))
        out = gated_block(h, ctx, p, "down2")
        if single:
            out = ag.reshape(out, (c.T_pred, 2))
        return out

    def predict_noise(self, yk, k, x) -> Tensor:
        """End-to-end ``eps_(theta, psi)(y_k, k, x)``."""
        return self.denoise(yk, k, self.encode_history(x))
