"""Recurrent VAE forward and backward passes, written directly in NumPy.

Architecture: a stack of GRU layers reads the 64x89 roll; the top layer's
final hidden state feeds two affine heads (posterior mean and log-variance).
The latent code is tiled across 64 steps into a second GRU stack whose
per-step states drive six two-layer dense heads: softmax melody/bass pitch,
logistic melody/bass onsets, and linear tensile-strain/cloud-diameter
predictions.

GRU gates follow the classic formulation: update u, reset r, candidate
c = tanh(W x + U (r * h) + b), new state h' = u * h + (1 - u) * c.  Packed
weight matrices hold the three gates side by side in (update, reset,
candidate) order.  Every backward pass here is hand-derived and verified
against central finite differences (see ``gradcheck``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError, NumericFailureError
from ..pianoroll import N_FEATURES, N_STEPS
from .config import ModelConfig

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
PROB_FLOOR = 1e-10

# (name, output width, activation); softmax heads emit per-step rows.
HEAD_SPECS = (
    ("melody_pitch", 74, "softmax"),
    ("melody_onset", 1, "sigmoid"),
    ("bass_pitch", 13, "softmax"),
    ("bass_onset", 1, "sigmoid"),
    ("tensile", 1, "linear"),
    ("diameter", 1, "linear"),
)


@dataclass
class Posterior:
    """Diagonal-Gaussian posterior; arrays are (latent,) or (batch, latent)."""

    mu: np.ndarray
    logvar: np.ndarray


@dataclass
class DecoderOutput:
    """The six head outputs; leading batch axis present iff the input had one."""

    melody_pitch: np.ndarray   # (..., 64, 74) rows sum to 1
    melody_onset: np.ndarray   # (..., 64) in (0, 1)
    bass_pitch: np.ndarray     # (..., 64, 13) rows sum to 1
    bass_onset: np.ndarray     # (..., 64) in (0, 1)
    tensile: np.ndarray        # (..., 64)
    diameter: np.ndarray       # (..., 64)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def _orthogonal(rng, rows, cols, dtype):
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a if rows >= cols else a.T)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q[:rows, :cols].astype(dtype)


def _glorot(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_params(cfg: ModelConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """Fresh parameter tensors; recurrent kernels start orthogonal per gate."""
    h, latent = cfg.hidden, cfg.latent_dim
    params: dict[str, np.ndarray] = {}

    def gru(prefix: str, input_dim: int) -> None:
        params[f"{prefix}.w"] = _glorot(rng, input_dim, 3 * h, dtype)
        params[f"{prefix}.u"] = np.concatenate(
            [_orthogonal(rng, h, h, dtype) for _ in range(3)], axis=1)
        params[f"{prefix}.b"] = np.zeros(3 * h, dtype=dtype)

    def dense(prefix: str, fan_in: int, fan_out: int) -> None:
        params[f"{prefix}.w"] = _glorot(rng, fan_in, fan_out, dtype)
        params[f"{prefix}.b"] = np.zeros(fan_out, dtype=dtype)

    for i in range(cfg.gru_layers):
        gru(f"enc.gru{i}", N_FEATURES if i == 0 else h)
    dense("enc.mu", h, latent)
    dense("enc.logvar", h, latent)
    for i in range(cfg.gru_layers):
        gru(f"dec.gru{i}", latent if i == 0 else h)
    for name, width, _ in HEAD_SPECS:
        dense(f"dec.head.{name}.l1", h, h)
        dense(f"dec.head.{name}.l2", h, width)
    return params


def _check_finite(array: np.ndarray, context: str) -> None:
    if not np.isfinite(array).all():
        raise NumericFailureError("non-finite activations", context)


def gru_layer_forward(x: np.ndarray, w: np.ndarray, u: np.ndarray,
                      b: np.ndarray) -> tuple[np.ndarray, dict]:
    """Run one GRU layer over (batch, steps, input); returns states + cache."""
    batch, steps, _ = x.shape
    h_dim = u.shape[0]
    gates_x = (x.reshape(batch * steps, -1) @ w).reshape(batch, steps, 3 * h_dim)
    h = np.zeros((batch, h_dim), dtype=x.dtype)
    cache = {
        "x": x, "w": w, "u": u,
        "h_prev": np.empty((batch, steps, h_dim), dtype=x.dtype),
        "update": np.empty((batch, steps, h_dim), dtype=x.dtype),
        "reset": np.empty((batch, steps, h_dim), dtype=x.dtype),
        "cand": np.empty((batch, steps, h_dim), dtype=x.dtype),
        "reset_h": np.empty((batch, steps, h_dim), dtype=x.dtype),
    }
    states = np.empty((batch, steps, h_dim), dtype=x.dtype)
    for t in range(steps):
        g = gates_x[:, t]
        update = _sigmoid(g[:, :h_dim] + h @ u[:, :h_dim] + b[:h_dim])
        reset = _sigmoid(g[:, h_dim:2 * h_dim] + h @ u[:, h_dim:2 * h_dim]
                         + b[h_dim:2 * h_dim])
        reset_h = reset * h
        cand = np.tanh(g[:, 2 * h_dim:] + reset_h @ u[:, 2 * h_dim:]
                       + b[2 * h_dim:])
        cache["h_prev"][:, t] = h
        cache["update"][:, t] = update
        cache["reset"][:, t] = reset
        cache["cand"][:, t] = cand
        cache["reset_h"][:, t] = reset_h
        h = update * h + (1.0 - update) * cand
        states[:, t] = h
    return states, cache


def gru_layer_backward(d_states: np.ndarray, d_last: np.ndarray | None,
                       cache: dict) -> tuple[np.ndarray, np.ndarray,
                                             np.ndarray, np.ndarray]:
    """Backpropagate through one GRU layer.

    ``d_states`` carries gradients on every per-step output; ``d_last`` an
    optional extra gradient on the final state.  Returns (d_input, dw, du, db).
    """
    x, w, u = cache["x"], cache["w"], cache["u"]
    batch, steps, h_dim = cache["h_prev"].shape
    d_gates = np.empty((batch, steps, 3 * h_dim), dtype=x.dtype)
    dh = np.zeros((batch, h_dim), dtype=x.dtype) if d_last is None else d_last.copy()
    u_upd, u_rst, u_cand = u[:, :h_dim], u[:, h_dim:2 * h_dim], u[:, 2 * h_dim:]
    for t in range(steps - 1, -1, -1):
        dh = dh + d_states[:, t]
        h_prev = cache["h_prev"][:, t]
        update = cache["update"][:, t]
        reset = cache["reset"][:, t]
        cand = cache["cand"][:, t]
        d_update = dh * (h_prev - cand)
        d_cand = dh * (1.0 - update)
        dh_prev = dh * update
        d_pre_cand = d_cand * (1.0 - cand * cand)
        d_reset_h = d_pre_cand @ u_cand.T
        d_reset = d_reset_h * h_prev
        dh_prev = dh_prev + d_reset_h * reset
        d_pre_update = d_update * update * (1.0 - update)
        d_pre_reset = d_reset * reset * (1.0 - reset)
        dh_prev = dh_prev + d_pre_update @ u_upd.T + d_pre_reset @ u_rst.T
        d_gates[:, t, :h_dim] = d_pre_update
        d_gates[:, t, h_dim:2 * h_dim] = d_pre_reset
        d_gates[:, t, 2 * h_dim:] = d_pre_cand
        dh = dh_prev

    flat_gates = d_gates.reshape(batch * steps, 3 * h_dim)
    flat_x = x.reshape(batch * steps, -1)
    flat_h_prev = cache["h_prev"].reshape(batch * steps, h_dim)
    flat_reset_h = cache["reset_h"].reshape(batch * steps, h_dim)
    dw = flat_x.T @ flat_gates
    du = np.empty_like(u)
    du[:, :2 * h_dim] = flat_h_prev.T @ flat_gates[:, :2 * h_dim]
    du[:, 2 * h_dim:] = flat_reset_h.T @ flat_gates[:, 2 * h_dim:]
    db = flat_gates.sum(axis=0)
    d_input = (flat_gates @ w.T).reshape(x.shape)
    return d_input, dw, du, db


def encoder_forward(params: dict, cfg: ModelConfig,
                    x: np.ndarray) -> tuple[Posterior, dict]:
    """Roll batch (batch, 64, 89) -> posterior; cache for backward."""
    h_seq = x
    layer_caches = []
    for i in range(cfg.gru_layers):
        h_seq, cache = gru_layer_forward(
            h_seq, params[f"enc.gru{i}.w"], params[f"enc.gru{i}.u"],
            params[f"enc.gru{i}.b"])
        _check_finite(h_seq, f"encoder gru{i}")
        layer_caches.append(cache)
    h_last = h_seq[:, -1, :]
    mu = h_last @ params["enc.mu.w"] + params["enc.mu.b"]
    logvar_raw = h_last @ params["enc.logvar.w"] + params["enc.logvar.b"]
    logvar = np.clip(logvar_raw, LOGVAR_MIN, LOGVAR_MAX)
    _check_finite(mu, "encoder mu head")
    cache = {
        "layers": layer_caches,
        "h_last": h_last,
        "clamp_mask": ((logvar_raw > LOGVAR_MIN) & (logvar_raw < LOGVAR_MAX)
                       ).astype(x.dtype),
    }
    return Posterior(mu=mu, logvar=logvar), cache


def encoder_backward(params: dict, cfg: ModelConfig, cache: dict,
                     d_mu: np.ndarray, d_logvar: np.ndarray,
                     grads: dict) -> None:
    d_logvar = d_logvar * cache["clamp_mask"]
    h_last = cache["h_last"]
    grads["enc.mu.w"] = h_last.T @ d_mu
    grads["enc.mu.b"] = d_mu.sum(axis=0)
    grads["enc.logvar.w"] = h_last.T @ d_logvar
    grads["enc.logvar.b"] = d_logvar.sum(axis=0)
    d_last = d_mu @ params["enc.mu.w"].T + d_logvar @ params["enc.logvar.w"].T
    batch, steps, h_dim = cache["layers"][-1]["h_prev"].shape
    d_seq = np.zeros((batch, steps, h_dim), dtype=d_last.dtype)
    for i in range(cfg.gru_layers - 1, -1, -1):
        d_seq, dw, du, db = gru_layer_backward(
            d_seq, d_last if i == cfg.gru_layers - 1 else None,
            cache["layers"][i])
        grads[f"enc.gru{i}.w"] = dw
        grads[f"enc.gru{i}.u"] = du
        grads[f"enc.gru{i}.b"] = db


def reparameterize(posterior: Posterior, noise: np.ndarray) -> np.ndarray:
    """Draw z = mu + exp(logvar / 2) * noise."""
    return posterior.mu + np.exp(0.5 * posterior.logvar) * noise


def decoder_forward(params: dict, cfg: ModelConfig,
                    z: np.ndarray) -> tuple[DecoderOutput, dict]:
    """Latent batch (batch, latent) -> six heads; cache for backward."""
    batch = z.shape[0]
    tiled = np.broadcast_to(z[:, None, :], (batch, N_STEPS, z.shape[1]))
    tiled = np.ascontiguousarray(tiled)
    h_seq = tiled
    layer_caches = []
    for i in range(cfg.gru_layers):
        h_seq, cache = gru_layer_forward(
            h_seq, params[f"dec.gru{i}.w"], params[f"dec.gru{i}.u"],
            params[f"dec.gru{i}.b"])
        _check_finite(h_seq, f"decoder gru{i}")
        layer_caches.append(cache)
    flat_h = h_seq.reshape(batch * N_STEPS, -1)

    outputs = {}
    head_caches = {}
    for name, width, activation in HEAD_SPECS:
        w1 = params[f"dec.head.{name}.l1.w"]
        b1 = params[f"dec.head.{name}.l1.b"]
        w2 = params[f"dec.head.{name}.l2.w"]
        b2 = params[f"dec.head.{name}.l2.b"]
        hidden = np.tanh(flat_h @ w1 + b1)
        logits = hidden @ w2 + b2
        if activation == "softmax":
            value = _softmax(logits).reshape(batch, N_STEPS, width)
        elif activation == "sigmoid":
            value = _sigmoid(logits).reshape(batch, N_STEPS)
        else:
            value = logits.reshape(batch, N_STEPS)
        _check_finite(value, f"decoder head {name}")
        outputs[name] = value
        head_caches[name] = hidden
    cache = {"layers": layer_caches, "flat_h": flat_h, "heads": head_caches,
             "latent_dim": z.shape[1]}
    return DecoderOutput(**outputs), cache


def decoder_backward(params: dict, cfg: ModelConfig, cache: dict,
                     d_logits: dict[str, np.ndarray],
                     grads: dict) -> np.ndarray:
    """Head logit gradients -> gradient on z (batch, latent)."""
    flat_h = cache["flat_h"]
    d_flat_h = np.zeros_like(flat_h)
    for name, width, _ in HEAD_SPECS:
        dl = d_logits[name].reshape(flat_h.shape[0], width)
        hidden = cache["heads"][name]
        w1 = params[f"dec.head.{name}.l1.w"]
        w2 = params[f"dec.head.{name}.l2.w"]
        grads[f"dec.head.{name}.l2.w"] = hidden.T @ dl
        grads[f"dec.head.{name}.l2.b"] = dl.sum(axis=0)
        d_hidden = (dl @ w2.T) * (1.0 - hidden * hidden)
        grads[f"dec.head.{name}.l1.w"] = flat_h.T @ d_hidden
        grads[f"dec.head.{name}.l1.b"] = d_hidden.sum(axis=0)
        d_flat_h += d_hidden @ w1.T

    batch = d_logits["melody_pitch"].shape[0]
    d_seq = d_flat_h.reshape(batch, N_STEPS, -1)
    for i in range(cfg.gru_layers - 1, -1, -1):
        d_seq, dw, du, db = gru_layer_backward(d_seq, None, cache["layers"][i])
        grads[f"dec.gru{i}.w"] = dw
        grads[f"dec.gru{i}.u"] = du
        grads[f"dec.gru{i}.b"] = db
    return d_seq.sum(axis=1)


def _as_batch(roll: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(roll)
    if arr.shape == (N_STEPS, N_FEATURES):
        return arr[None, ...], True
    if arr.ndim == 3 and arr.shape[1:] == (N_STEPS, N_FEATURES):
        return arr, False
    raise InvalidInputError(
        f"expected a ({N_STEPS}, {N_FEATURES}) roll or batch, got {arr.shape}")


class TensionVae:
    """Config + parameters with convenience entry points.

    ``encode``/``decode`` accept single examples or batches and mirror the
    shape on output.  All methods are pure with respect to the parameters.
    """

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int | None = None) -> "TensionVae":
        rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
        return cls(cfg, init_params(cfg, rng))

    @property
    def dtype(self):
        return self.params["enc.mu.w"].dtype

    def encode(self, roll: np.ndarray) -> Posterior:
        batch, squeeze = _as_batch(roll)
        posterior, _ = encoder_forward(self.params, self.cfg,
                                       batch.astype(self.dtype))
        if squeeze:
            return Posterior(mu=posterior.mu[0], logvar=posterior.logvar[0])
        return posterior

    def decode(self, z: np.ndarray) -> DecoderOutput:
        z = np.asarray(z, dtype=self.dtype)
        squeeze = z.ndim == 1
        if squeeze:
            z = z[None, :]
        if z.shape[1] != self.cfg.latent_dim:
            raise InvalidInputError(
                f"latent size {z.shape[1]} does not match model "
                f"latent_dim {self.cfg.latent_dim}")
        out, _ = decoder_forward(self.params, self.cfg, z)
        if squeeze:
            return DecoderOutput(*(getattr(out, f)[0] for f in (
                "melody_pitch", "melody_onset", "bass_pitch", "bass_onset",
                "tensile", "diameter")))
        return out


def sample_latent(n: int, latent_dim: int, rng_seed: int) -> np.ndarray:
    """Seeded i.i.d. standard-normal latent codes, shape (n, latent_dim)."""
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(rng_seed)
    return rng.standard_normal((n, latent_dim))
