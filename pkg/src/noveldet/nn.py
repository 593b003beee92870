"""Neural building blocks: dense layers, an LSTM cell, and diagonal-Gaussian
probability primitives (log-density, KL divergence, reparameterized sampling).

All distributions are diagonal Gaussians parameterized by (mean, log-variance);
the log-variance is the free parameter so optimization stays unconstrained,
clamped to [-14, 14] at head outputs to avoid degenerate variances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_VAR_MIN = -14.0
LOG_VAR_MAX = 14.0

_ACTIVATIONS = {
    "linear": lambda t: t,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softplus": ad.softplus,
}


class RngStream:
    """Deterministic counter-based random stream (Philox).

    The same (seed, stream) pair always yields the identical draw sequence;
    independent sub-streams come from ``spawn``.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.Philox(key=[self.seed & 0xFFFFFFFFFFFFFFFF,
                                  self.stream & 0xFFFFFFFFFFFFFFFF]))

    def spawn(self, salt):
        return RngStream(self.seed, self.stream * 1000003 + 1 + int(salt))

    def reset(self):
        return RngStream(self.seed, self.stream)

    def normal(self, shape=()):
        return self._gen.standard_normal(shape)

    def uniform(self, low, high, shape=()):
        out = self._gen.uniform(low, high, shape)
        return float(out) if np.ndim(out) == 0 else out

    def integers(self, low, high):
        return int(self._gen.integers(low, high))

    def shuffle(self, seq):
        self._gen.shuffle(seq)


def init_params(shape, rng, fan_in=None, fan_out=None):
    """Uniform initialization in +-sqrt(6/(fan_in+fan_out))."""
    shape = tuple(shape)
    if fan_in is None:
        fan_in = shape[0] if len(shape) >= 1 else 1
    if fan_out is None:
        fan_out = shape[1] if len(shape) >= 2 else shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


@dataclass
class DenseLayer:
    weight: Tensor  # [in, out]
    bias: Tensor    # [out]
    activation: str = "linear"

    @classmethod
    def create(cls, n_in, n_out, activation, rng):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        w = ad.variable(init_params((n_in, n_out), rng))
        b = ad.variable(np.zeros(n_out))
        return cls(w, b, activation)

    @property
    def n_in(self):
        return self.weight.shape[0]

    @property
    def n_out(self):
        return self.weight.shape[1]


def dense_forward(layer, x):
    """activation(x @ W + b) for x of shape [batch, in]."""
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise ShapeError(
            f"dense_forward: input {x.shape} incompatible with weight "
            f"{layer.weight.shape}")
    return _ACTIVATIONS[layer.activation](ad.add(ad.matmul(x, layer.weight),
                                                 layer.bias))


@dataclass
class LstmCell:
    """Standard LSTM cell with separate parameters per gate.

    Gates: i (input), f (forget), g (cell candidate), o (output).
    Forget-gate bias starts at 1 to keep memory open early in training.
    """

    w_x: dict  # gate -> Tensor [in, H]
    w_h: dict  # gate -> Tensor [H, H]
    b: dict    # gate -> Tensor [H]

    GATES = ("i", "f", "g", "o")

    @classmethod
    def create(cls, n_in, hidden, rng):
        w_x, w_h, b = {}, {}, {}
        for gate in cls.GATES:
            w_x[gate] = ad.variable(init_params((n_in, hidden), rng))
            w_h[gate] = ad.variable(init_params((hidden, hidden), rng))
            bias = np.zeros(hidden)
            if gate == "f":
                bias += 1.0
            b[gate] = ad.variable(bias)
        return cls(w_x, w_h, b)

    @property
    def hidden(self):
        return self.w_h["i"].shape[0]

    @property
    def n_in(self):
        return self.w_x["i"].shape[0]


def lstm_step(cell, x, h_prev, c_prev):
    """One LSTM update; x [B, in], h_prev/c_prev [B, H] -> (h, c)."""
    if x.ndim != 2 or x.shape[1] != cell.n_in or h_prev.shape[1] != cell.hidden:
        raise ShapeError(
            f"lstm_step: x {x.shape}, h {h_prev.shape} incompatible with "
            f"cell ({cell.n_in} -> {cell.hidden})")

    def gate(name, act):
        pre = ad.add(ad.add(ad.matmul(x, cell.w_x[name]),
                            ad.matmul(h_prev, cell.w_h[name])),
                     cell.b[name])
        return act(pre)

    i = gate("i", ad.sigmoid)
    f = gate("f", ad.sigmoid)
    g = gate("g", ad.tanh)
    o = gate("o", ad.sigmoid)
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return h, c


@dataclass
class GaussianParams:
    """Diagonal Gaussian as (mean, log-variance), rows = batch entries."""

    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise ShapeError(
                f"GaussianParams: mean {self.mean.shape} != "
                f"log_var {self.log_var.shape}")

    @property
    def dim(self):
        return self.mean.shape[-1]


def gaussian_head_forward(mean_layer, var_layer, x):
    """Mean and clamped log-variance heads applied to a shared input."""
    mean = dense_forward(mean_layer, x)
    log_var = ad.clip(dense_forward(var_layer, x), LOG_VAR_MIN, LOG_VAR_MAX)
    return GaussianParams(mean, log_var)


def gaussian_log_density(p, x):
    """log N(x; mean, diag(exp(log_var))), summed over dimensions.

    Returns a [B] tensor for 2-D inputs, a scalar for 1-D inputs.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape != p.mean.shape:
        raise ShapeError(f"gaussian_log_density: x {x.shape} vs "
                         f"params {p.mean.shape}")
    diff = ad.sub(x, p.mean)
    quad = ad.mul(ad.mul(diff, diff), ad.exp(ad.neg(p.log_var)))
    per_dim = ad.mul(ad.add(ad.add(quad, p.log_var), LOG_2PI), -0.5)
    return ad.tsum(per_dim, axis=per_dim.ndim - 1)


def kl_diag_gaussians(q, p):
    """KL(q || p) for diagonal Gaussians, summed over dimensions (>= 0)."""
    if q.mean.shape != p.mean.shape:
        raise ShapeError(f"kl_diag_gaussians: q {q.mean.shape} vs "
                         f"p {p.mean.shape}")
    dmean = ad.sub(q.mean, p.mean)
    # exp(lv_q - lv_p) rather than exp(lv_q)*exp(-lv_p) so q == p gives 0
    ratio = ad.add(ad.exp(ad.sub(q.log_var, p.log_var)),
                   ad.mul(ad.mul(dmean, dmean), ad.exp(ad.neg(p.log_var))))
    per_dim = ad.mul(ad.add(ad.sub(ad.sub(p.log_var, q.log_var), 1.0), ratio),
                     0.5)
    return ad.tsum(per_dim, axis=per_dim.ndim - 1)


def reparameterize_sample(q, rng):
    """z = mean + exp(log_var/2) * eps, eps ~ N(0, I) from rng.

    Gradients flow to mean and log_var; eps is a constant on the tape.
    """
    eps = Tensor(rng.normal(q.mean.shape))
    return ad.add(q.mean, ad.mul(ad.exp(ad.mul(q.log_var, 0.5)), eps))
