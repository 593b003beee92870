"""Variational recurrent sequence model.

Each timestep carries a latent Gaussian variable z_t. The deterministic LSTM
state h_t summarizes the history (x_{<t}, z_{<t}); three Gaussian heads give
the prior p(z_t | h_t), the filtering posterior q(z_t | x_t, h_t) and the
emission p(x_t | z_t, h_t). The per-frame training objective and novelty
score is the evidence lower bound

    elbo_t = E_q[log p(x_t | z_t, h_t)] - KL(q || prior)

estimated with a single reparameterized sample (averaging over more samples
is available at scoring time). Scoring never compares x_t against a
reconstruction; the decision statistic is purely the learned density.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from . import nn
from .nn import DenseLayer, GaussianParams, LstmCell, RngStream

CHECKPOINT_MAGIC = b"NOVELDET-CKPT\n"
CHECKPOINT_VERSION = "1"


@dataclass
class VrnnConfig:
    frame_dim: int = 160
    latent_dim: int = 160
    hidden_dim: int = 160
    feature_dim: int = 160
    # hidden tanh layer inside each Gaussian head; -1 means hidden_dim,
    # 0 disables the layer (heads become affine)
    head_hidden_dim: int = -1
    # pass x_t through a shared tanh dense layer before the posterior,
    # emission conditioning and the recurrence input
    use_feature_extractor: bool = True

    def __post_init__(self):
        for name in ("frame_dim", "latent_dim", "hidden_dim", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def x_feature_dim(self):
        return self.feature_dim if self.use_feature_extractor else self.frame_dim

    @property
    def head_hidden(self):
        return self.hidden_dim if self.head_hidden_dim < 0 else self.head_hidden_dim


@dataclass
class GaussianHead:
    """Optional shared tanh layer feeding mean and log-variance heads."""

    hidden: DenseLayer | None
    mean_layer: DenseLayer
    var_layer: DenseLayer

    @classmethod
    def create(cls, n_in, n_out, n_hidden, rng):
        hidden = None
        head_in = n_in
        if n_hidden > 0:
            hidden = DenseLayer.create(n_in, n_hidden, "tanh", rng)
            head_in = n_hidden
        mean_layer = DenseLayer.create(head_in, n_out, "linear", rng)
        var_layer = DenseLayer.create(head_in, n_out, "linear", rng)
        return cls(hidden, mean_layer, var_layer)

    def forward(self, x):
        if self.hidden is not None:
            x = nn.dense_forward(self.hidden, x)
        return nn.gaussian_head_forward(self.mean_layer, self.var_layer, x)


@dataclass
class VrnnParams:
    config: VrnnConfig
    phi_x: DenseLayer | None
    phi_z: DenseLayer
    cell: LstmCell
    prior_head: GaussianHead
    posterior_head: GaussianHead
    emission_head: GaussianHead

    @classmethod
    def create(cls, config, rng):
        c = config
        phi_x = None
        if c.use_feature_extractor:
            phi_x = DenseLayer.create(c.frame_dim, c.feature_dim, "tanh", rng)
        phi_z = DenseLayer.create(c.latent_dim, c.feature_dim, "tanh", rng)
        cell = LstmCell.create(c.x_feature_dim + c.feature_dim, c.hidden_dim, rng)
        prior = GaussianHead.create(c.hidden_dim, c.latent_dim, c.head_hidden, rng)
        posterior = GaussianHead.create(c.x_feature_dim + c.hidden_dim,
                                        c.latent_dim, c.head_hidden, rng)
        emission = GaussianHead.create(c.feature_dim + c.hidden_dim,
                                       c.frame_dim, c.head_hidden, rng)
        return cls(c, phi_x, phi_z, cell, prior, posterior, emission)

    def parameters(self):
        """Ordered {name: Tensor} over every trainable tensor."""
        out = {}

        def layer(prefix, lyr):
            if lyr is None:
                return
            out[f"{prefix}.weight"] = lyr.weight
            out[f"{prefix}.bias"] = lyr.bias

        def head(prefix, hd):
            layer(f"{prefix}.hidden", hd.hidden)
            layer(f"{prefix}.mean", hd.mean_layer)
            layer(f"{prefix}.var", hd.var_layer)

        layer("phi_x", self.phi_x)
        layer("phi_z", self.phi_z)
        for gate in LstmCell.GATES:
            out[f"lstm.w_x.{gate}"] = self.cell.w_x[gate]
            out[f"lstm.w_h.{gate}"] = self.cell.w_h[gate]
            out[f"lstm.b.{gate}"] = self.cell.b[gate]
        head("prior", self.prior_head)
        head("posterior", self.posterior_head)
        head("emission", self.emission_head)
        return out


@dataclass
class VrnnState:
    h: Tensor  # [B, hidden]
    c: Tensor  # [B, hidden]
    t: int = 0

    @classmethod
    def initial(cls, config, batch=1):
        zeros = np.zeros((batch, config.hidden_dim))
        return cls(Tensor(zeros), Tensor(zeros.copy()), 0)


@dataclass
class StepResult:
    elbo: Tensor          # [B]
    recon_logp: Tensor    # [B]
    kl: Tensor            # [B]
    prior: GaussianParams
    posterior: GaussianParams
    emission: GaussianParams
    z: Tensor             # [B, latent]
    next_state: VrnnState


def _features_x(params, x_t):
    if params.phi_x is None:
        return x_t
    return nn.dense_forward(params.phi_x, x_t)


def vrnn_step(params, state, x_t, rng):
    """One timestep: prior, posterior, sample, emission, elbo, recurrence.

    x_t has shape [B, frame_dim]; the returned state has t advanced by one.
    """
    prior = params.prior_head.forward(state.h)
    fx = _features_x(params, x_t)
    posterior = params.posterior_head.forward(ad.concat([fx, state.h]))
    z = nn.reparameterize_sample(posterior, rng)
    fz = nn.dense_forward(params.phi_z, z)
    emission = params.emission_head.forward(ad.concat([fz, state.h]))
    recon_logp = nn.gaussian_log_density(emission, x_t)
    kl = nn.kl_diag_gaussians(posterior, prior)
    elbo = ad.sub(recon_logp, kl)
    if not np.all(np.isfinite(elbo.data)):
        raise NumericError(f"non-finite elbo at timestep {state.t}")
    h, c = nn.lstm_step(params.cell, ad.concat([fx, fz]), state.h, state.c)
    return StepResult(elbo, recon_logp, kl, prior, posterior, emission, z,
                      VrnnState(h, c, state.t + 1))


def run_sequence(params, frames, rng):
    """Chain vrnn_step over frames [B, T, frame_dim] from a zero state."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[None, :, :]
    batch, n_steps = frames.shape[0], frames.shape[1]
    if n_steps < 1:
        raise ValueError("empty sequence")
    state = VrnnState.initial(params.config, batch)
    results = []
    for t in range(n_steps):
        res = vrnn_step(params, state, Tensor(frames[:, t, :]), rng)
        results.append(res)
        state = res.next_state
    return results


def _frame_array(x):
    return x.frames if hasattr(x, "frames") else np.asarray(x, dtype=np.float64)


def elbo_sequence(params, x, rng):
    """Sequence ELBO: (total scalar, per-frame [T]) for one [T, d] sequence."""
    frames = _frame_array(x)
    results = run_sequence(params, frames, rng)
    per_frame = ad.concat([r.elbo for r in results], axis=0)
    return ad.tsum(per_frame), per_frame


def score_frames(params, x, n_samples=1, rng=None):
    """Per-frame novelty scores: elbo averaged over latent samples.

    Inference mode; nothing is recorded for gradients. Returns an [T] array.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if rng is None:
        rng = RngStream(0)
    frames = _frame_array(x)
    with ad.no_grad():
        if n_samples == 1:
            return elbo_sequence(params, frames, rng)[1].data.copy()
        acc = np.zeros(frames.shape[0])
        for k in range(n_samples):
            acc += elbo_sequence(params, frames, rng.spawn(k))[1].data
        return acc / n_samples


def generate(params, n_frames, rng):
    """Ancestral sampling: z_t from the prior, x_t from the emission."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    c = params.config
    out = np.empty((n_frames, c.frame_dim))
    with ad.no_grad():
        state = VrnnState.initial(c, 1)
        for t in range(n_frames):
            prior = params.prior_head.forward(state.h)
            z = nn.reparameterize_sample(prior, rng)
            fz = nn.dense_forward(params.phi_z, z)
            emission = params.emission_head.forward(ad.concat([fz, state.h]))
            x = nn.reparameterize_sample(emission, rng)
            out[t] = x.data[0]
            fx = _features_x(params, x)
            h, cc = nn.lstm_step(params.cell, ad.concat([fx, fz]),
                                 state.h, state.c)
            state = VrnnState(h, cc, t + 1)
    return out


def save_checkpoint(path, params):
    """Write config + named parameter tensors (f64 LE); byte-reproducible."""
    named = params.parameters()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": vars(params.config),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in named.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for v in named.values():
            f.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into (VrnnConfig, VrnnParams), bit-exact."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {header.get('format_version')!r}")
        config = VrnnConfig(**header["config"])
        params = VrnnParams.create(config, RngStream(0))
        named = params.parameters()
        stored = [(e["name"], tuple(e["shape"])) for e in header["params"]]
        if [n for n, _ in stored] != list(named.keys()):
            raise ValueError("checkpoint parameter names do not match config")
        for name, shape in stored:
            tensor = named[name]
            if tuple(tensor.shape) != shape:
                raise ValueError(f"checkpoint shape mismatch for {name}: "
                                 f"{shape} vs {tuple(tensor.shape)}")
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"truncated checkpoint while reading {name}")
            tensor.data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return config, params
