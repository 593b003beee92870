"""Adam training of the sequence model on chunked frame sequences.

Loss per minibatch is the negative mean per-frame elbo; the KL term can be
warmed up linearly over the first epochs. Gradients are clipped to a global
norm before the Adam update. Training is deterministic given the seed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import vrnn as vrnn_mod
from .nn import RngStream
from .vrnn import save_checkpoint


class ConfigError(ValueError):
    """Invalid training configuration."""


@dataclass
class TrainConfig:
    learning_rate: float = 3e-5
    batch_size: int = 16
    chunk_len: int = 100
    epochs: int = 50
    grad_clip_norm: float = 5.0
    seed: int = 0
    kl_warmup_epochs: int = 0
    patience: int = 10

    def validate(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.chunk_len < 2:
            raise ConfigError("chunk_len must be >= 2")
        if self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params):
        m = {k: np.zeros_like(p.data) for k, p in params.items()}
        v = {k: np.zeros_like(p.data) for k, p in params.items()}
        return cls(m, v)


def adam_step(state, params, grads, lr):
    """In-place Adam update with bias correction.

    ``params`` maps name -> Tensor, ``grads`` name -> ndarray with the same
    keys. Iteration is over sorted keys so map ordering cannot change results.
    """
    missing = sorted(set(params) - set(grads))
    extra = sorted(set(grads) - set(params))
    if missing or extra:
        raise KeyError(f"gradient keys mismatch: missing={missing} extra={extra}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for key in sorted(params):
        g = grads[key]
        state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        state.v[key] = b2 * state.v[key] + (1.0 - b2) * g * g
        m_hat = state.m[key] / bc1
        v_hat = state.v[key] / bc2
        params[key].data = params[key].data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_gradients(grads, max_norm):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


def make_chunks(dataset, chunk_len):
    """Split each sequence into consecutive chunks of chunk_len frames.

    A trailing partial chunk is kept when it still has >= 2 frames.
    """
    chunks = []
    for seq in dataset:
        frames = seq.frames if hasattr(seq, "frames") else np.asarray(seq)
        for start in range(0, frames.shape[0], chunk_len):
            piece = frames[start:start + chunk_len]
            if piece.shape[0] >= 2:
                chunks.append(piece)
    return chunks


def _batch_loss(params, batch, rng, kl_scale):
    """Negative mean per-frame elbo over a [B, T, d] stack of chunks."""
    results = vrnn_mod.run_sequence(params, batch, rng)
    recon = ad.tmean(ad.concat([r.recon_logp for r in results], axis=0))
    kl = ad.tmean(ad.concat([r.kl for r in results], axis=0))
    loss = ad.neg(ad.sub(recon, ad.mul(kl, kl_scale)))
    elbo_per_frame = float(recon.data) - float(kl.data)
    return loss, elbo_per_frame


def train_epoch(params, dataset, cfg, adam, rng, epoch=0):
    """One pass over the chunked dataset; returns epoch statistics."""
    cfg.validate()
    if not dataset:
        raise ConfigError("dataset is empty")
    chunks = make_chunks(dataset, cfg.chunk_len)
    order = np.arange(len(chunks))
    rng.shuffle(order)
    chunks = [chunks[i] for i in order]

    if cfg.kl_warmup_epochs > 0:
        kl_scale = min(1.0, (epoch + 1) / cfg.kl_warmup_epochs)
    else:
        kl_scale = 1.0

    named = params.parameters()
    tensors = list(named.values())
    elbos, grad_norms = [], []
    # chunks of unequal length cannot share a batch; group by length
    by_len = {}
    for ch in chunks:
        by_len.setdefault(ch.shape[0], []).append(ch)
    batches = []
    for length in sorted(by_len):
        group = by_len[length]
        for i in range(0, len(group), cfg.batch_size):
            batches.append(np.stack(group[i:i + cfg.batch_size]))
    for bi, batch in enumerate(batches):
        ad.zero_grads(tensors)
        try:
            loss, elbo_pf = _batch_loss(params, batch, rng.spawn(bi), kl_scale)
        except ad.NumericError as e:
            raise ad.NumericError(f"epoch {epoch}, batch {bi}: {e}") from e
        if not np.isfinite(loss.data):
            raise ad.NumericError(f"epoch {epoch}, batch {bi}: non-finite loss")
        ad.backward(loss, tensors)
        grads = {k: t.grad for k, t in named.items()}
        grads, norm = clip_gradients(grads, cfg.grad_clip_norm)
        adam_step(adam, named, grads, cfg.learning_rate)
        elbos.append(elbo_pf)
        grad_norms.append(norm)
    return {
        "mean_elbo_per_frame": float(np.mean(elbos)),
        "grad_norm_p50": float(np.median(grad_norms)),
        "n_batches": len(batches),
        "kl_scale": kl_scale,
    }


def evaluate_elbo(params, dataset, cfg, rng):
    """Mean per-frame elbo over a dataset, without parameter updates."""
    total, count = 0.0, 0
    with ad.no_grad():
        for i, seq in enumerate(dataset):
            frames = seq.frames if hasattr(seq, "frames") else np.asarray(seq)
            _, per_frame = vrnn_mod.elbo_sequence(params, frames, rng.spawn(i))
            total += float(per_frame.data.sum())
            count += per_frame.data.shape[0]
    return total / max(count, 1)


def fit(params, train_set, valid_set, cfg, ckpt_path=None, log_path=None,
        verbose=False):
    """Train with early stopping on validation elbo (fixed patience).

    The best-validation parameters are kept (and written to ckpt_path when
    given). Returns the history of per-epoch log records.
    """
    cfg.validate()
    adam = AdamState.create(params.parameters())
    best_valid = -np.inf
    best_state = None
    bad_epochs = 0
    history = []
    log_f = open(log_path, "w") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.monotonic()
            rng = RngStream(cfg.seed, stream=epoch + 1)
            stats = train_epoch(params, train_set, cfg, adam, rng, epoch)
            valid_elbo = evaluate_elbo(params, valid_set, cfg,
                                       RngStream(cfg.seed, stream=0))
            record = {
                "epoch": epoch,
                "mean_elbo_train": stats["mean_elbo_per_frame"],
                "mean_elbo_valid": valid_elbo,
                "grad_norm_p50": stats["grad_norm_p50"],
                "wall_ms": int((time.monotonic() - t0) * 1000),
            }
            history.append(record)
            if log_f:
                log_f.write(json.dumps(record) + "\n")
                log_f.flush()
            if verbose:
                print(f"epoch {epoch}: train elbo/frame "
                      f"{record['mean_elbo_train']:.2f}, valid "
                      f"{valid_elbo:.2f}")
            if valid_elbo > best_valid:
                best_valid = valid_elbo
                best_state = {k: t.data.copy()
                              for k, t in params.parameters().items()}
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
    finally:
        if log_f:
            log_f.close()
    if best_state is not None:
        for k, t in params.parameters().items():
            t.data = best_state[k]
    if ckpt_path:
        save_checkpoint(ckpt_path, params)
    return history
