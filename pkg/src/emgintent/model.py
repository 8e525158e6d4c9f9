"""Encoder-only multimodal transformer over EMG and intent tokens.

The input sequence is ``[emg tokens ; intent tokens]`` (length 2T). EMG rows
are a linear projection of the C channel values, intent rows come from a
lookup table whose last row is the mask token. Masked EMG rows are swapped
for a learned vector before modality and (shared) positional encodings are
added. After the encoder the sequence is split again: the first T rows feed
the EMG reconstruction head, the last T rows the intent classifier.

Parameters live in a flat ``dict[str, ndarray]`` so the optimizer, the
checkpoint writer and gradient checks can treat them uniformly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import layers
from .masking import MaskedExample, Task


class ShapeError(ValueError):
    pass


class NumericFailure(FloatingPointError):
    def __init__(self, layer: int, where: str = "encoder"):
        self.layer = layer
        super().__init__(f"non-finite activations after {where} layer {layer}")


class DegenerateExampleError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 8
    num_classes: int = 6
    window_len: int = 600
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    ff_mult: int = 4
    dropout: float = 0.15
    learned_pos: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if min(self.channels, self.num_classes, self.window_len, self.n_layers) < 1:
            raise ValueError("channels, num_classes, window_len, n_layers must be >= 1")

    @property
    def mask_token(self) -> int:
        return self.num_classes

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_encoding(T: int, d: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, C, K = cfg.d_model, cfg.channels, cfg.num_classes
    dff = cfg.ff_mult * d

    def xavier(n_in, n_out):
        a = math.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-a, a, size=(n_in, n_out))

    p = {
        "emg_proj.weight": xavier(C, d),
        "emg_proj.bias": np.zeros(d),
        "intent_embed": rng.normal(0.0, 0.02, size=(K + 1, d)),
        "mask_vector": rng.normal(0.0, 0.02, size=d),
        "modality_embed": rng.normal(0.0, 0.02, size=(2, d)),
    }
    if cfg.learned_pos:
        p["pos_embed"] = rng.normal(0.0, 0.02, size=(cfg.window_len, d))
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        p[pre + "norm1.scale"] = np.ones(d)
        p[pre + "norm1.shift"] = np.zeros(d)
        for name in "qkvo":
            p[pre + f"attn.{name}.weight"] = xavier(d, d)
            p[pre + f"attn.{name}.bias"] = np.zeros(d)
        p[pre + "norm2.scale"] = np.ones(d)
        p[pre + "norm2.shift"] = np.zeros(d)
        p[pre + "ff1.weight"] = xavier(d, dff)
        p[pre + "ff1.bias"] = np.zeros(dff)
        p[pre + "ff2.weight"] = xavier(dff, d)
        p[pre + "ff2.bias"] = np.zeros(d)
    p["final_norm.scale"] = np.ones(d)
    p["final_norm.shift"] = np.zeros(d)
    p["emg_head.weight"] = xavier(d, C)
    p["emg_head.bias"] = np.zeros(C)
    p["intent_head.weight"] = xavier(d, K)
    p["intent_head.bias"] = np.zeros(K)
    return {k: v.astype(cfg.dtype) for k, v in p.items()}


@dataclass
class Batch:
    """Stacked examples: emg (B,T,C), emg_mask (B,T,C), intent tokens (B,T)."""

    emg: np.ndarray
    emg_mask: np.ndarray
    intent_mask: np.ndarray
    labels: np.ndarray
    has_labels: np.ndarray
    block: np.ndarray

    @classmethod
    def from_examples(cls, examples: list[MaskedExample], dtype="float64") -> "Batch":
        T = examples[0].window_len
        labels = np.zeros((len(examples), T), dtype=np.int64)
        has_labels = np.zeros(len(examples), dtype=bool)
        for i, ex in enumerate(examples):
            if ex.labels is not None and ex.task != Task.SELF_SUPERVISED_EMG:
                labels[i] = ex.labels
                has_labels[i] = True
        return cls(
            emg=np.stack([ex.emg for ex in examples]).astype(dtype),
            emg_mask=np.stack([ex.emg_mask for ex in examples]),
            intent_mask=np.stack([ex.intent_mask for ex in examples]),
            labels=labels,
            has_labels=has_labels,
            block=np.array([ex.block_emg_to_intent for ex in examples]),
        )

    def __len__(self):
        return self.emg.shape[0]


@dataclass(frozen=True)
class LossTerms:
    total: float
    mse: float | None
    ce: float | None


class MaskedTransformer:
    """Parameters plus the forward, loss and backward passes."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None, seed=0):
        self.cfg = cfg
        if params is None:
            params = init_params(cfg, np.random.default_rng(seed))
        self.params = params
        self._pos = sinusoidal_encoding(cfg.window_len, cfg.d_model).astype(cfg.dtype)

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def pos_encoding(self) -> np.ndarray:
        return self.params["pos_embed"] if self.cfg.learned_pos else self._pos

    # -- embedding ---------------------------------------------------------

    def _check_window(self, emg):
        if emg.shape[-2] != self.cfg.window_len or emg.shape[-1] != self.cfg.channels:
            raise ShapeError(
                f"window shape {emg.shape[-2:]} != ({self.cfg.window_len}, {self.cfg.channels})"
            )

    def embed(self, emg, emg_time_mask, intent_tokens):
        """Build z = [x~; y~] of shape (B, 2T, d).

        ``emg_time_mask`` (B, T) marks EMG rows replaced by the mask vector;
        ``intent_tokens`` (B, T) holds class indices or the mask token.
        """
        p = self.params
        emg = np.asarray(emg, dtype=self.dtype)
        self._check_window(emg)
        x_proj = emg @ p["emg_proj.weight"] + p["emg_proj.bias"]
        m = emg_time_mask[..., None]
        x_tok = np.where(m, p["mask_vector"], x_proj)
        pos = self.pos_encoding()
        x_tilde = x_tok + p["modality_embed"][0] + pos
        y_tilde = p["intent_embed"][intent_tokens] + p["modality_embed"][1] + pos
        return np.concatenate([x_tilde, y_tilde], axis=-2)

    def _tokens(self, batch: Batch):
        return np.where(batch.intent_mask, self.cfg.mask_token, batch.labels)

    def _attention_bias(self, block: np.ndarray):
        if not np.any(block):
            return None
        T = self.cfg.window_len
        bias = np.zeros((len(block), 1, 2 * T, 2 * T), dtype=self.dtype)
        bias[block, :, :T, T:] = -np.inf
        return bias

    # -- forward / backward ------------------------------------------------

    def encode(self, z, block=None, train=False, rng=None):
        """Run the encoder and both heads on z. Returns (emg_out, logits, cache)."""
        cfg, p = self.cfg, self.params
        T = cfg.window_len
        if z.shape[-2] != 2 * T:
            raise ShapeError(f"sequence length {z.shape[-2]} != {2 * T}")
        squeeze = z.ndim == 2
        if squeeze:
            z = z[None]
        if block is None:
            block = np.zeros(z.shape[0], dtype=bool)
        bias = self._attention_bias(np.asarray(block, dtype=bool).reshape(-1))
        drop_rng = rng if train else None
        h = z
        caches = []
        for i in range(cfg.n_layers):
            lp = {k[len(f"layers.{i}.") :]: v for k, v in p.items() if k.startswith(f"layers.{i}.")}
            h, c = layers.encoder_layer_forward(h, lp, cfg.n_heads, cfg.dropout, drop_rng, bias)
            if not np.isfinite(h).all():
                raise NumericFailure(i)
            caches.append(c)
        hn, fn_cache = layers.layernorm_forward(h, p["final_norm.scale"], p["final_norm.shift"])
        emg_out = hn[:, :T] @ p["emg_head.weight"] + p["emg_head.bias"]
        logits = hn[:, T:] @ p["intent_head.weight"] + p["intent_head.bias"]
        if not (np.isfinite(emg_out).all() and np.isfinite(logits).all()):
            raise NumericFailure(cfg.n_layers, "head")
        cache = (caches, fn_cache, hn)
        if squeeze:
            return emg_out[0], logits[0], cache
        return emg_out, logits, cache

    def forward(self, batch: Batch, train=False, rng=None):
        emg_time = batch.emg_mask.any(axis=-1)
        z = self.embed(batch.emg, emg_time, self._tokens(batch))
        emg_out, logits, cache = self.encode(z, batch.block, train, rng)
        return emg_out, logits, (z, cache)

    def backward(self, batch: Batch, cache, d_emg_out, d_logits) -> dict[str, np.ndarray]:
        cfg, p = self.cfg, self.params
        T = cfg.window_len
        z, (caches, fn_cache, hn) = cache
        grads = {}
        dhn = np.empty_like(hn)
        dhn[:, :T], grads["emg_head.weight"], grads["emg_head.bias"] = layers.linear_backward(
            d_emg_out, hn[:, :T], p["emg_head.weight"]
        )
        dhn[:, T:], grads["intent_head.weight"], grads["intent_head.bias"] = (
            layers.linear_backward(d_logits, hn[:, T:], p["intent_head.weight"])
        )
        dh, grads["final_norm.scale"], grads["final_norm.shift"] = layers.layernorm_backward(
            dhn, fn_cache, p["final_norm.scale"]
        )
        for i in reversed(range(cfg.n_layers)):
            pre = f"layers.{i}."
            lp = {k[len(pre) :]: v for k, v in p.items() if k.startswith(pre)}
            dh, lg = layers.encoder_layer_backward(dh, caches[i], lp, cfg.n_heads)
            grads.update({pre + k: v for k, v in lg.items()})

        dx_t, dy_t = dh[:, :T], dh[:, T:]
        grads["modality_embed"] = np.stack([dx_t.sum(axis=(0, 1)), dy_t.sum(axis=(0, 1))])
        if cfg.learned_pos:
            grads["pos_embed"] = dx_t.sum(axis=0) + dy_t.sum(axis=0)
        emg_time = batch.emg_mask.any(axis=-1)[..., None]
        grads["mask_vector"] = (dx_t * emg_time).sum(axis=(0, 1))
        d_proj = dx_t * ~emg_time
        _, grads["emg_proj.weight"], grads["emg_proj.bias"] = layers.linear_backward(
            d_proj, batch.emg.astype(self.dtype), p["emg_proj.weight"]
        )
        d_embed = np.zeros_like(p["intent_embed"])
        np.add.at(d_embed, self._tokens(batch).reshape(-1), dy_t.reshape(-1, cfg.d_model))
        grads["intent_embed"] = d_embed
        return {k: grads[k] for k in p}

    # -- objective ---------------------------------------------------------

    def loss_and_grads(self, batch: Batch, train=False, rng=None):
        """Mean per-example masked loss over the batch and its parameter gradients."""
        emg_out, logits, cache = self.forward(batch, train, rng)
        terms, d_emg, d_logits = masked_loss(
            emg_out, logits, batch.emg_mask, batch.intent_mask, batch.emg, batch.labels,
            batch.has_labels,
        )
        grads = self.backward(batch, cache, d_emg.astype(self.dtype), d_logits.astype(self.dtype))
        return terms, grads

    def loss(self, batch: Batch, train=False, rng=None) -> LossTerms:
        emg_out, logits, _ = self.forward(batch, train, rng)
        terms, _, _ = masked_loss(
            emg_out, logits, batch.emg_mask, batch.intent_mask, batch.emg, batch.labels,
            batch.has_labels,
        )
        return terms

    # -- inference ---------------------------------------------------------

    def predict_windows(self, emg) -> np.ndarray:
        """Intent logits (B, T, K) with every intent token masked and EMG visible."""
        emg = np.asarray(emg, dtype=self.dtype)
        self._check_window(emg)
        B, T, _ = emg.shape
        tokens = np.full((B, T), self.cfg.mask_token)
        z = self.embed(emg, np.zeros((B, T), dtype=bool), tokens)
        _, logits, _ = self.encode(z)
        return logits

    def predict_window(self, emg_window) -> np.ndarray:
        return self.predict_windows(np.asarray(emg_window)[None])[0]


def masked_loss(emg_out, logits, emg_mask, intent_mask, target_emg, labels, has_labels=None):
    """Masked reconstruction + classification loss.

    Per example: MSE over the (t, c) pairs in the EMG mask divided by its size,
    plus cross-entropy over masked intent steps divided by their count. A term
    whose mask set is empty (or whose example has no labels) is omitted. The
    batch loss is the mean of per-example losses.

    Returns ``(LossTerms, d_emg_out, d_logits)``.
    """
    emg_out = np.asarray(emg_out, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    single = emg_out.ndim == 2
    if single:
        emg_out, logits = emg_out[None], logits[None]
        emg_mask, intent_mask = emg_mask[None], intent_mask[None]
        target_emg, labels = target_emg[None], labels[None]
        if has_labels is not None:
            has_labels = np.atleast_1d(has_labels)
    B = emg_out.shape[0]
    if has_labels is None:
        has_labels = np.ones(B, dtype=bool)
    emg_mask = emg_mask.astype(bool)
    intent_mask = intent_mask.astype(bool) & has_labels[:, None]

    n_e = emg_mask.sum(axis=(1, 2))
    n_a = intent_mask.sum(axis=1)
    if np.any((n_e == 0) & (n_a == 0)):
        raise DegenerateExampleError("example with both mask sets empty")

    diff = emg_out - np.asarray(target_emg, dtype=np.float64)
    inv_e = np.where(n_e > 0, 1.0 / np.maximum(n_e, 1), 0.0)
    mse_each = (diff * diff * emg_mask).sum(axis=(1, 2)) * inv_e
    d_emg = 2.0 * diff * emg_mask * inv_e[:, None, None] / B

    logp = layers.log_softmax(logits)
    safe_labels = np.where(intent_mask, labels, 0)
    nll = -np.take_along_axis(logp, safe_labels[..., None], axis=-1)[..., 0]
    inv_a = np.where(n_a > 0, 1.0 / np.maximum(n_a, 1), 0.0)
    ce_each = (nll * intent_mask).sum(axis=1) * inv_a
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    np.put_along_axis(onehot, safe_labels[..., None], 1.0, axis=-1)
    d_logits = (probs - onehot) * intent_mask[..., None] * inv_a[:, None, None] / B

    total = float((mse_each + ce_each).mean())
    mse = float(mse_each[n_e > 0].mean()) if np.any(n_e > 0) else None
    ce = float(ce_each[n_a > 0].mean()) if np.any(n_a > 0) else None
    if single:
        d_emg, d_logits = d_emg[0], d_logits[0]
    return LossTerms(total, mse, ce), d_emg, d_logits
