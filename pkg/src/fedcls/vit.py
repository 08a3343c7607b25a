"""From-scratch Vision Transformer with CLS head, forward pass, and gradients.

Pre-norm residual blocks; multi-head self-attention with per-head
projection matrices; two-layer FFN with exact (Gaussian-CDF) GELU; a
parameter-free layer norm before the CLS read-out; linear classification
head.  The backward pass is hand-written reverse mode over float64 numpy
and is validated against central finite differences.

Class labels are zero-based everywhere (the canonical ordering shared by
every client).
"""

from __future__ import annotations

import dataclasses
import math
from typing import Iterable

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ContractError, NumericalError

LN_EPS = 1e-5


@dataclasses.dataclass(frozen=True)
class VitConfig:
    image_h: int
    image_w: int
    channels: int
    patch_size: int
    hidden_dim: int
    depth: int
    heads: int
    mlp_dim: int
    classes: int

    def __post_init__(self):
        if self.image_h % self.patch_size or self.image_w % self.patch_size:
            raise ConfigError(
                f"image {self.image_h}x{self.image_w} not divisible by patch "
                f"size {self.patch_size}"
            )
        if self.hidden_dim % self.heads:
            raise ConfigError("hidden_dim must be divisible by heads")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    @property
    def patch_count(self) -> int:
        return (self.image_h // self.patch_size) * (self.image_w // self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def seq_len(self) -> int:
        return 1 + self.patch_count


PAPER_VIT = VitConfig(200, 200, 3, 25, 768, 12, 12, 3072, 3)
DESK_VIT = VitConfig(32, 32, 3, 8, 64, 4, 4, 128, 3)
TINY_VIT = VitConfig(4, 4, 3, 2, 8, 1, 2, 16, 3)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-4
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


@dataclasses.dataclass
class ClsToken:
    values: np.ndarray
    sample_id: int | None = None
    client_id: int | None = None


class VitModel:
    """Named parameter tensors plus the config that shaped them."""

    def __init__(self, config: VitConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    def copy(self) -> "VitModel":
        return VitModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def param_names(self) -> list[str]:
        return list(self.params)


def _trunc_normal(rng: np.random.Generator, shape, sigma=0.02) -> np.ndarray:
    """Normal(0, sigma) resampled until within two sigmas (ViT convention)."""
    out = rng.normal(0.0, sigma, size=shape)
    bad = np.abs(out) > 2 * sigma
    while bad.any():
        out[bad] = rng.normal(0.0, sigma, size=int(bad.sum()))
        bad = np.abs(out) > 2 * sigma
    return out


def init_model(config: VitConfig, seed: int) -> VitModel:
    rng = np.random.default_rng(seed)
    c = config
    p: dict[str, np.ndarray] = {}
    p["patch_w"] = _trunc_normal(rng, (c.hidden_dim, c.patch_dim))
    p["patch_b"] = np.zeros(c.hidden_dim)
    p["cls"] = np.zeros(c.hidden_dim)
    p["pos"] = _trunc_normal(rng, (c.seq_len, c.hidden_dim))
    for l in range(c.depth):
        pre = f"layer{l}."
        p[pre + "ln1_g"] = np.ones(c.hidden_dim)
        p[pre + "ln1_b"] = np.zeros(c.hidden_dim)
        p[pre + "wq"] = _trunc_normal(rng, (c.heads, c.hidden_dim, c.head_dim))
        p[pre + "wk"] = _trunc_normal(rng, (c.heads, c.hidden_dim, c.head_dim))
        p[pre + "wv"] = _trunc_normal(rng, (c.heads, c.hidden_dim, c.head_dim))
        p[pre + "wo"] = _trunc_normal(rng, (c.hidden_dim, c.hidden_dim))
        p[pre + "ln2_g"] = np.ones(c.hidden_dim)
        p[pre + "ln2_b"] = np.zeros(c.hidden_dim)
        p[pre + "w1"] = _trunc_normal(rng, (c.mlp_dim, c.hidden_dim))
        p[pre + "b1"] = np.zeros(c.mlp_dim)
        p[pre + "w2"] = _trunc_normal(rng, (c.hidden_dim, c.mlp_dim))
        p[pre + "b2"] = np.zeros(c.hidden_dim)
    p["head_w"] = _trunc_normal(rng, (c.classes, c.hidden_dim))
    p["head_b"] = np.zeros(c.classes)
    return VitModel(config, p)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Non-overlapping patches in row-major order, each flattened to P*P*C."""
    if image.ndim != 3:
        raise ContractError("image must be (H, W, C)")
    h, w, ch = image.shape
    if h % patch_size or w % patch_size:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = image.reshape(gh, patch_size, gw, patch_size, ch)
    return x.transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch_size * patch_size * ch)


def _patchify_batch(images: np.ndarray, patch_size: int) -> np.ndarray:
    b, h, w, ch = images.shape
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, gh, patch_size, gw, patch_size, ch)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, gh * gw, -1)


def _softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * phi


def _ln(x, gain, bias):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    out = xhat * gain + bias if gain is not None else xhat
    return out, (xhat, inv)


def _ln_back(dout, cache, gain):
    xhat, inv = cache
    if gain is not None:
        dgain = np.sum(dout * xhat, axis=tuple(range(dout.ndim - 1)))
        dbias = np.sum(dout, axis=tuple(range(dout.ndim - 1)))
        dxh = dout * gain
    else:
        dgain = dbias = None
        dxh = dout
    m1 = dxh.mean(-1, keepdims=True)
    m2 = (dxh * xhat).mean(-1, keepdims=True)
    dx = inv * (dxh - m1 - xhat * m2)
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def _forward_batch(model: VitModel, images: np.ndarray, want_cache: bool):
    c = model.config
    p = model.params
    b = images.shape[0]
    scale = 1.0 / math.sqrt(c.head_dim)

    patches = _patchify_batch(images, c.patch_size)
    tok = patches @ p["patch_w"].T + p["patch_b"]
    z = np.concatenate(
        [np.broadcast_to(p["cls"], (b, 1, c.hidden_dim)), tok], axis=1
    ) + p["pos"]

    cache = {"patches": patches, "layers": []} if want_cache else None
    for l in range(c.depth):
        pre = f"layer{l}."
        h1, ln1c = _ln(z, p[pre + "ln1_g"], p[pre + "ln1_b"])
        q = np.einsum("btd,hdk->bhtk", h1, p[pre + "wq"])
        k = np.einsum("btd,hdk->bhtk", h1, p[pre + "wk"])
        v = np.einsum("btd,hdk->bhtk", h1, p[pre + "wv"])
        scores = np.einsum("bhtk,bhsk->bhts", q, k) * scale
        attn = _softmax(scores)
        heads = np.einsum("bhts,bhsk->bhtk", attn, v)
        concat = heads.transpose(0, 2, 1, 3).reshape(b, c.seq_len, c.hidden_dim)
        z_mid = z + concat @ p[pre + "wo"]

        h2, ln2c = _ln(z_mid, p[pre + "ln2_g"], p[pre + "ln2_b"])
        u = h2 @ p[pre + "w1"].T + p[pre + "b1"]
        g = _gelu(u)
        z_out = z_mid + g @ p[pre + "w2"].T + p[pre + "b2"]

        if not np.all(np.isfinite(z_out)):
            raise NumericalError(f"non-finite activations at layer {l}")
        if want_cache:
            cache["layers"].append(
                dict(z_in=z, h1=h1, ln1c=ln1c, q=q, k=k, v=v, attn=attn,
                     concat=concat, z_mid=z_mid, h2=h2, ln2c=ln2c, u=u, g=g)
            )
        z = z_out

    zf, lnfc = _ln(z, None, None)
    cls_vec = zf[:, 0, :]
    logits = cls_vec @ p["head_w"].T + p["head_b"]
    probs = _softmax(logits)
    if want_cache:
        cache["z_final"] = z
        cache["lnfc"] = lnfc
        cache["cls_vec"] = cls_vec
        cache["probs"] = probs
    return cls_vec, logits, probs, cache


def forward(model: VitModel, image: np.ndarray):
    """Single-image forward pass -> (ClsToken, logits, probs)."""
    cls_vec, logits, probs, _ = _forward_batch(model, image[None], want_cache=False)
    return ClsToken(cls_vec[0]), logits[0], probs[0]


def extract_cls(model: VitModel, image: np.ndarray) -> ClsToken:
    """CLS read-out; bitwise identical to forward(...)'s token."""
    return forward(model, image)[0]


def attention_maps(model: VitModel, image: np.ndarray) -> list[np.ndarray]:
    """Per-layer attention tensors (h, T, T); used by diagnostics and tests."""
    _, _, _, cache = _forward_batch(model, image[None], want_cache=True)
    return [layer["attn"][0] for layer in cache["layers"]]


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------


def loss_and_grads(model: VitModel, images: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch plus gradients for every tensor."""
    if images.shape[0] == 0:
        raise ContractError("empty batch")
    labels = np.asarray(labels)
    c = model.config
    if labels.min() < 0 or labels.max() >= c.classes:
        raise ContractError(f"labels must lie in 0..{c.classes - 1}")
    p = model.params
    b = images.shape[0]
    scale = 1.0 / math.sqrt(c.head_dim)

    cls_vec, logits, probs, cache = _forward_batch(model, images, want_cache=True)
    loss = float(-np.mean(np.log(probs[np.arange(b), labels] + 1e-300)))

    grads = {name: np.zeros_like(t) for name, t in p.items()}

    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b

    grads["head_w"] = dlogits.T @ cls_vec
    grads["head_b"] = dlogits.sum(0)
    dzf = np.zeros_like(cache["z_final"])
    dzf[:, 0, :] = dlogits @ p["head_w"]
    dz, _, _ = _ln_back(dzf, cache["lnfc"], None)

    for l in reversed(range(c.depth)):
        pre = f"layer{l}."
        lc = cache["layers"][l]

        # FFN branch: z_out = z_mid + gelu(h2 @ W1^T + b1) @ W2^T + b2
        df = dz
        grads[pre + "w2"] = np.einsum("btm,btd->dm", lc["g"], df)
        grads[pre + "b2"] = df.sum((0, 1))
        dg = df @ p[pre + "w2"]
        du = dg * _gelu_grad(lc["u"])
        grads[pre + "w1"] = np.einsum("btd,btm->md", lc["h2"], du)
        grads[pre + "b1"] = du.sum((0, 1))
        dh2 = du @ p[pre + "w1"]
        dz_mid, dg2, db2 = _ln_back(dh2, lc["ln2c"], p[pre + "ln2_g"])
        grads[pre + "ln2_g"] = dg2
        grads[pre + "ln2_b"] = db2
        dz_mid = dz_mid + dz  # residual

        # attention branch: z_mid = z_in + concat @ Wo
        dattn_out = dz_mid
        grads[pre + "wo"] = np.einsum("bti,btj->ij", lc["concat"], dattn_out)
        dconcat = dattn_out @ p[pre + "wo"].T
        dheads = dconcat.reshape(b, c.seq_len, c.heads, c.head_dim).transpose(0, 2, 1, 3)
        dA = np.einsum("bhtk,bhsk->bhts", dheads, lc["v"])
        dv = np.einsum("bhts,bhtk->bhsk", lc["attn"], dheads)
        a = lc["attn"]
        ds = a * (dA - np.sum(dA * a, axis=-1, keepdims=True))
        ds *= scale
        dq = np.einsum("bhts,bhsk->bhtk", ds, lc["k"])
        dk = np.einsum("bhts,bhtk->bhsk", ds, lc["q"])
        grads[pre + "wq"] = np.einsum("btd,bhtk->hdk", lc["h1"], dq)
        grads[pre + "wk"] = np.einsum("btd,bhtk->hdk", lc["h1"], dk)
        grads[pre + "wv"] = np.einsum("btd,bhtk->hdk", lc["h1"], dv)
        dh1 = (
            np.einsum("bhtk,hdk->btd", dq, p[pre + "wq"])
            + np.einsum("bhtk,hdk->btd", dk, p[pre + "wk"])
            + np.einsum("bhtk,hdk->btd", dv, p[pre + "wv"])
        )
        dz_in, dg1, db1 = _ln_back(dh1, lc["ln1c"], p[pre + "ln1_g"])
        grads[pre + "ln1_g"] = dg1
        grads[pre + "ln1_b"] = db1
        dz = dz_in + dz_mid  # residual

    grads["pos"] = dz.sum(0)
    grads["cls"] = dz[:, 0, :].sum(0)
    dtok = dz[:, 1:, :]
    grads["patch_w"] = np.einsum("bnd,bnp->dp", dtok, cache["patches"])
    grads["patch_b"] = dtok.sum((0, 1))
    return loss, grads


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_local(
    model: VitModel,
    images: np.ndarray,
    labels: np.ndarray,
    tc: TrainConfig,
) -> tuple[VitModel, list[float]]:
    """Adam training loop; deterministic under tc.seed.

    Returns the trained model (a copy) and per-epoch training accuracy.
    """
    if images.shape[0] == 0:
        raise ContractError("empty dataset")
    model = model.copy()
    p = model.params
    m_state = {k: np.zeros_like(v) for k, v in p.items()}
    v_state = {k: np.zeros_like(v) for k, v in p.items()}
    rng = np.random.default_rng(tc.seed)
    n = images.shape[0]
    step = 0
    history: list[float] = []
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            loss, grads = loss_and_grads(model, images[idx], labels[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"training diverged (loss NaN) at epoch {epoch}")
            step += 1
            bc1 = 1.0 - tc.beta1**step
            bc2 = 1.0 - tc.beta2**step
            for name, g in grads.items():
                m_state[name] = tc.beta1 * m_state[name] + (1 - tc.beta1) * g
                v_state[name] = tc.beta2 * v_state[name] + (1 - tc.beta2) * g * g
                p[name] -= (
                    tc.learning_rate
                    * (m_state[name] / bc1)
                    / (np.sqrt(v_state[name] / bc2) + tc.eps)
                )
        history.append(accuracy(model, images, labels))
    return model, history


def predict(model: VitModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = np.empty(images.shape[0], dtype=np.int64)
    for start in range(0, images.shape[0], batch_size):
        _, logits, _, _ = _forward_batch(
            model, images[start : start + batch_size], want_cache=False
        )
        out[start : start + batch_size] = np.argmax(logits, axis=1)
    return out


def accuracy(model: VitModel, images: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(model, images) == np.asarray(labels)))


def extract_cls_batch(model: VitModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    toks = []
    for start in range(0, images.shape[0], batch_size):
        cls_vec, _, _, _ = _forward_batch(
            model, images[start : start + batch_size], want_cache=False
        )
        toks.append(cls_vec)
    return np.concatenate(toks, axis=0)
