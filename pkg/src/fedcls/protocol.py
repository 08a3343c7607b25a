"""Three-role federated protocol: clients, aggregation server, key holder.

Clients train local transformers, extract CLS tokens, and ship them
CKKS-encrypted together with their plaintext classification heads.  The
server averages token ciphertexts homomorphically and runs fully encrypted
inference (packed matrix-vector product, bias add, degree-2 polynomial
activation) without ever holding a secret key.  The key holder decrypts
predictions only.

Level budget note: the configured paper chain affords two rescales after a
fresh encryption.  The standalone aggregation op realizes the encrypted
average literally (ciphertext adds, multiply by 1/N, rescale).  The
end-to-end inference path instead aggregates the encrypted *sum* and folds
the 1/N normalization into the plaintext classifier weights, which computes
the identical logits while leaving enough modulus for the polynomial
activation.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import ckks, data as data_mod, ledger as ledger_mod, vit as vit_mod, wire
from .errors import ConfigError, ContractError, NoiseBudgetError

POLY_FIT_RANGE = (-5.0, 5.0)
POLY_FIT_GRID_POINTS = 1001
A2_SCALE = 2.0**10  # power of two so scale arithmetic commutes exactly

# reference results reported in the source study (printed alongside measured
# values, never asserted; they require the full histopathology dataset)
PAPER_REFERENCE = {
    "encrypted_cls_accuracy_pct": 90.02,
    "unencrypted_cls_accuracy_pct": 96.12,
    "encrypted_gradient_accuracy_pct": 85.35,
    "unencrypted_gradient_accuracy_pct": 95.05,
    "cls_ciphertext_kb": 326.4,
    "gradient_ciphertext_kb": 9794.1,
    "gradient_chunks": 30,
    "encrypted_inference_ms_per_image": 66.0,
    "inversion_psnr_db": 52.26,
    "inversion_ssim": 0.999,
    "inversion_nmi": 0.741,
}


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ClientBundle:
    """Server-bound payload: encrypted tokens and a plaintext head.

    Raw images, plaintext tokens, and labels never enter a bundle.
    """

    client_id: int
    n_tokens: int
    chunks_per_token: int
    ciphertexts: list  # token-major: index j * chunks_per_token + c
    head_w: np.ndarray
    head_b: np.ndarray


@dataclasses.dataclass
class PolyFit:
    a0: float
    a1: float
    a2: float
    rms: float


@dataclasses.dataclass
class GlobalClassifier:
    head_w: np.ndarray  # (K, D) exact mean of client heads
    head_b: np.ndarray  # (K,)
    a0: float
    a1: float
    a2: float
    fit_lo: float = POLY_FIT_RANGE[0]
    fit_hi: float = POLY_FIT_RANGE[1]
    fit_rms: float = 0.0


@dataclasses.dataclass
class RoundResult:
    n_agg: int
    configurations: dict[str, dict]
    agreement_fraction: float
    max_prediction_gap: float
    decrypted_predictions: np.ndarray
    labels: np.ndarray
    ledger: ledger_mod.CommLedger
    client_histories: list[list[float]]
    timings: dict[str, float]
    paper_reference: dict = dataclasses.field(default_factory=lambda: dict(PAPER_REFERENCE))


# ---------------------------------------------------------------------------
# client side
# ---------------------------------------------------------------------------


def encrypt_vector_chunked(
    values: np.ndarray,
    pk: ckks.PublicKey,
    rng: np.random.Generator,
) -> list[ckks.Ciphertext]:
    """Encrypt a vector of any dimension as ceil(dim/slots) ciphertexts."""
    ctx = pk.ctx
    slots = ctx.params.slot_count
    chunks = ledger_mod.chunk_count(values.shape[0], slots)
    out = []
    for c in range(chunks):
        piece = values[c * slots : (c + 1) * slots]
        pt = ckks.encode(piece, ctx.params.scale, ctx)
        out.append(ckks.encrypt(pk, pt, rng))
    return out


def client_encrypt_tokens(
    model: vit_mod.VitModel,
    images: np.ndarray,
    pk: ckks.PublicKey,
    client_id: int,
    rng: np.random.Generator,
) -> ClientBundle:
    """Extract one CLS token per sample and encrypt each into slot 0..D-1."""
    ctx = pk.ctx
    d = model.config.hidden_dim
    chunks = ledger_mod.chunk_count(d, ctx.params.slot_count) if images.shape[0] else 1
    cts = []
    if images.shape[0]:
        tokens = vit_mod.extract_cls_batch(model, images)
        for tok in tokens:
            cts.extend(encrypt_vector_chunked(tok, pk, rng))
    return ClientBundle(
        client_id=client_id,
        n_tokens=int(images.shape[0]),
        chunks_per_token=chunks,
        ciphertexts=cts,
        head_w=model.params["head_w"].copy(),
        head_b=model.params["head_b"].copy(),
    )


def client_encrypt_image_vectors(
    images: np.ndarray, pk: ckks.PublicKey, client_id: int, rng: np.random.Generator
) -> ClientBundle:
    """Gradient-baseline payload: the flattened image vector per sample."""
    ctx = pk.ctx
    dim = int(np.prod(images.shape[1:]))
    chunks = ledger_mod.chunk_count(dim, ctx.params.slot_count) if images.shape[0] else 1
    cts = []
    for img in images:
        cts.extend(encrypt_vector_chunked(img.reshape(-1), pk, rng))
    return ClientBundle(
        client_id=client_id,
        n_tokens=int(images.shape[0]),
        chunks_per_token=chunks,
        ciphertexts=cts,
        head_w=np.zeros((1, 1)),
        head_b=np.zeros(1),
    )


# ---------------------------------------------------------------------------
# server side: aggregation
# ---------------------------------------------------------------------------


def aggregate_encrypted(
    bundles: list[ClientBundle], normalize: bool = True
) -> tuple[list[ckks.Ciphertext], int]:
    """Slotwise aggregate across clients for each aligned sample index.

    With ``normalize`` (the default) this is the encrypted average: a
    ciphertext-add chain, a plaintext multiply by 1/N, and one rescale.
    With ``normalize=False`` it stops at the encrypted sum (same logits once
    1/N is folded into plaintext weights downstream, one level cheaper).

    The inputs carry no secret material; decryption is impossible here.
    """
    if not bundles:
        raise ContractError("need at least one client bundle")
    chunks = bundles[0].chunks_per_token
    if any(b.chunks_per_token != chunks for b in bundles):
        raise ContractError("bundles disagree on chunks per token")
    n_agg = min(b.n_tokens for b in bundles)
    if n_agg == 0:
        return [], 0
    ctx = bundles[0].ciphertexts[0].ctx
    level = bundles[0].ciphertexts[0].level
    for b in bundles:
        for ct in b.ciphertexts:
            if ct.level != level:
                raise ContractError("mixed ciphertext levels across bundles")
    n_clients = len(bundles)
    inv_pt = None
    if normalize and n_clients >= 1:
        inv = np.full(ctx.params.slot_count, 1.0 / n_clients)
        inv_pt = ckks.encode(inv, ctx.params.scale, ctx, level)
    out = []
    for j in range(n_agg):
        for c in range(chunks):
            idx = j * chunks + c
            acc = bundles[0].ciphertexts[idx]
            for b in bundles[1:]:
                acc = ckks.hom_add(acc, b.ciphertexts[idx])
            if inv_pt is not None:
                acc = ckks.rescale(ckks.mul_plain(acc, inv_pt))
            out.append(acc)
    return out, n_agg


def average_heads(
    heads: list[tuple[np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray]:
    """Exact elementwise mean of client heads (pairwise 64-bit summation)."""
    if not heads:
        raise ContractError("no heads to average")
    shapes = {(w.shape, b.shape) for w, b in heads}
    if len(shapes) != 1:
        raise ContractError("client heads have mismatched shapes")
    w_mean = np.mean(np.stack([w for w, _ in heads]), axis=0)
    b_mean = np.mean(np.stack([b for _, b in heads]), axis=0)
    return w_mean, b_mean


# ---------------------------------------------------------------------------
# polynomial activation fit
# ---------------------------------------------------------------------------


def _logistic(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def fit_poly_activation(
    range_lo: float = POLY_FIT_RANGE[0],
    range_hi: float = POLY_FIT_RANGE[1],
    target=_logistic,
) -> PolyFit:
    """Least-squares degree-2 fit of the scalar activation over a uniform grid.

    The elementwise activation approximated for encrypted inference is the
    logistic function: it is the monotone scalar stand-in for the softmax
    (argmax-preserving in exact arithmetic).  The residual RMS quantifies
    how non-softmax the degree-2 surrogate is.
    """
    if not range_lo < range_hi:
        raise ContractError("degenerate fit range")
    x = np.linspace(range_lo, range_hi, POLY_FIT_GRID_POINTS)
    y = target(x)
    vander = np.stack([np.ones_like(x), x, x * x], axis=1)
    coeffs, *_ = np.linalg.lstsq(vander, y, rcond=None)
    resid = vander @ coeffs - y
    rms = float(np.sqrt(np.mean(resid**2)))
    return PolyFit(float(coeffs[0]), float(coeffs[1]), float(coeffs[2]), rms)


def poly2(x: np.ndarray, a0: float, a1: float, a2: float) -> np.ndarray:
    return a0 + a1 * x + a2 * x * x


# ---------------------------------------------------------------------------
# server side: encrypted inference
# ---------------------------------------------------------------------------


def _next_pow2(x: int) -> int:
    return 1 << max(0, x - 1).bit_length() if x > 1 else 1


class MatvecPlan:
    """Packed diagonals for a K x D plaintext matrix against one ciphertext.

    Uses the input-packed diagonal method: K' rotations and plaintext
    multiplies (one multiplicative stage), then a log2(D'/K') rotate-and-add
    fold that lands logit k in slot k.  Slots >= K' hold bounded partial
    sums; downstream consumers read slots 0..K-1 only.
    """

    def __init__(self, ctx: ckks.CkksContext, weights: np.ndarray, bias: np.ndarray):
        k, d = weights.shape
        slots = ctx.params.slot_count
        self.ctx = ctx
        self.k = k
        self.d = d
        self.k_pad = _next_pow2(max(k, 2))
        self.d_pad = max(_next_pow2(d), self.k_pad)
        if self.d_pad != slots and 2 * self.d_pad > slots:
            raise ConfigError(
                f"packed matvec needs 2*{self.d_pad} <= {slots} slots (or exactly "
                f"{slots}) for wrap-around replication"
            )
        w_pad = np.zeros((self.k_pad, self.d_pad))
        w_pad[:k, :d] = weights
        self.diagonals = []
        i = np.arange(self.d_pad)
        for t in range(self.k_pad):
            vec = np.zeros(slots)
            vec[: self.d_pad] = w_pad[i % self.k_pad, (i + t) % self.d_pad]
            self.diagonals.append(vec)
        self.bias_vec = np.zeros(slots)
        self.bias_vec[:k] = bias
        self._diag_pts: dict[tuple[float, int], list[ckks.Plaintext]] = {}

    def _diag_plaintexts(self, level: int) -> list[ckks.Plaintext]:
        scale = self.ctx.params.scale
        key = (scale, level)
        pts = self._diag_pts.get(key)
        if pts is None:
            pts = [
                ckks.encode(vec, scale, self.ctx, level) for vec in self.diagonals
            ]
            self._diag_pts[key] = pts
        return pts

    def apply(self, ct: ckks.Ciphertext, gks: ckks.GaloisKeys) -> ckks.Ciphertext:
        """Logits ciphertext: slot k holds row_k . token + bias_k for k < K."""
        slots = self.ctx.params.slot_count
        if self.d_pad != slots:
            # wrap-around replica so baby-step rotations see a D'-cyclic vector
            ct = ckks.hom_add(ct, ckks.rotate(ct, -self.d_pad, gks))
        pts = self._diag_plaintexts(ct.level)
        acc = None
        rotated = ct
        for t in range(self.k_pad):
            if t > 0:
                rotated = ckks.rotate(ct, t, gks)
            term = ckks.mul_plain(rotated, pts[t])
            acc = term if acc is None else ckks.hom_add(acc, term)
        step = self.k_pad
        while step < self.d_pad:
            acc = ckks.hom_add(acc, ckks.rotate(acc, step, gks))
            step <<= 1
        out = ckks.rescale(acc)
        bias_pt = ckks.encode(self.bias_vec, out.scale, self.ctx, out.level)
        return ckks.add_plain(out, bias_pt)


def encrypted_matvec(
    weights: np.ndarray,
    bias: np.ndarray,
    ct: ckks.Ciphertext,
    gks: ckks.GaloisKeys,
) -> ckks.Ciphertext:
    """One-shot packed matrix-vector product (see MatvecPlan for reuse)."""
    return MatvecPlan(ct.ctx, weights, bias).apply(ct, gks)


def encrypted_poly_activation(
    ct_logits: ckks.Ciphertext,
    a0: float,
    a1: float,
    a2: float,
    rlk: ckks.RelinKey,
) -> ckks.Ciphertext:
    """Slotwise a0 + a1*x + a2*x^2 under encryption.

    Needs two remaining levels: one for the square's rescale, with the final
    plaintext multiplies landing on the last prime at a reduced output
    scale (A2_SCALE times the rescaled square's scale).
    """
    if ct_logits.level < 2:
        raise NoiseBudgetError(
            "polynomial activation needs at least 2 remaining levels"
        )
    ctx = ct_logits.ctx
    slots = ctx.params.slot_count
    sq = ckks.rescale(ckks.relinearize(ckks.hom_mul(ct_logits, ct_logits), rlk))
    a2_pt = ckks.encode(np.full(slots, a2), A2_SCALE, ctx, sq.level)
    term2 = ckks.mul_plain(sq, a2_pt)
    a1_pt = ckks.encode(
        np.full(slots, a1), ct_logits.scale * A2_SCALE, ctx, ct_logits.level
    )
    term1 = ckks.rescale(ckks.mul_plain(ct_logits, a1_pt))
    combined = ckks.hom_add(term2, term1)
    a0_pt = ckks.encode(np.full(slots, a0), combined.scale, ctx, combined.level)
    return ckks.add_plain(combined, a0_pt)


class EncryptedInferencePipeline:
    """Alg-2 style server inference: matvec, bias, degree-2 activation."""

    def __init__(
        self,
        ctx: ckks.CkksContext,
        classifier: GlobalClassifier,
        gks: ckks.GaloisKeys,
        rlk: ckks.RelinKey,
        weight_divisor: float = 1.0,
    ):
        self.plan = MatvecPlan(
            ctx, classifier.head_w / weight_divisor, classifier.head_b
        )
        self.classifier = classifier
        self.gks = gks
        self.rlk = rlk

    def infer_one(self, ct_token: ckks.Ciphertext) -> ckks.Ciphertext:
        logits = self.plan.apply(ct_token, self.gks)
        c = self.classifier
        return encrypted_poly_activation(logits, c.a0, c.a1, c.a2, self.rlk)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, k: int) -> np.ndarray:
    m = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        m[int(t), int(p)] += 1
    return m


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray, k: int) -> dict:
    """Accuracy plus macro precision/recall/F1 from the confusion matrix."""
    m = confusion_matrix(y_true, y_pred, k)
    total = m.sum()
    acc = float(np.trace(m) / total) if total else 0.0
    precs, recs, f1s = [], [], []
    for c in range(k):
        tp = m[c, c]
        fp = m[:, c].sum() - tp
        fn = m[c, :].sum() - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precs.append(prec)
        recs.append(rec)
        f1s.append(f1)
    return {
        "accuracy": acc,
        "precision_macro": float(np.mean(precs)),
        "recall_macro": float(np.mean(recs)),
        "f1_macro": float(np.mean(f1s)),
    }


def majority_labels(label_sets: list[np.ndarray], n_agg: int) -> np.ndarray:
    """Per aligned index: majority label across clients, ties to client 1."""
    out = np.empty(n_agg, dtype=np.int64)
    for j in range(n_agg):
        votes = [int(labels[j]) for labels in label_sets]
        counts: dict[int, int] = {}
        for v in votes:
            counts[v] = counts.get(v, 0) + 1
        best = max(counts.values())
        winners = [v for v, c in counts.items() if c == best]
        out[j] = votes[0] if votes[0] in winners else winners[0]
    return out


# ---------------------------------------------------------------------------
# the full round
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class RoundConfig:
    clients: int = 3
    vit_profile: str = "desk"  # "desk" or "paper"
    ckks_params: ckks.CkksParams = ckks.PAPER_PARAMS
    train_per_client: int = 120
    eval_per_client: int = 48
    epochs: int = 6
    learning_rate: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    shared_init: bool = True  # shared-seed initialization across clients

    def vit_config(self) -> vit_mod.VitConfig:
        if self.vit_profile == "desk":
            return vit_mod.DESK_VIT
        if self.vit_profile == "paper":
            return vit_mod.PAPER_VIT
        raise ConfigError(f"unknown profile {self.vit_profile!r}")


def run_round(cfg: RoundConfig) -> RoundResult:
    """Execute one logical federated round across all four configurations."""
    timings: dict[str, float] = {}
    t_start = time.perf_counter()
    vcfg = cfg.vit_config()
    k_classes = vcfg.classes
    comm = ledger_mod.CommLedger()

    sk, pk, rlk, gks = ckks.keygen(cfg.ckks_params, seed=cfg.seed)
    ctx = sk.ctx
    timings["keygen_s"] = time.perf_counter() - t_start

    # --- clients: data, local training, token extraction -------------------
    t0 = time.perf_counter()
    client_train, client_eval, client_eval_labels = [], [], []
    models, histories = [], []
    for i in range(cfg.clients):
        imgs, labels = data_mod.generate_dataset(
            cfg.train_per_client + cfg.eval_per_client,
            vcfg.image_h,
            vcfg.image_w,
            seed=cfg.seed * 1009 + 17 * i,
        )
        client_train.append((imgs[: cfg.train_per_client], labels[: cfg.train_per_client]))
        client_eval.append(imgs[cfg.train_per_client :])
        client_eval_labels.append(labels[cfg.train_per_client :])

        init_seed = cfg.seed if cfg.shared_init else cfg.seed * 31 + i
        model = vit_mod.init_model(vcfg, seed=init_seed)
        tc = vit_mod.TrainConfig(
            epochs=cfg.epochs,
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            seed=cfg.seed * 101 + i,
        )
        model, hist = vit_mod.train_local(model, *client_train[i], tc)
        models.append(model)
        histories.append(hist)
    timings["local_training_s"] = time.perf_counter() - t0

    # --- client-side encryption (CLS tokens and gradient-baseline vectors) -
    t0 = time.perf_counter()
    bundles, grad_bundles = [], []
    plain_tokens = []
    for i in range(cfg.clients):
        rng_tok = np.random.default_rng(cfg.seed * 7919 + i)
        bundle = client_encrypt_tokens(models[i], client_eval[i], pk, i, rng_tok)
        bundles.append(bundle)
        comm.record(
            f"client_{i}",
            "server",
            "cls_tokens",
            len(wire.serialize_bundle(bundle)),
            chunks=bundle.n_tokens * bundle.chunks_per_token,
        )
        rng_grad = np.random.default_rng(cfg.seed * 6007 + i)
        gbundle = client_encrypt_image_vectors(client_eval[i], pk, i, rng_grad)
        grad_bundles.append(gbundle)
        comm.record(
            f"client_{i}",
            "server",
            "gradient_vectors",
            len(wire.serialize_bundle(gbundle)),
            chunks=gbundle.n_tokens * gbundle.chunks_per_token,
        )
        plain_tokens.append(vit_mod.extract_cls_batch(models[i], client_eval[i]))
    timings["client_encryption_s"] = time.perf_counter() - t0

    # --- server: aggregation ----------------------------------------------
    t0 = time.perf_counter()
    sum_cts, n_agg = aggregate_encrypted(bundles, normalize=False)
    grad_mean_cts, _ = aggregate_encrypted(grad_bundles, normalize=True)
    timings["aggregation_s"] = time.perf_counter() - t0

    labels_agg = majority_labels(client_eval_labels, n_agg)
    mean_tokens = np.mean(
        np.stack([t[:n_agg] for t in plain_tokens]), axis=0
    )

    # --- global classifier --------------------------------------------------
    w_mean, b_mean = average_heads([(b.head_w, b.head_b) for b in bundles])
    fit = fit_poly_activation()
    classifier = GlobalClassifier(
        head_w=w_mean, head_b=b_mean, a0=fit.a0, a1=fit.a1, a2=fit.a2, fit_rms=fit.rms
    )

    # --- server: encrypted inference on aggregated tokens -------------------
    t0 = time.perf_counter()
    pipeline = EncryptedInferencePipeline(
        ctx, classifier, gks, rlk, weight_divisor=float(cfg.clients)
    )
    encrypted_preds = [pipeline.infer_one(ct) for ct in sum_cts]
    for ct in encrypted_preds:
        comm.record("server", "keyholder", "predictions", ckks.serialized_size(ct))
    timings["encrypted_inference_s"] = time.perf_counter() - t0
    timings["encrypted_inference_ms_per_image"] = (
        1000.0 * timings["encrypted_inference_s"] / max(n_agg, 1)
    )

    # --- key holder: decryption --------------------------------------------
    decrypted = np.stack(
        [ckks.decode(ckks.decrypt(sk, ct))[:k_classes] for ct in encrypted_preds]
    ) if encrypted_preds else np.zeros((0, k_classes))
    enc_pred_labels = (
        np.argmax(decrypted, axis=1) if n_agg else np.zeros(0, dtype=np.int64)
    )

    # --- plaintext reference paths ------------------------------------------
    logits_plain = mean_tokens @ classifier.head_w.T + classifier.head_b
    softmax_pred = np.argmax(logits_plain, axis=1)
    poly_plain = poly2(logits_plain, fit.a0, fit.a1, fit.a2)
    poly_pred = np.argmax(poly_plain, axis=1)

    agreement = (
        float(np.mean(enc_pred_labels == poly_pred)) if n_agg else 1.0
    )
    max_gap = (
        float(np.max(np.abs(decrypted - poly_plain))) if n_agg else 0.0
    )

    # unencrypted-gradient baseline: client-side plaintext inference with the
    # local models (the standard-FL stand-in; see report notes)
    local_true, local_pred = [], []
    for i in range(cfg.clients):
        local_true.append(client_eval_labels[i])
        local_pred.append(vit_mod.predict(models[i], client_eval[i]))
    local_true = np.concatenate(local_true)
    local_pred = np.concatenate(local_pred)

    configurations = {
        "encrypted_cls": {
            "inference": "server_encrypted",
            "available": True,
            **classification_metrics(labels_agg, enc_pred_labels, k_classes),
        },
        "unencrypted_cls": {
            "inference": "plaintext_softmax",
            "available": True,
            **classification_metrics(labels_agg, softmax_pred, k_classes),
        },
        "unencrypted_cls_poly2": {
            "inference": "plaintext_poly2",
            "available": True,
            **classification_metrics(labels_agg, poly_pred, k_classes),
        },
        "encrypted_gradient": {
            "inference": "not_available",
            "available": False,
            "aggregated_ciphertexts": len(grad_mean_cts),
        },
        "unencrypted_gradient": {
            "inference": "client_plaintext",
            "available": True,
            **classification_metrics(local_true, local_pred, k_classes),
        },
    }
    timings["total_s"] = time.perf_counter() - t_start
    return RoundResult(
        n_agg=n_agg,
        configurations=configurations,
        agreement_fraction=agreement,
        max_prediction_gap=max_gap,
        decrypted_predictions=decrypted,
        labels=labels_agg,
        ledger=comm,
        client_histories=histories,
        timings=timings,
    )


REPORT_SCHEMA_VERSION = 1


def round_report(cfg: RoundConfig, result: RoundResult) -> dict:
    """Deterministic machine-readable report (timings live in a sidecar)."""
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "round": {
            "clients": cfg.clients,
            "vit_profile": cfg.vit_profile,
            "ckks_ring_degree": cfg.ckks_params.ring_degree,
            "ckks_prime_bits": list(cfg.ckks_params.prime_bits),
            "seed": cfg.seed,
            "n_agg": result.n_agg,
        },
        "configurations": result.configurations,
        "agreement_encrypted_vs_plain_poly2": result.agreement_fraction,
        "max_prediction_gap": result.max_prediction_gap,
        "client_final_train_accuracy": [h[-1] if h else None for h in result.client_histories],
        "communication": result.ledger.summary(),
        "paper_reference": result.paper_reference,
    }
