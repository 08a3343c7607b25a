"""Ridge-regression model inversion and image-similarity metrics.

Quantifies leakage from shared features: a linear map is fit from feature
vectors to pixels on a training split and evaluated on held-out samples
with PSNR, SSIM, and normalized mutual information.  Run against plaintext
features it demonstrates reconstruction; run against serialized ciphertext
bytes (the strongest keyless statistical adversary expressible here) it
demonstrates what encryption removes.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ckks, wire
from .errors import ContractError, NumericalError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
NMI_BINS = 64
DEFAULT_RIDGE_LAMBDA = 1e-3


@dataclasses.dataclass
class InversionMap:
    matrix: np.ndarray  # (feature_dim, pixel_dim)
    ridge_lambda: float
    feature_kind: str
    image_shape: tuple[int, ...]


@dataclasses.dataclass
class AttackReport:
    feature_kind: str
    n_train: int
    n_eval: int
    psnr: list[float]
    ssim: list[float]
    nmi: list[float]

    @property
    def psnr_avg(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def ssim_avg(self) -> float:
        return float(np.mean(self.ssim))

    @property
    def nmi_avg(self) -> float:
        return float(np.mean(self.nmi))

    def to_dict(self) -> dict:
        return {
            "feature_kind": self.feature_kind,
            "n_train": self.n_train,
            "n_eval": self.n_eval,
            "psnr_avg_db": self.psnr_avg,
            "ssim_avg": self.ssim_avg,
            "nmi_avg": self.nmi_avg,
            "psnr_db": list(self.psnr),
            "ssim": list(self.ssim),
            "nmi": list(self.nmi),
        }


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------


def fit_inversion(
    features: np.ndarray,
    images: np.ndarray,
    ridge_lambda: float = DEFAULT_RIDGE_LAMBDA,
    feature_kind: str = "cls-token",
) -> InversionMap:
    """Solve (Z'Z + lambda I) M = Z'X at 64-bit via the normal equations."""
    z = np.asarray(features, dtype=np.float64)
    if z.ndim != 2:
        raise ContractError("features must be (n, feature_dim)")
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.shape[0] != z.shape[0]:
        raise ContractError("feature/image counts differ")
    if ridge_lambda <= 0:
        raise ContractError("ridge strength must be positive")
    n, f = z.shape
    if n < f / 10:
        raise ContractError(
            f"{n} training pairs are hopeless for {f}-dim features (need >= dim/10)"
        )
    x = imgs.reshape(n, -1)
    gram = z.T @ z + ridge_lambda * np.eye(f)
    try:
        m = np.linalg.solve(gram, z.T @ x)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"ridge system singular (cond ~ {np.linalg.cond(gram):.3g})"
        ) from exc
    if not np.all(np.isfinite(m)):
        raise NumericalError(
            f"ridge solution non-finite (cond ~ {np.linalg.cond(gram):.3g})"
        )
    return InversionMap(m, ridge_lambda, feature_kind, tuple(imgs.shape[1:]))


def reconstruct(inv: InversionMap, feature: np.ndarray) -> np.ndarray:
    """x_hat = z M, clipped to [0, 1], reshaped like the training images."""
    z = np.asarray(feature, dtype=np.float64)
    if z.shape[-1] != inv.matrix.shape[0]:
        raise ContractError(
            f"feature dim {z.shape[-1]} does not match map {inv.matrix.shape[0]}"
        )
    flat = np.clip(z @ inv.matrix, 0.0, 1.0)
    return flat.reshape(z.shape[:-1] + inv.image_shape)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    for arr in (a, b):
        if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
            raise ContractError("pixel values must lie in [0, 1]")
    return a, b


def _grayscale(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=-1) if img.ndim == 3 else img


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) on the [0,1] range; identical images cap at 100 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over 8x8 uniform windows, stride 1, on grayscale."""
    a, b = _check_pair(a, b)
    ga, gb = _grayscale(a), _grayscale(b)
    if min(ga.shape) < SSIM_WINDOW:
        raise ContractError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    wa = sliding_window_view(ga, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(gb, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = (wa * wa).mean(axis=(-1, -2)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-1, -2)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def nmi(a: np.ndarray, b: np.ndarray, bins: int = NMI_BINS) -> float:
    """I(A;B) / sqrt(H(A) H(B)) over joint intensity histograms (0 log 0 = 0)."""
    a, b = _check_pair(a, b)
    ga = np.clip(_grayscale(a).reshape(-1), 0.0, 1.0)
    gb = np.clip(_grayscale(b).reshape(-1), 0.0, 1.0)
    joint, _, _ = np.histogram2d(ga, gb, bins=bins, range=[[0, 1], [0, 1]])
    p = joint / joint.sum()
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    nz = p > 0
    outer = np.outer(px, py)
    mi = float(np.sum(p[nz] * np.log(p[nz] / outer[nz])))
    hx = float(-np.sum(px[px > 0] * np.log(px[px > 0])))
    hy = float(-np.sum(py[py > 0] * np.log(py[py > 0])))
    if hx == 0.0 or hy == 0.0:
        return 0.0  # a constant image carries no information to normalize by
    return mi / np.sqrt(hx * hy)


# ---------------------------------------------------------------------------
# attack suite
# ---------------------------------------------------------------------------


def ciphertext_byte_features(
    cts: list[ckks.Ciphertext], pixel_dim: int
) -> np.ndarray:
    """Adversary view of encrypted tokens: leading serialized bytes / 255."""
    rows = []
    for ct in cts:
        blob = wire.serialize_ciphertext(ct)
        body = blob[: pixel_dim]
        rows.append(np.frombuffer(body, dtype=np.uint8).astype(np.float64) / 255.0)
    return np.stack(rows)


def evaluate_reconstructions(
    inv: InversionMap,
    features: np.ndarray,
    images: np.ndarray,
    n_train: int,
) -> AttackReport:
    psnrs, ssims, nmis = [], [], []
    for z, x in zip(features, images):
        xh = reconstruct(inv, z)
        psnrs.append(psnr(x, xh))
        ssims.append(ssim(x, xh))
        nmis.append(nmi(x, xh))
    return AttackReport(
        feature_kind=inv.feature_kind,
        n_train=n_train,
        n_eval=len(psnrs),
        psnr=psnrs,
        ssim=ssims,
        nmi=nmis,
    )


def run_attack_suite(
    plain_features: np.ndarray,
    cipher_features: np.ndarray,
    images: np.ndarray,
    ridge_lambda: float = DEFAULT_RIDGE_LAMBDA,
    train_fraction: float = 0.5,
) -> tuple[AttackReport, AttackReport]:
    """Fit both adversary arms on a train split, evaluate on the held-out rest.

    Arm one regresses on the plaintext features an unprotected protocol
    would expose; arm two sees only serialized ciphertext bytes.
    """
    n = images.shape[0]
    n_train = int(n * train_fraction)
    if n_train < 1 or n_train >= n:
        raise ContractError("split leaves an empty train or eval set")
    reports = []
    for feats, kind in (
        (plain_features, "cls-token"),
        (cipher_features, "ciphertext-bytes"),
    ):
        inv = fit_inversion(
            feats[:n_train], images[:n_train], ridge_lambda, feature_kind=kind
        )
        reports.append(
            evaluate_reconstructions(inv, feats[n_train:], images[n_train:], n_train)
        )
    return reports[0], reports[1]


def linear_synthetic_fixture(
    n: int,
    feature_dim: int = 64,
    image_hw: int = 16,
    seed: int = 0,
    noise_sigma: float = 0.01,
) -> tuple[np.ndarray, np.ndarray]:
    """Images that are a fixed linear map of the features plus small noise.

    Every pixel is a sparse convex combination of two features (weights
    0.75/0.25), so images are exactly linear in the features with no
    constant term (intercept-free ridge recovers the map up to the noise
    floor) while per-pixel variance stays high enough that a
    feature-independent regressor cannot beat the mean image.
    """
    rng = np.random.default_rng(seed)
    pixel_dim = image_hw * image_hw * 3
    mix = np.zeros((feature_dim, pixel_dim))
    for p in range(pixel_dim):
        j1, j2 = rng.choice(feature_dim, size=2, replace=False)
        mix[j1, p] = 0.75
        mix[j2, p] = 0.25
    z = rng.uniform(0.0, 1.0, (n, feature_dim))
    x = z @ mix + rng.normal(0.0, noise_sigma, (n, pixel_dim))
    images = np.clip(x, 0.0, 1.0).reshape(n, image_hw, image_hw, 3)
    return z, images
