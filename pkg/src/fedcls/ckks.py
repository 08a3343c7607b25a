"""RNS-CKKS approximate homomorphic encryption.

Implements keys, canonical-embedding encoding, encryption, and the leveled
operation set (add, plain add/multiply, ciphertext multiply, relinearize,
rescale, slot rotation, conjugation).

Modulus-chain convention: the *last* prime of the configured chain is the
key-switching prime and never carries ciphertext data.  A fresh ciphertext
therefore has ``level = len(chain) - 1`` active primes and supports
``level - 1`` rescales.  Key switching is the hybrid single-special-prime
variant: the switched polynomial is decomposed per active prime, multiplied
against the raised key material, and the special prime is divided back out
with rounding, which keeps switch noise orders of magnitude below the scale.

Ciphertext and plaintext polynomials are kept in the evaluation (NTT)
domain between operations; rescale and rotations convert internally.
All randomized operations draw from explicit numpy Generators, so fixed
seeds make keys and ciphertexts bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np

from . import ring
from .errors import ConfigError, ContractError, NoiseBudgetError
from .ring import COEFF, EVAL, PrimeRing, RnsPoly

ERROR_SIGMA = 3.2  # discrete Gaussian width for RLWE noise

_U64 = np.uint64

# wire framing of a ciphertext: magic(4) version(1) ring_degree(4) level(1)
# scale(8, float64 LE) component_count(1); body; crc32(4).  The exact scale
# is stored because rescaled scales are not powers of two and round-trips
# must be bit-exact.
CIPHERTEXT_HEADER_BYTES = 19
CIPHERTEXT_CRC_BYTES = 4


@dataclasses.dataclass(frozen=True)
class CkksParams:
    """Scheme parameters; the paper profile is ``PAPER_PARAMS``."""

    ring_degree: int
    prime_bits: tuple[int, ...]
    scale: float
    claimed_security_bits: int | None = None

    def __post_init__(self):
        n = self.ring_degree
        if n < 8 or n & (n - 1):
            raise ConfigError(f"ring degree {n} must be a power of two >= 8")
        if len(self.prime_bits) < 3:
            raise ConfigError(
                "modulus chain needs >= 3 primes (one multiplication plus "
                "rescale after a fresh encryption)"
            )
        if not self.scale > 0:
            raise ConfigError("scale must be positive")

    @property
    def slot_count(self) -> int:
        return self.ring_degree // 2

    @property
    def data_level(self) -> int:
        # last chain prime is reserved for key switching
        return len(self.prime_bits) - 1


PAPER_PARAMS = CkksParams(
    ring_degree=8192,
    prime_bits=(60, 40, 40, 60),
    scale=2.0**40,
    claimed_security_bits=128,
)

# small profile for fast CI runs; correctness-only, no security claim
DESK_PARAMS = CkksParams(
    ring_degree=1024,
    prime_bits=(40, 30, 40),
    scale=2.0**30,
    claimed_security_bits=None,
)


class CkksContext:
    """Precomputed rings and encoding tables for one parameter set."""

    def __init__(self, params: CkksParams):
        self.params = params
        n = params.ring_degree
        primes = ring.find_ntt_primes(params.prime_bits, n)
        self.data_rings: tuple[PrimeRing, ...] = tuple(
            ring.ring_for(q, n) for q in primes[:-1]
        )
        self.special_ring: PrimeRing = ring.ring_for(primes[-1], n)
        self.level_max = len(self.data_rings)

        # slot j of the packed vector lives at the primitive root power 5^j;
        # bins index the length-n complex FFT over all odd root powers
        slots = params.slot_count
        exps = np.empty(slots, dtype=np.int64)
        e = 1
        for j in range(slots):
            exps[j] = e
            e = (e * 5) % (2 * n)
        self._slot_bins = (exps - 1) // 2
        self._conj_bins = (2 * n - exps - 1) // 2
        i = np.arange(n)
        self._psi_pows = np.exp(1j * np.pi * i / n)
        self._psi_inv_pows = np.conj(self._psi_pows)
        self._log2_q = np.cumsum(
            [math.log2(r.q) for r in self.data_rings]
        )  # log2 of the modulus product per level

    def rings_at(self, level: int) -> tuple[PrimeRing, ...]:
        if not 1 <= level <= self.level_max:
            raise ContractError(f"level {level} outside [1, {self.level_max}]")
        return self.data_rings[:level]

    def log2_modulus(self, level: int) -> float:
        return float(self._log2_q[level - 1])


_CTX_CACHE: dict[CkksParams, CkksContext] = {}


def context_for(params: CkksParams) -> CkksContext:
    ctx = _CTX_CACHE.get(params)
    if ctx is None:
        ctx = _CTX_CACHE[params] = CkksContext(params)
    return ctx


# ---------------------------------------------------------------------------
# key material
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class SecretKey:
    """Ternary secret; canonical form is coefficient-domain over all primes."""

    ctx: CkksContext
    poly: RnsPoly  # coeff domain, level_max + 1 rows (data primes then special)

    def __post_init__(self):
        self._ntt_mont: np.ndarray | None = None

    def ntt_mont(self) -> np.ndarray:
        """(level_max+1, n) rows of NTT(s) in Montgomery form."""
        if self._ntt_mont is None:
            rings = list(self.ctx.data_rings) + [self.ctx.special_ring]
            evaled = ring.ntt_forward(self.poly, rings)
            self._ntt_mont = _to_mont(evaled.data, rings)
        return self._ntt_mont


@dataclasses.dataclass
class PublicKey:
    """(b, a) with b = -a*s + e; rows are NTT-Montgomery over the data primes."""

    ctx: CkksContext
    b: np.ndarray
    a: np.ndarray


@dataclasses.dataclass
class KeySwitchKey:
    """Per-digit raised key material for switching some s' to s.

    ``b[j]``/``a[j]`` are (level_max + 1, n) NTT-Montgomery rows over the
    data primes plus the key-switching prime.
    """

    b: list[np.ndarray]
    a: list[np.ndarray]


@dataclasses.dataclass
class RelinKey:
    ctx: CkksContext
    ksk: KeySwitchKey


@dataclasses.dataclass
class GaloisKeys:
    """Rotation keys for power-of-two steps plus the conjugation key."""

    ctx: CkksContext
    step_keys: dict[int, KeySwitchKey]
    conj_key: KeySwitchKey

    @property
    def steps(self) -> tuple[int, ...]:
        return tuple(sorted(self.step_keys))

    def require(self, step: int) -> KeySwitchKey:
        key = self.step_keys.get(step)
        if key is None:
            raise ConfigError(f"missing Galois key for rotation step {step}")
        return key


@dataclasses.dataclass
class Plaintext:
    ctx: CkksContext
    poly: RnsPoly
    scale: float
    level: int

    def __post_init__(self):
        if self.poly.level != self.level:
            raise ContractError("plaintext level does not match residue rows")
        if not self.scale > 0:
            raise ContractError("plaintext scale must be positive")
        self._mont: np.ndarray | None = None

    def mont_rows(self) -> np.ndarray:
        # cached Montgomery form; diagonal plaintexts are reused across samples
        if self._mont is None:
            if self.poly.domain != EVAL:
                raise ContractError("montgomery cache requires evaluation domain")
            self._mont = _to_mont(self.poly.data, self.ctx.rings_at(self.level))
        return self._mont


@dataclasses.dataclass
class Ciphertext:
    ctx: CkksContext
    polys: list[RnsPoly]  # evaluation domain; 2, or 3 between mul and relin
    scale: float
    level: int

    def __post_init__(self):
        if len(self.polys) not in (2, 3):
            raise ContractError("ciphertext must have 2 or 3 components")
        for p in self.polys:
            if p.level != self.level:
                raise ContractError("component level mismatch")
            if p.domain != self.polys[0].domain:
                raise ContractError("component domain mismatch")


def serialized_size(ct: Ciphertext) -> int:
    """Wire size in bytes of a ciphertext under the package format."""
    n = ct.ctx.params.ring_degree
    body = len(ct.polys) * ct.level * n * 8
    return CIPHERTEXT_HEADER_BYTES + body + CIPHERTEXT_CRC_BYTES


# ---------------------------------------------------------------------------
# sampling and Montgomery helpers
# ---------------------------------------------------------------------------


def _to_mont(rows: np.ndarray, rings: Sequence[PrimeRing]) -> np.ndarray:
    out = rows.copy()
    c = np.array([r.r2 for r in rings], dtype=_U64)
    st = ring._stack(rings)
    ring._k_scalar_mont(out, c, st.qs, st.qinvs)
    return out


def _from_mont(rows: np.ndarray, rings: Sequence[PrimeRing]) -> np.ndarray:
    out = rows.copy()
    c = np.ones(len(rings), dtype=_U64)
    st = ring._stack(rings)
    ring._k_scalar_mont(out, c, st.qs, st.qinvs)
    return out


def _mul_mont(a: np.ndarray, b_mont: np.ndarray, rings: Sequence[PrimeRing]) -> np.ndarray:
    st = ring._stack(rings)
    out = np.empty_like(a)
    ring._k_mul_mont(np.ascontiguousarray(a), np.ascontiguousarray(b_mont), st.qs, st.qinvs, out)
    return out


def _small_to_rows(values: np.ndarray, rings: Sequence[PrimeRing]) -> np.ndarray:
    """Signed small integers -> residue rows."""
    rows = np.empty((len(rings), values.shape[0]), dtype=_U64)
    v = values.astype(np.int64)
    for i, r in enumerate(rings):
        rows[i] = np.mod(v, np.int64(r.q)).astype(_U64)
    return rows


def _sample_ternary(rng: np.random.Generator, n: int, rings) -> RnsPoly:
    v = rng.integers(-1, 2, size=n, dtype=np.int64)
    return RnsPoly(_small_to_rows(v, rings), COEFF)


def _sample_gaussian(rng: np.random.Generator, n: int, rings) -> RnsPoly:
    v = np.rint(rng.normal(0.0, ERROR_SIGMA, size=n)).astype(np.int64)
    return RnsPoly(_small_to_rows(v, rings), COEFF)


def _sample_uniform_ntt(rng: np.random.Generator, n: int, rings) -> np.ndarray:
    # uniform in every domain; sampled directly in evaluation form
    rows = np.empty((len(rings), n), dtype=_U64)
    for i, r in enumerate(rings):
        rows[i] = rng.integers(0, r.q, size=n, dtype=_U64)
    return rows


# ---------------------------------------------------------------------------
# keygen
# ---------------------------------------------------------------------------


def _make_ksk(
    ctx: CkksContext,
    rng: np.random.Generator,
    s_mont: np.ndarray,
    sprime_mont: np.ndarray,
) -> KeySwitchKey:
    """Key material switching decryptions under s' to decryptions under s."""
    n = ctx.params.ring_degree
    rings_full = list(ctx.data_rings) + [ctx.special_ring]
    p = ctx.special_ring.q
    bs, as_ = [], []
    for j in range(ctx.level_max):
        a = _sample_uniform_ntt(rng, n, rings_full)  # already Montgomery-uniform
        e = ring.ntt_forward(_sample_gaussian(rng, n, rings_full), rings_full)
        e_mont = _to_mont(e.data, rings_full)
        # b = -a*s + e + g_j*s' where g_j is p at prime j and 0 elsewhere
        b = _mul_mont(_neg_rows(a, rings_full), s_mont, rings_full)
        b = _mont_form_add(b, e_mont, rings_full)
        rj = ctx.data_rings[j]
        gj = rj.to_mont(p % rj.q)  # Montgomery form; product below stays in form
        term = _mul_mont(
            np.full((1, n), gj, dtype=_U64), sprime_mont[j : j + 1], [rj]
        )
        b[j] = _add_row(b[j], term[0], rj)
        bs.append(b)
        as_.append(a)
    return KeySwitchKey(b=bs, a=as_)


def _neg_rows(rows: np.ndarray, rings) -> np.ndarray:
    qs = np.array([r.q for r in rings], dtype=_U64)[:, None]
    return ((qs - rows) * (rows != 0)).astype(_U64)


def _add_rows(a: np.ndarray, b: np.ndarray, rings) -> np.ndarray:
    qs = np.array([r.q for r in rings], dtype=_U64)[:, None]
    t = a + b
    t -= qs * (t >= qs)
    return t


def _sub_rows(a: np.ndarray, b: np.ndarray, rings) -> np.ndarray:
    qs = np.array([r.q for r in rings], dtype=_U64)[:, None]
    t = a + qs - b
    t -= qs * (t >= qs)
    return t


def _add_row(a: np.ndarray, b: np.ndarray, r: PrimeRing) -> np.ndarray:
    q = _U64(r.q)
    t = a + b
    t -= q * (t >= q)
    return t


_mont_form_add = _add_rows  # addition is form-agnostic


def keygen(
    params: CkksParams, seed: int
) -> tuple[SecretKey, PublicKey, RelinKey, GaloisKeys]:
    """Deterministic key generation; identical seeds give identical keys."""
    ctx = context_for(params)
    n = params.ring_degree
    rng = np.random.default_rng(np.random.PCG64(seed))
    rings_full = list(ctx.data_rings) + [ctx.special_ring]
    rings_data = list(ctx.data_rings)

    s_poly = _sample_ternary(rng, n, rings_full)
    sk = SecretKey(ctx, s_poly)
    s_mont_full = sk.ntt_mont()
    s_mont_data = np.ascontiguousarray(s_mont_full[: ctx.level_max])

    a_pk = _sample_uniform_ntt(rng, n, rings_data)
    e_pk = ring.ntt_forward(_sample_gaussian(rng, n, rings_data), rings_data)
    b_pk = _mul_mont(_neg_rows(a_pk, rings_data), s_mont_data, rings_data)
    b_pk = _add_rows(b_pk, _to_mont(e_pk.data, rings_data), rings_data)
    pk = PublicKey(ctx, b=b_pk, a=a_pk)

    # s^2 -> s material; square of the Montgomery form stays in Montgomery form
    s2_mont = _mul_mont(s_mont_full, s_mont_full, rings_full)
    rlk = RelinKey(ctx, _make_ksk(ctx, rng, s_mont_full, s2_mont))

    step_keys: dict[int, KeySwitchKey] = {}
    step = 1
    while step <= params.slot_count // 2:
        g = pow(5, step, 2 * n)
        s_rot = ring.galois_transform(s_poly, g, rings_full)
        s_rot_mont = _to_mont(ring.ntt_forward(s_rot, rings_full).data, rings_full)
        step_keys[step] = _make_ksk(ctx, rng, s_mont_full, s_rot_mont)
        step *= 2
    s_conj = ring.galois_transform(s_poly, 2 * n - 1, rings_full)
    s_conj_mont = _to_mont(ring.ntt_forward(s_conj, rings_full).data, rings_full)
    conj_key = _make_ksk(ctx, rng, s_mont_full, s_conj_mont)
    gks = GaloisKeys(ctx, step_keys, conj_key)
    return sk, pk, rlk, gks


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------

_COEFF_BOUND = 2.0**52  # rounded encodings must stay exactly representable


def encode(
    values: np.ndarray | Sequence[float],
    scale: float,
    ctx: CkksContext,
    level: int | None = None,
) -> Plaintext:
    """Canonical-embedding encoding of a real vector into plaintext slots."""
    if level is None:
        level = ctx.level_max
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ContractError("encode expects a 1-D vector")
    slots = ctx.params.slot_count
    if v.shape[0] > slots:
        raise ContractError(
            f"vector of length {v.shape[0]} exceeds {slots} slots; chunk it first"
        )
    if not np.all(np.isfinite(v)):
        raise ContractError("encode rejects non-finite values")
    if not scale > 0:
        raise ContractError("scale must be positive")

    n = ctx.params.ring_degree
    z = np.zeros(slots, dtype=np.complex128)
    z[: v.shape[0]] = v
    u = np.zeros(n, dtype=np.complex128)
    u[ctx._slot_bins] = z
    u[ctx._conj_bins] = np.conj(z)
    m = np.real(np.fft.fft(u) / n * ctx._psi_inv_pows)
    coeffs = np.rint(m * scale)
    peak = np.max(np.abs(coeffs)) if coeffs.size else 0.0
    if peak >= _COEFF_BOUND:
        raise ContractError(
            f"encoded coefficients reach {peak:.3g}; scale too large for exact rounding"
        )
    rings = ctx.rings_at(level)
    if math.log2(max(peak, 1.0)) >= ctx.log2_modulus(level) - 1:
        raise NoiseBudgetError("encoded value does not fit the modulus at this level")
    rows = _small_to_rows(coeffs.astype(np.int64), rings)
    poly = ring.ntt_forward(RnsPoly(rows, COEFF), rings)
    return Plaintext(ctx, poly, float(scale), level)


def decode(pt: Plaintext) -> np.ndarray:
    """Inverse of :func:`encode` up to CKKS approximation error."""
    ctx = pt.ctx
    rings = ctx.rings_at(pt.level)
    poly = pt.poly
    if poly.domain == EVAL:
        poly = ring.ntt_inverse(poly, rings)
    coeffs = ring.crt_centered(poly, rings).astype(np.float64)
    evals = np.fft.ifft(coeffs * ctx._psi_pows) * ctx.params.ring_degree
    return np.real(evals[ctx._slot_bins]) / pt.scale


# ---------------------------------------------------------------------------
# encrypt / decrypt
# ---------------------------------------------------------------------------


def encrypt(pk: PublicKey, pt: Plaintext, rng: np.random.Generator) -> Ciphertext:
    ctx = pk.ctx
    if pt.level != ctx.level_max:
        raise ContractError(
            f"fresh encryption requires top level {ctx.level_max}, got {pt.level}"
        )
    if pt.poly.domain != EVAL:
        raise ContractError("encrypt expects an evaluation-domain plaintext")
    n = ctx.params.ring_degree
    rings = list(ctx.data_rings)
    u = ring.ntt_forward(_sample_ternary(rng, n, rings), rings)
    e0 = ring.ntt_forward(_sample_gaussian(rng, n, rings), rings)
    e1 = ring.ntt_forward(_sample_gaussian(rng, n, rings), rings)
    c0 = _mul_mont(u.data, pk.b, rings)
    c0 = _add_rows(c0, e0.data, rings)
    c0 = _add_rows(c0, pt.poly.data, rings)
    c1 = _mul_mont(u.data, pk.a, rings)
    c1 = _add_rows(c1, e1.data, rings)
    return Ciphertext(
        ctx,
        [RnsPoly(c0, EVAL), RnsPoly(c1, EVAL)],
        pt.scale,
        ctx.level_max,
    )


def decrypt(sk: SecretKey, ct: Ciphertext) -> Plaintext:
    if len(ct.polys) != 2:
        raise ContractError("decrypt expects 2 components; relinearize first")
    ctx = sk.ctx
    rings = ctx.rings_at(ct.level)
    s_rows = np.ascontiguousarray(sk.ntt_mont()[: ct.level])
    phase = _add_rows(
        ct.polys[0].data, _mul_mont(ct.polys[1].data, s_rows, rings), rings
    )
    coeff = ring.ntt_inverse(RnsPoly(phase, EVAL), rings)
    return Plaintext(ctx, coeff, ct.scale, ct.level)


# ---------------------------------------------------------------------------
# homomorphic operations
# ---------------------------------------------------------------------------


def _require_match(a_scale, b_scale, a_level, b_level):
    if a_level != b_level:
        raise ContractError(f"level mismatch: {a_level} vs {b_level}")
    if a_scale != b_scale:
        raise ContractError(f"scale mismatch: {a_scale!r} vs {b_scale!r}")


def hom_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _require_match(a.scale, b.scale, a.level, b.level)
    if len(a.polys) != len(b.polys):
        raise ContractError("component count mismatch")
    rings = a.ctx.rings_at(a.level)
    polys = [ring.poly_add(x, y, rings) for x, y in zip(a.polys, b.polys)]
    return Ciphertext(a.ctx, polys, a.scale, a.level)


def hom_sub(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _require_match(a.scale, b.scale, a.level, b.level)
    if len(a.polys) != len(b.polys):
        raise ContractError("component count mismatch")
    rings = a.ctx.rings_at(a.level)
    polys = [ring.poly_sub(x, y, rings) for x, y in zip(a.polys, b.polys)]
    return Ciphertext(a.ctx, polys, a.scale, a.level)


def add_plain(a: Ciphertext, p: Plaintext) -> Ciphertext:
    _require_match(a.scale, p.scale, a.level, p.level)
    rings = a.ctx.rings_at(a.level)
    polys = [ring.poly_add(a.polys[0], p.poly, rings)] + [
        poly.copy() for poly in a.polys[1:]
    ]
    return Ciphertext(a.ctx, polys, a.scale, a.level)


def _check_scale_budget(ctx: CkksContext, scale: float, level: int):
    if math.log2(scale) >= ctx.log2_modulus(level) - 1:
        raise NoiseBudgetError(
            f"result scale 2^{math.log2(scale):.1f} overflows the level-{level} modulus"
        )


def mul_plain(a: Ciphertext, p: Plaintext) -> Ciphertext:
    if a.level != p.level:
        raise ContractError(f"level mismatch: {a.level} vs {p.level}")
    rings = a.ctx.rings_at(a.level)
    new_scale = a.scale * p.scale
    _check_scale_budget(a.ctx, new_scale, a.level)
    pm = p.mont_rows()
    polys = [
        RnsPoly(_mul_mont(comp.data, pm, rings), EVAL) for comp in a.polys
    ]
    return Ciphertext(a.ctx, polys, new_scale, a.level)


def hom_mul(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Tensor product; result has 3 components and scale scale_a * scale_b."""
    _require_match(a.scale, b.scale, a.level, b.level)
    if len(a.polys) != 2 or len(b.polys) != 2:
        raise ContractError("hom_mul requires 2-component inputs")
    rings = a.ctx.rings_at(a.level)
    new_scale = a.scale * b.scale
    _check_scale_budget(a.ctx, new_scale, a.level)
    a0, a1 = a.polys
    b0, b1 = b.polys
    d0 = ring.poly_pointwise_mul(a0, b0, rings)
    d1 = ring.poly_add(
        ring.poly_pointwise_mul(a0, b1, rings),
        ring.poly_pointwise_mul(a1, b0, rings),
        rings,
    )
    d2 = ring.poly_pointwise_mul(a1, b1, rings)
    return Ciphertext(a.ctx, [d0, d1, d2], new_scale, a.level)


def _key_switch(
    ctx: CkksContext, d_coeff: RnsPoly, ksk: KeySwitchKey, level: int
) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate ksk against per-prime digits of d and fold out the special prime.

    Returns two (level, n) plain NTT row blocks.
    """
    n = ctx.params.ring_degree
    rings_ext = list(ctx.data_rings[:level]) + [ctx.special_ring]
    sel = list(range(level)) + [ctx.level_max]
    st_ext = ring._stack(rings_ext)
    acc0 = np.zeros((level + 1, n), dtype=_U64)
    acc1 = np.zeros((level + 1, n), dtype=_U64)
    for j in range(level):
        digit = d_coeff.data[j]
        ext = np.empty((level + 1, n), dtype=_U64)
        for i, r in enumerate(rings_ext):
            ext[i] = digit % _U64(r.q)
        ring._k_ntt(ext, st_ext.tw, st_ext.qs, st_ext.qinvs)
        ring._k_mul_mont_acc(
            ext, np.ascontiguousarray(ksk.b[j][sel]), st_ext.qs, st_ext.qinvs, acc0
        )
        ring._k_mul_mont_acc(
            ext, np.ascontiguousarray(ksk.a[j][sel]), st_ext.qs, st_ext.qinvs, acc1
        )
    return (
        _divide_out_special(ctx, acc0, level),
        _divide_out_special(ctx, acc1, level),
    )


def _divide_out_special(ctx: CkksContext, acc: np.ndarray, level: int) -> np.ndarray:
    """Exact divide-and-round by the key-switching prime (rows stay in NTT form)."""
    rings = list(ctx.data_rings[:level])
    sp_ring = ctx.special_ring
    p = sp_ring.q
    sp = RnsPoly(np.ascontiguousarray(acc[level:]), EVAL)
    sp_coeff = ring.ntt_inverse(sp, [sp_ring]).data[0]
    big = sp_coeff > _U64((p - 1) // 2)

    corr = np.empty((level, acc.shape[1]), dtype=_U64)
    for i, r in enumerate(rings):
        qi = _U64(r.q)
        d = sp_coeff % qi
        shift = _U64((r.q - p % r.q) % r.q)
        d = d + shift * big
        d -= qi * (d >= qi)
        corr[i] = d
    st = ring._stack(rings)
    ring._k_ntt(corr, st.tw, st.qs, st.qinvs)
    out = _sub_rows(acc[:level], corr, rings)
    inv_mont = np.array(
        [r.to_mont(pow(p % r.q, -1, r.q)) for r in rings], dtype=_U64
    )
    ring._k_scalar_mont(out, inv_mont, st.qs, st.qinvs)
    return out


def relinearize(a: Ciphertext, rlk: RelinKey) -> Ciphertext:
    """3 -> 2 components; a no-op on 2-component ciphertexts."""
    if len(a.polys) == 2:
        return a
    ctx = a.ctx
    rings = ctx.rings_at(a.level)
    d2 = ring.ntt_inverse(a.polys[2], rings)
    k0, k1 = _key_switch(ctx, d2, rlk.ksk, a.level)
    c0 = _add_rows(a.polys[0].data, k0, rings)
    c1 = _add_rows(a.polys[1].data, k1, rings)
    return Ciphertext(
        ctx, [RnsPoly(c0, EVAL), RnsPoly(c1, EVAL)], a.scale, a.level
    )


def rescale(a: Ciphertext) -> Ciphertext:
    """Drop the last active prime; scale divides by it, level drops by one."""
    if a.level < 2:
        raise NoiseBudgetError("modulus chain exhausted: cannot rescale at level 1")
    ctx = a.ctx
    rings = ctx.rings_at(a.level)
    new_rings = ctx.rings_at(a.level - 1)
    dropped = rings[-1].q
    polys = []
    for comp in a.polys:
        coeff = ring.ntt_inverse(comp, rings)
        down = ring.mod_switch_drop_last(coeff, rings)
        polys.append(ring.ntt_forward(down, new_rings))
    return Ciphertext(ctx, polys, a.scale / dropped, a.level - 1)


def mod_down_to(a: Ciphertext, level: int) -> Ciphertext:
    """Rescale repeatedly until the ciphertext reaches ``level``."""
    out = a
    while out.level > level:
        out = rescale(out)
    return out


def _apply_galois(a: Ciphertext, g: int, ksk: KeySwitchKey) -> Ciphertext:
    if len(a.polys) != 2:
        raise ContractError("rotation requires a 2-component ciphertext")
    ctx = a.ctx
    rings = ctx.rings_at(a.level)
    c0 = ring.galois_transform(ring.ntt_inverse(a.polys[0], rings), g, rings)
    c1 = ring.galois_transform(ring.ntt_inverse(a.polys[1], rings), g, rings)
    k0, k1 = _key_switch(ctx, c1, ksk, a.level)
    out0 = _add_rows(ring.ntt_forward(c0, rings).data, k0, rings)
    return Ciphertext(
        ctx, [RnsPoly(out0, EVAL), RnsPoly(k1, EVAL)], a.scale, a.level
    )


def rotate(a: Ciphertext, k: int, gks: GaloisKeys) -> Ciphertext:
    """Cyclically rotate the slot vector left by k (negative k rotates right).

    Arbitrary steps are composed from the stored power-of-two keys.
    """
    slots = a.ctx.params.slot_count
    k = k % slots
    if k == 0:
        return a
    n = a.ctx.params.ring_degree
    out = a
    step = 1
    while k:
        if k & 1:
            ksk = gks.require(step)
            out = _apply_galois(out, pow(5, step, 2 * n), ksk)
        k >>= 1
        step <<= 1
    return out


def conjugate(a: Ciphertext, gks: GaloisKeys) -> Ciphertext:
    """Slotwise complex conjugation."""
    n = a.ctx.params.ring_degree
    return _apply_galois(a, 2 * n - 1, gks.conj_key)
