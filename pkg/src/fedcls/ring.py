"""Exact modular polynomial arithmetic over NTT-friendly prime rings.

Polynomials live in Z_q[x] / (x^n + 1) with the negacyclic convention
x^n = -1.  An RNS element carries one length-n residue row per active
prime; all arithmetic is exact 64-bit modular integer arithmetic (no
floating point anywhere in this module).

Hot loops (butterflies, pointwise products) are numba-compiled and use
Montgomery reduction with R = 2^64; twiddle tables are stored in
Montgomery form so each butterfly costs a single reduction.  Everything
else is plain numpy on (level, n) uint64 arrays.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np
from numba import njit, uint64

from .errors import ConfigError, ContractError

COEFF = "coeff"
EVAL = "eval"

_U64 = np.uint64
_R64 = 1 << 64

# deterministic Miller-Rabin witness set, valid for all n < 3.3e24
_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime_u64(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_WITNESSES:
        if n % p == 0:
            return n == p
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def find_ntt_primes(bit_sizes: Sequence[int], ring_degree: int) -> list[int]:
    """Largest distinct primes of the given bit lengths with q = 1 (mod 2n).

    Scans downward from the top of each bit range so every party derives
    the identical chain from the parameter list alone.
    """
    step = 2 * ring_degree
    found: list[int] = []
    used: set[int] = set()
    for bits in bit_sizes:
        if bits < 20 or bits > 62:
            raise ConfigError(f"prime bit size {bits} outside supported range [20, 62]")
        q = ((1 << bits) - 1) // step * step + 1
        while True:
            if q.bit_length() < bits:
                raise ConfigError(f"no {bits}-bit prime = 1 mod {step} found")
            if q not in used and is_prime_u64(q):
                break
            q -= step
        found.append(q)
        used.add(q)
    return found


def _primitive_2n_root(q: int, n: int) -> int:
    """Smallest-base primitive 2n-th root of unity mod q (psi^n = -1)."""
    if (q - 1) % (2 * n) != 0:
        raise ConfigError(f"q={q} is not 1 mod 2n for n={n}")
    exp = (q - 1) // (2 * n)
    for t in range(2, q):
        psi = pow(t, exp, q)
        if pow(psi, n, q) == q - 1:
            return psi
    raise ConfigError(f"no primitive 2n-th root mod {q}")


def _bit_reverse_permute(values: list[int]) -> list[int]:
    n = len(values)
    bits = n.bit_length() - 1
    out = [0] * n
    for i, v in enumerate(values):
        j = int(f"{i:0{bits}b}"[::-1], 2) if bits else 0
        out[j] = v
    return out


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(uint64(uint64, uint64), cache=True, inline="always")
def _mulhi(a, b):
    a_lo = a & uint64(0xFFFFFFFF)
    a_hi = a >> uint64(32)
    b_lo = b & uint64(0xFFFFFFFF)
    b_hi = b >> uint64(32)
    t = a_hi * b_lo + ((a_lo * b_lo) >> uint64(32))
    u = a_lo * b_hi + (t & uint64(0xFFFFFFFF))
    return a_hi * b_hi + (t >> uint64(32)) + (u >> uint64(32))


@njit(uint64(uint64, uint64, uint64, uint64), cache=True, inline="always")
def _mont(a, b, q, qinv_neg):
    # a*b*2^-64 mod q; needs a*b < q*2^64, so a < 2^64 and b < q suffice
    lo = a * b
    hi = _mulhi(a, b)
    m = lo * qinv_neg
    t = hi + _mulhi(m, q)
    if lo != uint64(0):
        t += uint64(1)
    if t >= q:
        t -= q
    return t


@njit(cache=True)
def _k_ntt(x, tw_mont, qs, qinvs):
    rows, n = x.shape
    for r in range(rows):
        q = qs[r]
        qinv = qinvs[r]
        w = tw_mont[r]
        a = x[r]
        half = n >> 1
        blocks = 1
        while half >= 1:
            for b in range(blocks):
                wb = w[blocks + b]
                base = 2 * b * half
                for j in range(base, base + half):
                    t = _mont(a[j + half], wb, q, qinv)
                    u = a[j]
                    s0 = u + t
                    if s0 >= q:
                        s0 -= q
                    s1 = u + q - t
                    if s1 >= q:
                        s1 -= q
                    a[j] = s0
                    a[j + half] = s1
            blocks <<= 1
            half >>= 1


@njit(cache=True)
def _k_intt(x, twinv_mont, ninv_mont, qs, qinvs):
    rows, n = x.shape
    for r in range(rows):
        q = qs[r]
        qinv = qinvs[r]
        w = twinv_mont[r]
        a = x[r]
        half = 1
        idx = 0
        while half < n:
            blocks = n // (2 * half)
            for b in range(blocks):
                wb = w[idx]
                idx += 1
                base = 2 * b * half
                for j in range(base, base + half):
                    u = a[j]
                    t = a[j + half]
                    s0 = u + t
                    if s0 >= q:
                        s0 -= q
                    d = u + q - t
                    if d >= q:
                        d -= q
                    a[j] = s0
                    a[j + half] = _mont(d, wb, q, qinv)
            half <<= 1
        ninv = ninv_mont[r]
        for j in range(n):
            a[j] = _mont(a[j], ninv, q, qinv)


@njit(cache=True)
def _k_mul_mont(a, b, qs, qinvs, out):
    # out = a * b * 2^-64; pass b in Montgomery form to get a plain product
    rows, n = a.shape
    for r in range(rows):
        q = qs[r]
        qinv = qinvs[r]
        for j in range(n):
            out[r, j] = _mont(a[r, j], b[r, j], q, qinv)


@njit(cache=True)
def _k_mul_plainform(a, b, qs, qinvs, r2s, out):
    # plain a*b mod q via to-Montgomery then reduce (two reductions)
    rows, n = a.shape
    for r in range(rows):
        q = qs[r]
        qinv = qinvs[r]
        r2 = r2s[r]
        for j in range(n):
            am = _mont(a[r, j], r2, q, qinv)
            out[r, j] = _mont(b[r, j], am, q, qinv)


@njit(cache=True)
def _k_mul_mont_acc(a, b, qs, qinvs, acc):
    # acc = (acc + a*b*2^-64) mod q
    rows, n = a.shape
    for r in range(rows):
        q = qs[r]
        qinv = qinvs[r]
        for j in range(n):
            t = acc[r, j] + _mont(a[r, j], b[r, j], q, qinv)
            if t >= q:
                t -= q
            acc[r, j] = t


@njit(cache=True)
def _k_scalar_mont(x, c_mont, qs, qinvs):
    # in place x[r] *= c[r] with c in Montgomery form
    rows, n = x.shape
    for r in range(rows):
        q = qs[r]
        qinv = qinvs[r]
        c = c_mont[r]
        for j in range(n):
            x[r, j] = _mont(x[r, j], c, q, qinv)


# ---------------------------------------------------------------------------
# rings
# ---------------------------------------------------------------------------


class PrimeRing:
    """One NTT-friendly prime modulus with precomputed twiddle tables.

    Immutable after construction; instances are interned via :func:`ring_for`
    so identical (q, n) pairs share tables.
    """

    def __init__(self, q: int, n: int):
        if n < 2 or n & (n - 1):
            raise ConfigError(f"ring degree {n} is not a power of two")
        if not is_prime_u64(q):
            raise ConfigError(f"modulus {q} is not prime")
        if (q - 1) % (2 * n) != 0:
            raise ConfigError(f"modulus {q} is not 1 mod 2n")
        self.q = q
        self.n = n
        self.psi = _primitive_2n_root(q, n)

        r_mod = _R64 % q
        self.r2 = r_mod * r_mod % q
        self.qinv_neg = (_R64 - pow(q, -1, _R64)) % _R64
        self.n_inv = pow(n, -1, q)

        psis = [1] * n
        for i in range(1, n):
            psis[i] = psis[i - 1] * self.psi % q
        fwd = _bit_reverse_permute(psis)
        inv = psis[:1] + psis[:0:-1]
        neg_psi_inv = inv[1] if n > 1 else 1  # psi^(n-1) = -psi^(-1)
        psi_inv = (q - neg_psi_inv) % q
        inv = _bit_reverse_permute(inv)
        inv[0] = inv[0] * psi_inv % q
        for i in range(1, n):
            inv[i] = inv[i] * neg_psi_inv % q

        to_m = lambda v: v * r_mod % q
        self.tw_mont = np.array([to_m(v) for v in fwd], dtype=_U64)
        self.twinv_mont = np.array([to_m(v) for v in inv], dtype=_U64)
        self.n_inv_mont = to_m(self.n_inv)

    def to_mont(self, value: int) -> int:
        return value * (_R64 % self.q) % self.q

    def __repr__(self):
        return f"PrimeRing(q={self.q}, n={self.n})"


_RING_CACHE: dict[tuple[int, int], PrimeRing] = {}


def ring_for(q: int, n: int) -> PrimeRing:
    key = (q, n)
    ring = _RING_CACHE.get(key)
    if ring is None:
        ring = _RING_CACHE[key] = PrimeRing(q, n)
    return ring


class _Stack:
    """Per-chain tables stacked row-wise for the numba kernels."""

    def __init__(self, rings: tuple[PrimeRing, ...]):
        n = rings[0].n
        if any(r.n != n for r in rings):
            raise ConfigError("all rings in a chain must share the ring degree")
        self.n = n
        self.qs = np.array([r.q for r in rings], dtype=_U64)
        self.qs_col = self.qs[:, None]
        self.qinvs = np.array([r.qinv_neg for r in rings], dtype=_U64)
        self.r2s = np.array([r.r2 for r in rings], dtype=_U64)
        self.tw = np.stack([r.tw_mont for r in rings])
        self.twinv = np.stack([r.twinv_mont for r in rings])
        self.ninv = np.array([r.n_inv_mont for r in rings], dtype=_U64)


_STACK_CACHE: dict[tuple[int, ...], _Stack] = {}


def _stack(rings: Sequence[PrimeRing]) -> _Stack:
    key = tuple((r.q, r.n) for r in rings)
    st = _STACK_CACHE.get(key)
    if st is None:
        st = _STACK_CACHE[key] = _Stack(tuple(rings))
    return st


# ---------------------------------------------------------------------------
# RNS polynomials
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class RnsPoly:
    """Residue rows of one ring element: shape (level, n), dtype uint64."""

    data: np.ndarray
    domain: str

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ContractError("RnsPoly data must be 2-D (level, n)")
        if self.data.dtype != _U64:
            raise ContractError("RnsPoly data must be uint64")
        if self.data.shape[0] < 1:
            raise ContractError("RnsPoly level must be >= 1")
        if self.domain not in (COEFF, EVAL):
            raise ContractError(f"unknown domain {self.domain!r}")

    @property
    def level(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def copy(self) -> "RnsPoly":
        return RnsPoly(self.data.copy(), self.domain)


def _check_rings(poly: RnsPoly, rings: Sequence[PrimeRing]):
    if len(rings) != poly.level:
        raise ContractError(
            f"ring count {len(rings)} does not match poly level {poly.level}"
        )
    if rings[0].n != poly.n:
        raise ContractError("ring degree mismatch")


def zero_poly(level: int, n: int, domain: str = COEFF) -> RnsPoly:
    return RnsPoly(np.zeros((level, n), dtype=_U64), domain)


def poly_from_int_coeffs(coeffs, rings: Sequence[PrimeRing]) -> RnsPoly:
    """Coefficient-domain poly from signed integers (Python ints or int64)."""
    n = rings[0].n
    rows = np.empty((len(rings), n), dtype=_U64)
    arr = np.asarray(coeffs, dtype=object)
    for i, ring in enumerate(rings):
        rows[i] = np.array([int(c) % ring.q for c in arr], dtype=_U64)
    return RnsPoly(rows, COEFF)


def ntt_forward(poly: RnsPoly, rings: Sequence[PrimeRing]) -> RnsPoly:
    if poly.domain != COEFF:
        raise ContractError("ntt_forward expects a coefficient-domain poly")
    _check_rings(poly, rings)
    st = _stack(rings)
    out = np.ascontiguousarray(poly.data.copy())
    _k_ntt(out, st.tw, st.qs, st.qinvs)
    return RnsPoly(out, EVAL)


def ntt_inverse(poly: RnsPoly, rings: Sequence[PrimeRing]) -> RnsPoly:
    if poly.domain != EVAL:
        raise ContractError("ntt_inverse expects an evaluation-domain poly")
    _check_rings(poly, rings)
    st = _stack(rings)
    out = np.ascontiguousarray(poly.data.copy())
    _k_intt(out, st.twinv, st.ninv, st.qs, st.qinvs)
    return RnsPoly(out, COEFF)


def _binop_checks(a: RnsPoly, b: RnsPoly):
    if a.level != b.level:
        raise ContractError(f"level mismatch: {a.level} vs {b.level}")
    if a.domain != b.domain:
        raise ContractError(f"domain mismatch: {a.domain} vs {b.domain}")
    if a.n != b.n:
        raise ContractError("ring degree mismatch")


def poly_add(a: RnsPoly, b: RnsPoly, rings: Sequence[PrimeRing]) -> RnsPoly:
    _binop_checks(a, b)
    _check_rings(a, rings)
    st = _stack(rings)
    t = a.data + b.data
    t -= st.qs_col * (t >= st.qs_col)
    return RnsPoly(t, a.domain)


def poly_sub(a: RnsPoly, b: RnsPoly, rings: Sequence[PrimeRing]) -> RnsPoly:
    _binop_checks(a, b)
    _check_rings(a, rings)
    st = _stack(rings)
    t = a.data + st.qs_col - b.data
    t -= st.qs_col * (t >= st.qs_col)
    return RnsPoly(t, a.domain)


def poly_neg(a: RnsPoly, rings: Sequence[PrimeRing]) -> RnsPoly:
    _check_rings(a, rings)
    st = _stack(rings)
    t = (st.qs_col - a.data) % st.qs_col
    return RnsPoly(t.astype(_U64), a.domain)


def poly_pointwise_mul(a: RnsPoly, b: RnsPoly, rings: Sequence[PrimeRing]) -> RnsPoly:
    _binop_checks(a, b)
    if a.domain != EVAL:
        raise ContractError("pointwise multiply requires evaluation domain")
    _check_rings(a, rings)
    st = _stack(rings)
    out = np.empty_like(a.data)
    _k_mul_plainform(
        np.ascontiguousarray(a.data), np.ascontiguousarray(b.data),
        st.qs, st.qinvs, st.r2s, out,
    )
    return RnsPoly(out, EVAL)


def poly_scalar_mul(a: RnsPoly, scalars: Sequence[int], rings: Sequence[PrimeRing]) -> RnsPoly:
    """Multiply row i by the plain integer scalars[i] (mod q_i)."""
    _check_rings(a, rings)
    st = _stack(rings)
    c_mont = np.array(
        [ring.to_mont(int(s) % ring.q) for s, ring in zip(scalars, rings)], dtype=_U64
    )
    out = np.ascontiguousarray(a.data.copy())
    _k_scalar_mont(out, c_mont, st.qs, st.qinvs)
    return RnsPoly(out, a.domain)


def mod_switch_drop_last(poly: RnsPoly, rings: Sequence[PrimeRing]) -> RnsPoly:
    """Drop the last prime, dividing the represented integer by it with rounding.

    Residues of the result at each remaining prime equal
    round(x / q_last) mod q_i for the signed integer x the input represents.
    """
    if poly.domain != COEFF:
        raise ContractError("mod_switch_drop_last expects coefficient domain")
    _check_rings(poly, rings)
    if poly.level < 2:
        raise ContractError("cannot drop the last prime of a level-1 poly")
    last_ring = rings[-1]
    keep = list(rings[:-1])
    st = _stack(keep)
    q_last = last_ring.q
    last = poly.data[-1]
    big = last > _U64((q_last - 1) // 2)

    out = np.empty((poly.level - 1, poly.n), dtype=_U64)
    for i, ring in enumerate(keep):
        qi = _U64(ring.q)
        delta = last % qi
        # centered representative: subtract q_last where the residue is "negative"
        corr = _U64((ring.q - q_last % ring.q) % ring.q)
        delta = delta + corr * big
        delta -= qi * (delta >= qi)
        row = poly.data[i] + qi - delta
        row -= qi * (row >= qi)
        out[i] = row
    inv_mont = np.array(
        [r.to_mont(pow(q_last % r.q, -1, r.q)) for r in keep], dtype=_U64
    )
    _k_scalar_mont(out, inv_mont, st.qs, st.qinvs)
    return RnsPoly(out, COEFF)


# ---------------------------------------------------------------------------
# Galois automorphisms (coefficient domain)
# ---------------------------------------------------------------------------

_GALOIS_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _galois_maps(n: int, g: int) -> tuple[np.ndarray, np.ndarray]:
    key = (n, g)
    maps = _GALOIS_CACHE.get(key)
    if maps is None:
        i = np.arange(n, dtype=np.int64)
        d = (i * g) % (2 * n)
        flip = d >= n
        maps = _GALOIS_CACHE[key] = (d % n, flip)
    return maps


def galois_transform(poly: RnsPoly, g: int, rings: Sequence[PrimeRing]) -> RnsPoly:
    """Apply x -> x^g (g odd) to a coefficient-domain poly."""
    if poly.domain != COEFF:
        raise ContractError("galois_transform expects coefficient domain")
    _check_rings(poly, rings)
    if g % 2 == 0:
        raise ContractError("galois exponent must be odd")
    n = poly.n
    dest, flip = _galois_maps(n, g % (2 * n))
    st = _stack(rings)
    neg = (st.qs_col - poly.data) * (poly.data != 0)
    src = np.where(flip, neg, poly.data)
    out = np.empty_like(poly.data)
    out[:, dest] = src
    return RnsPoly(out, COEFF)


# ---------------------------------------------------------------------------
# CRT helpers (used by encoding/decoding and by test oracles)
# ---------------------------------------------------------------------------


def crt_centered(poly: RnsPoly, rings: Sequence[PrimeRing]) -> np.ndarray:
    """Signed big-integer coefficients (object array) the residues represent."""
    if poly.domain != COEFF:
        raise ContractError("crt_centered expects coefficient domain")
    _check_rings(poly, rings)
    big_q = 1
    for r in rings:
        big_q *= r.q
    acc = np.zeros(poly.n, dtype=object)
    for i, ring in enumerate(rings):
        qi_hat = big_q // ring.q
        basis = qi_hat * pow(qi_hat % ring.q, -1, ring.q) % big_q
        acc = acc + poly.data[i].astype(object) * basis
    acc %= big_q
    half = big_q >> 1
    return np.where(acc > half, acc - big_q, acc)
