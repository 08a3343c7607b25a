"""Bit-exact binary serialization for every protocol artifact.

All multi-byte integers are little-endian.  Every payload is framed as

    magic(4) | version(1) | type-specific header | body | crc32(4)

where the checksum covers everything before it.  Round trips are
bit-exact; a corrupted byte anywhere is detected by the checksum (CRC32
detects all single-byte errors).

Distinct magics per type: FCHE ciphertext, FCHP plaintext, FCHS secret
key, FCHK public key, FCHR relinearization key, FCHG Galois keys, FCHD
client bundle, FCHT named-tensor container.
"""

from __future__ import annotations

import io
import os
import struct
import zlib

import numpy as np

from . import ckks, ring
from .errors import BadMagicError, BadVersionError, ChecksumError, WireError

VERSION = 1

MAGIC_CIPHERTEXT = b"FCHE"
MAGIC_PLAINTEXT = b"FCHP"
MAGIC_SECRET_KEY = b"FCHS"
MAGIC_PUBLIC_KEY = b"FCHK"
MAGIC_RELIN_KEY = b"FCHR"
MAGIC_GALOIS_KEYS = b"FCHG"
MAGIC_BUNDLE = b"FCHD"
MAGIC_TENSORS = b"FCHT"

_DOMAIN_CODE = {ring.COEFF: 0, ring.EVAL: 1}
_DOMAIN_NAME = {0: ring.COEFF, 1: ring.EVAL}


def _frame(magic: bytes, payload: bytes) -> bytes:
    head = magic + struct.pack("<B", VERSION) + payload
    return head + struct.pack("<I", zlib.crc32(head))


def _unframe(blob: bytes, magic: bytes) -> bytes:
    if len(blob) < 9:
        raise WireError("payload too short")
    if blob[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {blob[:4]!r}")
    if blob[4] != VERSION:
        raise BadVersionError(f"unsupported format version {blob[4]}")
    body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) != crc:
        raise ChecksumError("checksum mismatch")
    return blob[5:-4]


def _rows_bytes(rows: np.ndarray) -> bytes:
    return np.ascontiguousarray(rows, dtype="<u8").tobytes()


def _rows_from(buf: memoryview, rows: int, n: int) -> np.ndarray:
    need = rows * n * 8
    if len(buf) < need:
        raise WireError("truncated residue block")
    arr = np.frombuffer(buf[:need], dtype="<u8").reshape(rows, n)
    return arr.astype(np.uint64)


def atomic_write(path: str, blob: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# ciphertexts and plaintexts
# ---------------------------------------------------------------------------


def serialize_ciphertext(ct: ckks.Ciphertext) -> bytes:
    n = ct.ctx.params.ring_degree
    payload = struct.pack("<IBdB", n, ct.level, ct.scale, len(ct.polys))
    parts = [payload]
    for comp in ct.polys:
        if comp.domain != ring.EVAL:
            raise WireError("ciphertexts are serialized in evaluation domain")
        parts.append(_rows_bytes(comp.data))
    blob = _frame(MAGIC_CIPHERTEXT, b"".join(parts))
    assert len(blob) == ckks.serialized_size(ct)
    return blob


def deserialize_ciphertext(blob: bytes, ctx: ckks.CkksContext) -> ckks.Ciphertext:
    body = _unframe(blob, MAGIC_CIPHERTEXT)
    n, level, scale, ncomp = struct.unpack("<IBdB", body[:14])
    if n != ctx.params.ring_degree:
        raise WireError(f"ring degree {n} does not match context")
    if not 1 <= level <= ctx.level_max:
        raise WireError(f"level {level} out of range")
    if ncomp not in (2, 3):
        raise WireError(f"bad component count {ncomp}")
    buf = memoryview(body)[14:]
    if len(buf) != ncomp * level * n * 8:
        raise WireError("body length mismatch")
    polys = []
    for _ in range(ncomp):
        rows = _rows_from(buf, level, n)
        buf = buf[level * n * 8 :]
        polys.append(ring.RnsPoly(rows, ring.EVAL))
    return ckks.Ciphertext(ctx, polys, scale, level)


def serialize_plaintext(pt: ckks.Plaintext) -> bytes:
    n = pt.ctx.params.ring_degree
    payload = struct.pack(
        "<IBdB", n, pt.level, pt.scale, _DOMAIN_CODE[pt.poly.domain]
    ) + _rows_bytes(pt.poly.data)
    return _frame(MAGIC_PLAINTEXT, payload)


def deserialize_plaintext(blob: bytes, ctx: ckks.CkksContext) -> ckks.Plaintext:
    body = _unframe(blob, MAGIC_PLAINTEXT)
    n, level, scale, dom = struct.unpack("<IBdB", body[:14])
    if n != ctx.params.ring_degree:
        raise WireError("ring degree mismatch")
    if dom not in _DOMAIN_NAME:
        raise WireError(f"bad domain code {dom}")
    rows = _rows_from(memoryview(body)[14:], level, n)
    return ckks.Plaintext(ctx, ring.RnsPoly(rows, _DOMAIN_NAME[dom]), scale, level)


# ---------------------------------------------------------------------------
# keys
# ---------------------------------------------------------------------------


def serialize_secret_key(sk: ckks.SecretKey) -> bytes:
    n = sk.ctx.params.ring_degree
    rows = sk.poly.data
    payload = struct.pack("<IB", n, rows.shape[0]) + _rows_bytes(rows)
    return _frame(MAGIC_SECRET_KEY, payload)


def deserialize_secret_key(blob: bytes, ctx: ckks.CkksContext) -> ckks.SecretKey:
    body = _unframe(blob, MAGIC_SECRET_KEY)
    n, nrows = struct.unpack("<IB", body[:5])
    if n != ctx.params.ring_degree or nrows != ctx.level_max + 1:
        raise WireError("secret key shape mismatch")
    rows = _rows_from(memoryview(body)[5:], nrows, n)
    return ckks.SecretKey(ctx, ring.RnsPoly(rows, ring.COEFF))


def serialize_public_key(pk: ckks.PublicKey) -> bytes:
    n = pk.ctx.params.ring_degree
    payload = struct.pack("<IB", n, pk.b.shape[0]) + _rows_bytes(pk.b) + _rows_bytes(pk.a)
    return _frame(MAGIC_PUBLIC_KEY, payload)


def deserialize_public_key(blob: bytes, ctx: ckks.CkksContext) -> ckks.PublicKey:
    body = _unframe(blob, MAGIC_PUBLIC_KEY)
    n, nrows = struct.unpack("<IB", body[:5])
    if n != ctx.params.ring_degree or nrows != ctx.level_max:
        raise WireError("public key shape mismatch")
    buf = memoryview(body)[5:]
    b = _rows_from(buf, nrows, n)
    a = _rows_from(buf[nrows * n * 8 :], nrows, n)
    return ckks.PublicKey(ctx, b=b, a=a)


def _ksk_bytes(ksk: ckks.KeySwitchKey) -> bytes:
    out = [struct.pack("<B", len(ksk.b))]
    for b, a in zip(ksk.b, ksk.a):
        out.append(_rows_bytes(b))
        out.append(_rows_bytes(a))
    return b"".join(out)


def _ksk_from(buf: memoryview, rows: int, n: int) -> tuple[ckks.KeySwitchKey, memoryview]:
    ndig = buf[0]
    buf = buf[1:]
    bs, as_ = [], []
    for _ in range(ndig):
        bs.append(_rows_from(buf, rows, n))
        buf = buf[rows * n * 8 :]
        as_.append(_rows_from(buf, rows, n))
        buf = buf[rows * n * 8 :]
    return ckks.KeySwitchKey(b=bs, a=as_), buf


def serialize_relin_key(rlk: ckks.RelinKey) -> bytes:
    n = rlk.ctx.params.ring_degree
    payload = struct.pack("<I", n) + _ksk_bytes(rlk.ksk)
    return _frame(MAGIC_RELIN_KEY, payload)


def deserialize_relin_key(blob: bytes, ctx: ckks.CkksContext) -> ckks.RelinKey:
    body = _unframe(blob, MAGIC_RELIN_KEY)
    (n,) = struct.unpack("<I", body[:4])
    if n != ctx.params.ring_degree:
        raise WireError("ring degree mismatch")
    ksk, _ = _ksk_from(memoryview(body)[4:], ctx.level_max + 1, n)
    return ckks.RelinKey(ctx, ksk)


def serialize_galois_keys(gks: ckks.GaloisKeys) -> bytes:
    n = gks.ctx.params.ring_degree
    parts = [struct.pack("<IH", n, len(gks.step_keys))]
    for step in sorted(gks.step_keys):
        parts.append(struct.pack("<I", step))
        parts.append(_ksk_bytes(gks.step_keys[step]))
    parts.append(_ksk_bytes(gks.conj_key))
    return _frame(MAGIC_GALOIS_KEYS, b"".join(parts))


def deserialize_galois_keys(blob: bytes, ctx: ckks.CkksContext) -> ckks.GaloisKeys:
    body = _unframe(blob, MAGIC_GALOIS_KEYS)
    n, nsteps = struct.unpack("<IH", body[:6])
    if n != ctx.params.ring_degree:
        raise WireError("ring degree mismatch")
    buf = memoryview(body)[6:]
    rows = ctx.level_max + 1
    step_keys = {}
    for _ in range(nsteps):
        (step,) = struct.unpack("<I", buf[:4])
        buf = buf[4:]
        ksk, buf = _ksk_from(buf, rows, n)
        step_keys[step] = ksk
    conj, _ = _ksk_from(buf, rows, n)
    return ckks.GaloisKeys(ctx, step_keys, conj)


# ---------------------------------------------------------------------------
# named-tensor container (checkpoints, datasets, token files, reports data)
# ---------------------------------------------------------------------------

_DTYPE_CODE = {"<f8": 0, "<i8": 1}
_DTYPE_NAME = {0: "<f8", 1: "<i8"}


def serialize_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8")
        else:
            raise WireError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        nb = name.encode("utf-8")
        out.write(struct.pack("<H", len(nb)))
        out.write(nb)
        out.write(struct.pack("<BB", _DTYPE_CODE[arr.dtype.str], arr.ndim))
        for d in arr.shape:
            out.write(struct.pack("<I", d))
        out.write(np.ascontiguousarray(arr).tobytes())
    return _frame(MAGIC_TENSORS, out.getvalue())


def deserialize_tensors(blob: bytes) -> dict[str, np.ndarray]:
    body = memoryview(_unframe(blob, MAGIC_TENSORS))
    (count,) = struct.unpack("<I", body[:4])
    body = body[4:]
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", body[:2])
        name = bytes(body[2 : 2 + nlen]).decode("utf-8")
        body = body[2 + nlen :]
        code, ndim = struct.unpack("<BB", body[:2])
        body = body[2:]
        if code not in _DTYPE_NAME:
            raise WireError(f"bad dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", body[: 4 * ndim]) if ndim else ()
        body = body[4 * ndim :]
        size = int(np.prod(shape)) if ndim else 1
        nbytes = size * 8
        arr = np.frombuffer(body[:nbytes], dtype=_DTYPE_NAME[code]).reshape(shape)
        out[name] = arr.copy()
        body = body[nbytes:]
    return out


# ---------------------------------------------------------------------------
# client bundles
# ---------------------------------------------------------------------------


def serialize_bundle(bundle) -> bytes:
    """Client bundle: id, counts, plaintext head, chunked token ciphertexts."""
    parts = [
        struct.pack(
            "<IIH", bundle.client_id, bundle.n_tokens, bundle.chunks_per_token
        )
    ]
    k, d = bundle.head_w.shape
    parts.append(struct.pack("<II", k, d))
    parts.append(bundle.head_w.astype("<f8").tobytes())
    parts.append(bundle.head_b.astype("<f8").tobytes())
    parts.append(struct.pack("<I", len(bundle.ciphertexts)))
    for ct in bundle.ciphertexts:
        ct_blob = serialize_ciphertext(ct)
        parts.append(struct.pack("<I", len(ct_blob)))
        parts.append(ct_blob)
    return _frame(MAGIC_BUNDLE, b"".join(parts))


def deserialize_bundle(blob: bytes, ctx: ckks.CkksContext):
    from .protocol import ClientBundle  # local import: protocol depends on wire

    body = memoryview(_unframe(blob, MAGIC_BUNDLE))
    client_id, n_tokens, chunks = struct.unpack("<IIH", body[:10])
    body = body[10:]
    k, d = struct.unpack("<II", body[:8])
    body = body[8:]
    head_w = np.frombuffer(body[: k * d * 8], dtype="<f8").reshape(k, d).copy()
    body = body[k * d * 8 :]
    head_b = np.frombuffer(body[: k * 8], dtype="<f8").copy()
    body = body[k * 8 :]
    (n_cts,) = struct.unpack("<I", body[:4])
    body = body[4:]
    cts = []
    for _ in range(n_cts):
        (ln,) = struct.unpack("<I", body[:4])
        cts.append(deserialize_ciphertext(bytes(body[4 : 4 + ln]), ctx))
        body = body[4 + ln :]
    return ClientBundle(
        client_id=client_id,
        n_tokens=n_tokens,
        chunks_per_token=chunks,
        ciphertexts=cts,
        head_w=head_w,
        head_b=head_b,
    )
