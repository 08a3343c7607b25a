"""Shared test utilities: the random straight-line homomorphic program harness.

A program starts from fresh encryptions and applies a random legal sequence
of rotations, plaintext adds/multiplies, ciphertext adds, and at most one
ciphertext multiplication, mirroring every step on a plaintext shadow
vector.  Legality (level headroom, scale alignment, slot-value growth) is
enforced by construction so generated programs always satisfy the scheme's
operation contracts.
"""

import numpy as np

from fedcls import ckks

VALUE_CAP = 48.0  # keep slot magnitudes well inside every profile's headroom


def run_random_program(keys, seed, max_ops=20, input_bound=5.0):
    """Returns (decrypted_result, shadow_result, ops_used)."""
    sk, pk, rlk, gks = keys
    ctx = sk.ctx
    slots = ctx.params.slot_count
    scale = ctx.params.scale
    rng = np.random.default_rng(seed)

    shadow = rng.uniform(-input_bound, input_bound, slots)
    pt = ckks.encode(shadow, scale, ctx)
    acc = ckks.encrypt(pk, pt, rng)
    mul_used = False
    ops = []

    n_ops = int(rng.integers(1, max_ops + 1))
    for _ in range(n_ops):
        choices = ["rotate", "add_plain"]
        if acc.level == ctx.level_max:
            choices.append("hom_add")
        if acc.level >= 2:
            choices.append("mul_plain")
            if not mul_used and np.max(np.abs(shadow)) ** 2 < VALUE_CAP:
                choices.append("hom_mul")
        op = choices[int(rng.integers(0, len(choices)))]

        if op == "rotate":
            k = int(rng.integers(0, slots))
            acc = ckks.rotate(acc, k, gks)
            shadow = np.roll(shadow, -k)
        elif op == "add_plain":
            w = rng.uniform(-2.0, 2.0, slots)
            if np.max(np.abs(shadow + w)) >= VALUE_CAP:
                continue
            acc = ckks.add_plain(acc, ckks.encode(w, acc.scale, ctx, acc.level))
            shadow = shadow + w
        elif op == "hom_add":
            w = rng.uniform(-2.0, 2.0, slots)
            if np.max(np.abs(shadow + w)) >= VALUE_CAP:
                continue
            other = ckks.encrypt(pk, ckks.encode(w, acc.scale, ctx), rng)
            acc = ckks.hom_add(acc, other)
            shadow = shadow + w
        elif op == "mul_plain":
            w = rng.uniform(-1.5, 1.5, slots)
            if np.max(np.abs(shadow * w)) >= VALUE_CAP:
                continue
            acc = ckks.rescale(
                ckks.mul_plain(acc, ckks.encode(w, scale, ctx, acc.level))
            )
            shadow = shadow * w
        elif op == "hom_mul":
            acc = ckks.rescale(ckks.relinearize(ckks.hom_mul(acc, acc), rlk))
            shadow = shadow * shadow
            mul_used = True
        ops.append(op)

    got = ckks.decode(ckks.decrypt(sk, acc))
    return got, shadow, ops
