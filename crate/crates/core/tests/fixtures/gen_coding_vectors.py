#!/usr/bin/env python3
"""Independent oracle for the erasure-code and Merkle fixtures.

Parity is computed by solving the Vandermonde system for polynomial
coefficients and evaluating with Horner's rule, rather than by Lagrange
weights. Field multiplication is bitwise, with no tables. Hashing uses
hashlib. Regenerate with:

    python3 gen_coding_vectors.py > coding_vectors.json
"""
import hashlib
import json

POLY = 0x11D


def gmul(a, b):
    p = 0
    while b:
        if b & 1:
            p ^= a
        a <<= 1
        if a & 0x100:
            a ^= POLY
        b >>= 1
    return p


def ginv(a):
    # a^254 by square-and-multiply.
    r, e = 1, 254
    while e:
        if e & 1:
            r = gmul(r, a)
        a = gmul(a, a)
        e >>= 1
    return r


def solve(rows, rhs):
    """Gauss-Jordan elimination over GF(256)."""
    k = len(rows)
    m = [list(r) + [v] for r, v in zip(rows, rhs)]
    for c in range(k):
        piv = next(i for i in range(c, k) if m[i][c])
        m[c], m[piv] = m[piv], m[c]
        iv = ginv(m[c][c])
        m[c] = [gmul(x, iv) for x in m[c]]
        for i in range(k):
            if i != c and m[i][c]:
                f = m[i][c]
                m[i] = [x ^ gmul(f, y) for x, y in zip(m[i], m[c])]
    return [m[i][k] for i in range(k)]


def horner(coeffs, x):
    acc = 0
    for c in reversed(coeffs):
        acc = gmul(acc, x) ^ c
    return acc


def encode(msg, n, k):
    width = -(-(len(msg) + 8) // k)
    framed = len(msg).to_bytes(8, "little") + msg
    framed += bytes(width * k - len(framed))
    data = [framed[i * width:(i + 1) * width] for i in range(k)]
    vander = [[gmul_pow(x, j) for j in range(k)] for x in range(k)]
    parity = [bytearray(width) for _ in range(n - k)]
    for col in range(width):
        coeffs = solve(vander, [data[i][col] for i in range(k)])
        for j, x in enumerate(range(k, n)):
            parity[j][col] = horner(coeffs, x)
    return [bytes(s) for s in data] + [bytes(p) for p in parity]


def gmul_pow(x, e):
    r = 1
    for _ in range(e):
        r = gmul(r, x)
    return r


def leaf(b):
    return hashlib.sha256(b"\x00" + b).digest()


def node(l, r):
    return hashlib.sha256(b"\x01" + l + r).digest()


def merkle(leaves):
    level = [leaf(x) for x in leaves]
    levels = [level]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            pair = level[i:i + 2]
            nxt.append(node(*pair) if len(pair) == 2 else pair[0])
        level = nxt
        levels.append(level)
    return levels


def prove(levels, idx):
    sibs = []
    for level in levels[:-1]:
        s = idx ^ 1
        if s < len(level):
            sibs.append(level[s].hex())
        idx //= 2
    return sibs


def message(seed, length):
    out = bytearray()
    ctr = 0
    while len(out) < length:
        out += hashlib.sha256(f"{seed}:{ctr}".encode()).digest()
        ctr += 1
    return bytes(out[:length])


CASES = [
    (4, 2, 0), (4, 2, 5), (4, 3, 17), (5, 3, 1), (7, 3, 64), (7, 4, 33),
    (8, 5, 100), (10, 4, 250), (16, 7, 1000), (3, 1, 9),
]


def main():
    out = []
    for n, k, length in CASES:
        msg = message(f"{n}-{k}", length)
        shares = encode(msg, n, k)
        levels = merkle(shares)
        out.append({
            "n": n,
            "k": k,
            "message": msg.hex(),
            "shares": [s.hex() for s in shares],
            "root": levels[-1][0].hex(),
            "proofs": [prove(levels, i) for i in range(n)],
        })
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
