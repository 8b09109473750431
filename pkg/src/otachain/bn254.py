"""Bilinear group arithmetic on the BN254 (alt_bn128) pairing-friendly curve.

Implements the 2-3-2 tower Fp -> Fp2 -> Fp6 -> Fp12, the curve groups
G1 = E(Fp): y^2 = x^3 + 3 and G2 (subgroup of the sextic twist
E'(Fp2): y^2 = x^3 + 3/(9+i)), the optimal ate pairing with a shared
Miller loop for pairing products, deterministic hash-to-group maps, and
compressed point serialization.

This is the curve behind Ethereum's pairing precompiles, so contract-side
verification of the same equations is possible in principle.  Everything
is variable-time Python: fine for simulation and testing, not hardened
against side channels.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

from gmpy2 import invert, mpz, powmod

# BN parameter u and the derived curve constants.
U = 4965661367192848881
P = mpz(36 * U**4 + 36 * U**3 + 24 * U**2 + 6 * U + 1)
R = mpz(36 * U**4 + 36 * U**3 + 18 * U**2 + 6 * U + 1)

CURVE_B = mpz(3)

assert P % 4 == 3  # sqrt via x^((p+1)/4)
_SQRT_EXP = (P + 1) // 4
_LEGENDRE_EXP = (P - 1) // 2

_ZERO = mpz(0)
_ONE = mpz(1)

# ---------------------------------------------------------------------------
# Fp2 = Fp[i] / (i^2 + 1), elements as (a, b) = a + b*i.

FP2_ZERO = (_ZERO, _ZERO)
FP2_ONE = (_ONE, _ZERO)

# Nonresidue xi = 9 + i defines Fp6 = Fp2[v]/(v^3 - xi).
XI = (mpz(9), _ONE)


def fp2_add(x, y):
    return ((x[0] + y[0]) % P, (x[1] + y[1]) % P)


def fp2_sub(x, y):
    return ((x[0] - y[0]) % P, (x[1] - y[1]) % P)


def fp2_neg(x):
    return (-x[0] % P, -x[1] % P)


def fp2_conj(x):
    return (x[0], -x[1] % P)


def fp2_mul(x, y):
    a, b = x
    c, d = y
    v0 = a * c
    v1 = b * d
    return ((v0 - v1) % P, ((a + b) * (c + d) - v0 - v1) % P)


def fp2_sqr(x):
    a, b = x
    return ((a + b) * (a - b) % P, (a * b << 1) % P)


def fp2_scale(x, k):
    return (x[0] * k % P, x[1] * k % P)


def fp2_mul_xi(x):
    a, b = x
    return ((9 * a - b) % P, (9 * b + a) % P)


def fp2_inv(x):
    a, b = x
    t = invert(a * a + b * b, P)
    return (a * t % P, -b * t % P)


def fp2_pow(x, e):
    result = FP2_ONE
    for bit in bin(int(e))[2:]:
        result = fp2_sqr(result)
        if bit == "1":
            result = fp2_mul(result, x)
    return result


def fp2_sqrt(x):
    """Square root in Fp2 via the norm trick, or None if x is a non-residue."""
    a, b = x
    if b == 0:
        if powmod(a, _LEGENDRE_EXP, P) <= 1:
            return (powmod(a, _SQRT_EXP, P), _ZERO)
        # a is a non-residue: sqrt is purely imaginary, (t*i)^2 = -t^2.
        t = powmod(-a % P, _SQRT_EXP, P)
        return (_ZERO, t)
    n = (a * a + b * b) % P
    s = powmod(n, _SQRT_EXP, P)
    if s * s % P != n:
        return None
    inv2 = invert(2, P)
    d = (a + s) * inv2 % P
    t = powmod(d, _SQRT_EXP, P)
    if t * t % P != d:
        d = (a - s) * inv2 % P
        t = powmod(d, _SQRT_EXP, P)
        if t * t % P != d:
            return None
    root = (t, b * invert(2 * t % P, P) % P)
    return root if fp2_sqr(root) == (a % P, b % P) else None


# ---------------------------------------------------------------------------
# Fp6 = Fp2[v] / (v^3 - xi), elements as 3-tuples of Fp2.

FP6_ZERO = (FP2_ZERO, FP2_ZERO, FP2_ZERO)
FP6_ONE = (FP2_ONE, FP2_ZERO, FP2_ZERO)


def fp6_add(x, y):
    return (fp2_add(x[0], y[0]), fp2_add(x[1], y[1]), fp2_add(x[2], y[2]))


def fp6_sub(x, y):
    return (fp2_sub(x[0], y[0]), fp2_sub(x[1], y[1]), fp2_sub(x[2], y[2]))


def fp6_neg(x):
    return (fp2_neg(x[0]), fp2_neg(x[1]), fp2_neg(x[2]))


def fp6_mul(x, y):
    a0, a1, a2 = x
    b0, b1, b2 = y
    v0 = fp2_mul(a0, b0)
    v1 = fp2_mul(a1, b1)
    v2 = fp2_mul(a2, b2)
    c0 = fp2_add(v0, fp2_mul_xi(fp2_sub(fp2_sub(fp2_mul(fp2_add(a1, a2), fp2_add(b1, b2)), v1), v2)))
    c1 = fp2_add(fp2_sub(fp2_sub(fp2_mul(fp2_add(a0, a1), fp2_add(b0, b1)), v0), v1), fp2_mul_xi(v2))
    c2 = fp2_add(fp2_sub(fp2_sub(fp2_mul(fp2_add(a0, a2), fp2_add(b0, b2)), v0), v2), v1)
    return (c0, c1, c2)


def fp6_sqr(x):
    return fp6_mul(x, x)


def fp6_scale_fp2(x, k):
    return (fp2_mul(x[0], k), fp2_mul(x[1], k), fp2_mul(x[2], k))


def fp6_scale_fp(x, k):
    return (fp2_scale(x[0], k), fp2_scale(x[1], k), fp2_scale(x[2], k))


def fp6_mul_by_v(x):
    # v * (a0 + a1 v + a2 v^2) = xi*a2 + a0 v + a1 v^2
    return (fp2_mul_xi(x[2]), x[0], x[1])


def fp6_inv(x):
    a0, a1, a2 = x
    c0 = fp2_sub(fp2_sqr(a0), fp2_mul_xi(fp2_mul(a1, a2)))
    c1 = fp2_sub(fp2_mul_xi(fp2_sqr(a2)), fp2_mul(a0, a1))
    c2 = fp2_sub(fp2_sqr(a1), fp2_mul(a0, a2))
    t = fp2_add(fp2_mul(a0, c0), fp2_mul_xi(fp2_add(fp2_mul(a2, c1), fp2_mul(a1, c2))))
    ti = fp2_inv(t)
    return (fp2_mul(c0, ti), fp2_mul(c1, ti), fp2_mul(c2, ti))


# ---------------------------------------------------------------------------
# Fp12 = Fp6[w] / (w^2 - v), elements as pairs of Fp6.

FP12_ONE = (FP6_ONE, FP6_ZERO)


def _fp6_mul_flat(a0, a1, a2, b0, b1, b2):
    """Karatsuba Fp6 product on unpacked Fp2 pairs; returns three Fp2 pairs."""
    a0r, a0i = a0
    a1r, a1i = a1
    a2r, a2i = a2
    b0r, b0i = b0
    b1r, b1i = b1
    b2r, b2i = b2
    v0r = a0r * b0r - a0i * b0i
    v0i = a0r * b0i + a0i * b0r
    v1r = a1r * b1r - a1i * b1i
    v1i = a1r * b1i + a1i * b1r
    v2r = a2r * b2r - a2i * b2i
    v2i = a2r * b2i + a2i * b2r
    sr, si = a1r + a2r, a1i + a2i
    tr, ti = b1r + b2r, b1i + b2i
    mr = sr * tr - si * ti - v1r - v2r
    mi = sr * ti + si * tr - v1i - v2i
    c0r = (v0r + 9 * mr - mi) % P
    c0i = (v0i + 9 * mi + mr) % P
    sr, si = a0r + a1r, a0i + a1i
    tr, ti = b0r + b1r, b0i + b1i
    c1r = (sr * tr - si * ti - v0r - v1r + 9 * v2r - v2i) % P
    c1i = (sr * ti + si * tr - v0i - v1i + 9 * v2i + v2r) % P
    sr, si = a0r + a2r, a0i + a2i
    tr, ti = b0r + b2r, b0i + b2i
    c2r = (sr * tr - si * ti - v0r - v2r + v1r) % P
    c2i = (sr * ti + si * tr - v0i - v2i + v1i) % P
    return (c0r, c0i), (c1r, c1i), (c2r, c2i)


def fp12_mul(x, y):
    (a0, a1, a2), (a3, a4, a5) = x
    (b0, b1, b2), (b3, b4, b5) = y
    v00, v01, v02 = _fp6_mul_flat(a0, a1, a2, b0, b1, b2)
    v10, v11, v12 = _fp6_mul_flat(a3, a4, a5, b3, b4, b5)
    s0 = ((a0[0] + a3[0]) % P, (a0[1] + a3[1]) % P)
    s1 = ((a1[0] + a4[0]) % P, (a1[1] + a4[1]) % P)
    s2 = ((a2[0] + a5[0]) % P, (a2[1] + a5[1]) % P)
    t0 = ((b0[0] + b3[0]) % P, (b0[1] + b3[1]) % P)
    t1 = ((b1[0] + b4[0]) % P, (b1[1] + b4[1]) % P)
    t2 = ((b2[0] + b5[0]) % P, (b2[1] + b5[1]) % P)
    m0, m1, m2 = _fp6_mul_flat(s0, s1, s2, t0, t1, t2)
    c10 = ((m0[0] - v00[0] - v10[0]) % P, (m0[1] - v00[1] - v10[1]) % P)
    c11 = ((m1[0] - v01[0] - v11[0]) % P, (m1[1] - v01[1] - v11[1]) % P)
    c12 = ((m2[0] - v02[0] - v12[0]) % P, (m2[1] - v02[1] - v12[1]) % P)
    c00 = ((v00[0] + 9 * v12[0] - v12[1]) % P, (v00[1] + 9 * v12[1] + v12[0]) % P)
    c01 = ((v01[0] + v10[0]) % P, (v01[1] + v10[1]) % P)
    c02 = ((v02[0] + v11[0]) % P, (v02[1] + v11[1]) % P)
    return ((c00, c01, c02), (c10, c11, c12))


def fp12_sqr(x):
    a0, a1 = x
    m = fp6_mul(a0, a1)
    c0 = fp6_sub(fp6_sub(fp6_mul(fp6_add(a0, a1), fp6_add(a0, fp6_mul_by_v(a1))), m), fp6_mul_by_v(m))
    return (c0, fp6_add(m, m))


def fp12_conj(x):
    # Conjugation is the p^6 Frobenius; it inverts elements of the
    # cyclotomic subgroup (in particular all pairing values).
    return (x[0], fp6_neg(x[1]))


def fp12_inv(x):
    a0, a1 = x
    t = fp6_inv(fp6_sub(fp6_sqr(a0), fp6_mul_by_v(fp6_sqr(a1))))
    return (fp6_mul(a0, t), fp6_neg(fp6_mul(a1, t)))


def fp12_pow(x, e):
    e = int(e)
    if e < 0:
        x, e = fp12_inv(x), -e
    if e == 0:
        return FP12_ONE
    # 4-bit fixed window
    table = [FP12_ONE, x]
    for _ in range(14):
        table.append(fp12_mul(table[-1], x))
    top = (e.bit_length() + 3) // 4 * 4 - 4
    result = table[(e >> top) & 15]
    for i in range(top - 4, -4, -4):
        result = fp12_sqr(fp12_sqr(fp12_sqr(fp12_sqr(result))))
        window = (e >> i) & 15
        if window:
            result = fp12_mul(result, table[window])
    return result


# Coefficient layout as powers of the uniformizer z (z = w, z^2 = v):
# ((z^0, z^2, z^4), (z^1, z^3, z^5)).  The p^k Frobenius conjugates each
# Fp2 coefficient (for odd k) and scales slot z^j by xi^(j*(p^k-1)/6).
def _frob_gammas(k):
    pk = int(P) ** k
    return [fp2_pow(XI, j * (pk - 1) // 6) for j in range(6)]


_GAMMA1 = _frob_gammas(1)
_GAMMA2 = _frob_gammas(2)
_GAMMA3 = _frob_gammas(3)


def _frobenius(x, gammas, odd):
    (c0, c2, c4), (c1, c3, c5) = x
    coeffs = [c0, c1, c2, c3, c4, c5]
    if odd:
        coeffs = [fp2_conj(c) for c in coeffs]
    coeffs = [fp2_mul(c, g) if j else c for j, (c, g) in enumerate(zip(coeffs, gammas))]
    return ((coeffs[0], coeffs[2], coeffs[4]), (coeffs[1], coeffs[3], coeffs[5]))


def fp12_frob_p(x):
    return _frobenius(x, _GAMMA1, True)


def fp12_frob_p2(x):
    return _frobenius(x, _GAMMA2, False)


def fp12_frob_p3(x):
    return _frobenius(x, _GAMMA3, True)


# ---------------------------------------------------------------------------
# G1: E(Fp), affine (x, y) with None as the point at infinity.

G1_GEN = (_ONE, mpz(2))


def g1_is_on_curve(pt):
    if pt is None:
        return True
    x, y = pt
    return (y * y - (x * x % P * x + CURVE_B)) % P == 0


def g1_neg(pt):
    if pt is None:
        return None
    return (pt[0], -pt[1] % P)


def g1_add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    x1, y1 = p1
    x2, y2 = p2
    if x1 == x2:
        if (y1 + y2) % P == 0:
            return None
        lam = 3 * x1 * x1 % P * invert(2 * y1 % P, P) % P
    else:
        lam = (y2 - y1) * invert((x2 - x1) % P, P) % P
    x3 = (lam * lam - x1 - x2) % P
    return (x3, (lam * (x1 - x3) - y1) % P)


def g1_double(pt):
    return g1_add(pt, pt)


def _jac_double(pt):
    X, Y, Z = pt
    if Z == 0 or Y == 0:
        return (_ONE, _ONE, _ZERO)
    A = X * X % P
    B = Y * Y % P
    C = B * B % P
    D = 2 * ((X + B) ** 2 - A - C) % P
    E = 3 * A % P
    X3 = (E * E - 2 * D) % P
    return (X3, (E * (D - X3) - 8 * C) % P, 2 * Y * Z % P)


def _jac_add_affine(pt, q):
    """Mixed Jacobian + affine addition."""
    X, Y, Z = pt
    if Z == 0:
        return (q[0], q[1], _ONE)
    Z1Z1 = Z * Z % P
    U2 = q[0] * Z1Z1 % P
    S2 = q[1] * Z1Z1 % P * Z % P
    if U2 == X:
        if S2 == Y:
            return _jac_double(pt)
        return (_ONE, _ONE, _ZERO)
    H = (U2 - X) % P
    HH = H * H % P
    I4 = 4 * HH % P
    J = H * I4 % P
    rr = 2 * (S2 - Y) % P
    V = X * I4 % P
    X3 = (rr * rr - J - 2 * V) % P
    return (X3, (rr * (V - X3) - 2 * Y * J) % P, ((Z + H) ** 2 - Z1Z1 - HH) % P)


def g1_mul(pt, n):
    n = int(n) % int(R)
    if pt is None or n == 0:
        return None
    acc = (pt[0], pt[1], _ONE)
    for bit in bin(n)[3:]:
        acc = _jac_double(acc)
        if bit == "1":
            acc = _jac_add_affine(acc, pt)
    if acc[2] == 0:
        return None
    zi = invert(acc[2], P)
    zi2 = zi * zi % P
    return (acc[0] * zi2 % P, acc[1] * zi2 % P * zi % P)


# ---------------------------------------------------------------------------
# G2: order-R subgroup of the twist E'(Fp2): y^2 = x^3 + 3/xi.

TWIST_B = fp2_mul(fp2_scale(FP2_ONE, CURVE_B), fp2_inv(XI))

G2_GEN = (
    (
        mpz(10857046999023057135944570762232829481370756359578518086990519993285655852781),
        mpz(11559732032986387107991004021392285783925812861821192530917403151452391805634),
    ),
    (
        mpz(8495653923123431417604973247489272438418190587263600148770280649306958101930),
        mpz(4082367875863433681332203403145435568316851327593401208105741076214120093531),
    ),
)

# Twist curve cofactor: #E'(Fp2) = R * (2P - R).
G2_COFACTOR = 2 * P - R

# Frobenius trace minus one; the endomorphism eigenvalue on the R-subgroup.
_PSI_EIGEN = 6 * U * U


def g2_is_on_curve(pt):
    if pt is None:
        return True
    x, y = pt
    return fp2_sqr(y) == fp2_add(fp2_mul(fp2_sqr(x), x), TWIST_B)


def g2_neg(pt):
    if pt is None:
        return None
    return (pt[0], fp2_neg(pt[1]))


def g2_add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    x1, y1 = p1
    x2, y2 = p2
    if x1 == x2:
        if fp2_add(y1, y2) == FP2_ZERO:
            return None
        lam = fp2_mul(fp2_scale(fp2_sqr(x1), 3), fp2_inv(fp2_scale(y1, 2)))
    else:
        lam = fp2_mul(fp2_sub(y2, y1), fp2_inv(fp2_sub(x2, x1)))
    x3 = fp2_sub(fp2_sub(fp2_sqr(lam), x1), x2)
    return (x3, fp2_sub(fp2_mul(lam, fp2_sub(x1, x3)), y1))


def g2_double(pt):
    return g2_add(pt, pt)


def g2_mul(pt, n):
    n = int(n)
    if n < 0:
        return g2_mul(g2_neg(pt), -n)
    result = None
    acc = pt
    while n:
        if n & 1:
            result = g2_add(result, acc)
        acc = g2_add(acc, acc)
        n >>= 1
    return result


def g2_in_subgroup(pt):
    """Fast exact subgroup test via the twist endomorphism eigenvalue.

    On the order-R subgroup the untwist-Frobenius-twist map acts as
    multiplication by t-1 = 6U^2.  No cofactor component can satisfy the
    same relation: it would force its order to divide
    (t-1)^2 - t(t-1) + p = R, coprime to the cofactor.
    """
    if pt is None:
        return True
    return g2_is_on_curve(pt) and _psi(pt) == g2_mul(pt, _PSI_EIGEN)


# ---------------------------------------------------------------------------
# Optimal ate pairing.  Miller loop over 6u+2 in NAF form, line evaluations
# against the twist untwisted by (x, y) -> (x w^2, y w^3).


def _naf(n):
    out = []
    while n:
        if n & 1:
            d = 2 - (n % 4)
            out.append(d)
            n -= d
        else:
            out.append(0)
        n >>= 1
    return out[::-1]


_ATE_NAF = _naf(6 * U + 2)[1:]

# Twist Frobenius constants: psi(x, y) = (conj(x)*PSI_X, conj(y)*PSI_Y).
PSI_X = fp2_pow(XI, (P - 1) // 3)
PSI_Y = fp2_pow(XI, (P - 1) // 2)


def _psi(q):
    return (fp2_mul(fp2_conj(q[0]), PSI_X), fp2_mul(fp2_conj(q[1]), PSI_Y))


def _fp6_mul_sparse(a0, a1, a2, b0, b1):
    """(a0 + a1 v + a2 v^2) * (b0 + b1 v) on unpacked Fp2 pairs."""
    a0r, a0i = a0
    a1r, a1i = a1
    a2r, a2i = a2
    b0r, b0i = b0
    b1r, b1i = b1
    v0r = a0r * b0r - a0i * b0i
    v0i = a0r * b0i + a0i * b0r
    v1r = a1r * b1r - a1i * b1i
    v1i = a1r * b1i + a1i * b1r
    mr = (a1r + a2r) * b1r - (a1i + a2i) * b1i - v1r
    mi = (a1r + a2r) * b1i + (a1i + a2i) * b1r - v1i
    c0r = (v0r + 9 * mr - mi) % P
    c0i = (v0i + 9 * mi + mr) % P
    sr, si = a0r + a1r, a0i + a1i
    tr, ti = b0r + b1r, b0i + b1i
    c1r = (sr * tr - si * ti - v0r - v1r) % P
    c1i = (sr * ti + si * tr - v0i - v1i) % P
    c2r = ((a0r + a2r) * b0r - (a0i + a2i) * b0i - v0r + v1r) % P
    c2i = ((a0r + a2r) * b0i + (a0i + a2i) * b0r - v0i + v1i) % P
    return (c0r, c0i), (c1r, c1i), (c2r, c2i)


def _sparse_mul(f, s0, a, b):
    """Multiply f by the sparse line  s0 + a*w + b*w^3  (s0 in Fp; a, b in Fp2).

    In tower coordinates the line is (s0, 0, 0) + (a, b, 0)*w, so the
    product needs one dense-by-sparse Fp6 mul per half plus Fp scalings.
    """
    (f00, f01, f02), (f10, f11, f12) = f
    u0, u1, u2 = _fp6_mul_sparse(f10, f11, f12, a, b)
    c00 = ((f00[0] * s0 + 9 * u2[0] - u2[1]) % P, (f00[1] * s0 + 9 * u2[1] + u2[0]) % P)
    c01 = ((f01[0] * s0 + u0[0]) % P, (f01[1] * s0 + u0[1]) % P)
    c02 = ((f02[0] * s0 + u1[0]) % P, (f02[1] * s0 + u1[1]) % P)
    w0, w1, w2 = _fp6_mul_sparse(f00, f01, f02, a, b)
    c10 = ((w0[0] + f10[0] * s0) % P, (w0[1] + f10[1] * s0) % P)
    c11 = ((w1[0] + f11[0] * s0) % P, (w1[1] + f11[1] * s0) % P)
    c12 = ((w2[0] + f12[0] * s0) % P, (w2[1] + f12[1] * s0) % P)
    return ((c00, c01, c02), (c10, c11, c12))


def _line_double(t, p):
    """Tangent line at T evaluated at P; returns (2T, line coefficients)."""
    xt, yt = t
    lam = fp2_mul(fp2_scale(fp2_sqr(xt), 3), fp2_inv(fp2_scale(yt, 2)))
    x3 = fp2_sub(fp2_sqr(lam), fp2_scale(xt, 2))
    y3 = fp2_sub(fp2_mul(lam, fp2_sub(xt, x3)), yt)
    xp, yp = p
    a = fp2_scale(lam, -xp % P)
    b = fp2_sub(fp2_mul(lam, xt), yt)
    return (x3, y3), yp, a, b


def _line_add(t, q, p):
    """Chord through T and Q evaluated at P; returns (T+Q, line coefficients)."""
    xt, yt = t
    xq, yq = q
    if xt == xq:
        if yt != yq:
            # T = -Q only for adversarially constructed inputs; the loop
            # cannot continue past the point at infinity.
            raise ValueError("degenerate Miller loop accumulator")
        return _line_double(t, p)
    xp, yp = p
    lam = fp2_mul(fp2_sub(yq, yt), fp2_inv(fp2_sub(xq, xt)))
    x3 = fp2_sub(fp2_sub(fp2_sqr(lam), xt), xq)
    y3 = fp2_sub(fp2_mul(lam, fp2_sub(xt, x3)), yt)
    a = fp2_scale(lam, -xp % P)
    b = fp2_sub(fp2_mul(lam, xt), yt)
    return (x3, y3), yp, a, b


def miller_loop(pairs):
    """Product of Miller loop evaluations for (P in G1, Q in G2) pairs."""
    live = [(p, q) for p, q in pairs if p is not None and q is not None]
    if not live:
        return FP12_ONE
    f = FP12_ONE
    ts = [q for _, q in live]
    for digit in _ATE_NAF:
        f = fp12_sqr(f)
        for i, (p, q) in enumerate(live):
            ts[i], s0, a, b = _line_double(ts[i], p)
            f = _sparse_mul(f, s0, a, b)
        if digit:
            for i, (p, q) in enumerate(live):
                qq = q if digit == 1 else g2_neg(q)
                ts[i], s0, a, b = _line_add(ts[i], qq, p)
                f = _sparse_mul(f, s0, a, b)
    for i, (p, q) in enumerate(live):
        q1 = _psi(q)
        ts[i], s0, a, b = _line_add(ts[i], q1, p)
        f = _sparse_mul(f, s0, a, b)
        q2 = g2_neg(_psi(_psi(q)))
        ts[i], s0, a, b = _line_add(ts[i], q2, p)
        f = _sparse_mul(f, s0, a, b)
    return f


def fp12_cyc_sqr(x):
    """Squaring valid only in the cyclotomic subgroup (all pairing values)."""
    ((x0r, x0i), (x1r, x1i), (x2r, x2i)), ((x3r, x3i), (x4r, x4i), (x5r, x5i)) = x
    t0r = (x4r + x4i) * (x4r - x4i)
    t0i = x4r * x4i << 1
    t1r = (x0r + x0i) * (x0r - x0i)
    t1i = x0r * x0i << 1
    ar, ai = x4r + x0r, x4i + x0i
    t6r = (ar + ai) * (ar - ai) - t0r - t1r
    t6i = (ar * ai << 1) - t0i - t1i
    t2r = (x2r + x2i) * (x2r - x2i)
    t2i = x2r * x2i << 1
    t3r = (x3r + x3i) * (x3r - x3i)
    t3i = x3r * x3i << 1
    ar, ai = x2r + x3r, x2i + x3i
    t7r = (ar + ai) * (ar - ai) - t2r - t3r
    t7i = (ar * ai << 1) - t2i - t3i
    t4r = (x5r + x5i) * (x5r - x5i)
    t4i = x5r * x5i << 1
    t5r = (x1r + x1i) * (x1r - x1i)
    t5i = x1r * x1i << 1
    ar, ai = x5r + x1r, x5i + x1i
    t8r = (ar + ai) * (ar - ai) - t4r - t5r
    t8i = (ar * ai << 1) - t4i - t5i
    t8r, t8i = 9 * t8r - t8i, 9 * t8i + t8r
    t0r, t0i = 9 * t0r - t0i + t1r, 9 * t0i + t0r + t1i
    t2r, t2i = 9 * t2r - t2i + t3r, 9 * t2i + t2r + t3i
    t4r, t4i = 9 * t4r - t4i + t5r, 9 * t4i + t4r + t5i
    return (
        (
            ((3 * t0r - 2 * x0r) % P, (3 * t0i - 2 * x0i) % P),
            ((3 * t2r - 2 * x1r) % P, (3 * t2i - 2 * x1i) % P),
            ((3 * t4r - 2 * x2r) % P, (3 * t4i - 2 * x2i) % P),
        ),
        (
            ((3 * t8r + 2 * x3r) % P, (3 * t8i + 2 * x3i) % P),
            ((3 * t6r + 2 * x4r) % P, (3 * t6i + 2 * x4i) % P),
            ((3 * t7r + 2 * x5r) % P, (3 * t7i + 2 * x5i) % P),
        ),
    )


_U_NAF = _naf(U)[1:]


def _cyc_pow_u(x):
    """x^U for cyclotomic x; NAF digits use conjugation as cheap inversion."""
    xi = fp12_conj(x)
    result = x
    for digit in _U_NAF:
        result = fp12_cyc_sqr(result)
        if digit == 1:
            result = fp12_mul(result, x)
        elif digit == -1:
            result = fp12_mul(result, xi)
    return result


def gt_pow(x, e):
    """x^e for x in the cyclotomic subgroup (pairing outputs)."""
    e = int(e)
    if e < 0:
        x, e = fp12_conj(x), -e
    if e == 0:
        return FP12_ONE
    table = [FP12_ONE, x]
    for _ in range(14):
        table.append(fp12_mul(table[-1], x))
    top = (e.bit_length() + 3) // 4 * 4 - 4
    result = table[(e >> top) & 15]
    for i in range(top - 4, -4, -4):
        result = fp12_cyc_sqr(fp12_cyc_sqr(fp12_cyc_sqr(fp12_cyc_sqr(result))))
        window = (e >> i) & 15
        if window:
            result = fp12_mul(result, table[window])
    return result


def final_exponentiation(f):
    # easy part: f^((p^6-1)(p^2+1)) lands in the cyclotomic subgroup,
    # where inversion is conjugation and squaring has a fast form
    t = fp12_mul(fp12_conj(f), fp12_inv(f))
    t = fp12_mul(fp12_frob_p2(t), t)
    # hard part t^((p^4-p^2+1)/r) via three exponentiations by U; the
    # chain reproduces the exact integer exponent (asserted in tests
    # against a generic pow oracle)
    fu = _cyc_pow_u(t)
    fu2 = _cyc_pow_u(fu)
    fu3 = _cyc_pow_u(fu2)
    y0 = fp12_mul(fp12_mul(fp12_frob_p(t), fp12_frob_p2(t)), fp12_frob_p3(t))
    y1 = fp12_conj(t)
    y2 = fp12_frob_p2(fu2)
    y3 = fp12_conj(fp12_frob_p(fu))
    y4 = fp12_conj(fp12_mul(fu, fp12_frob_p(fu2)))
    y5 = fp12_conj(fu2)
    y6 = fp12_conj(fp12_mul(fu3, fp12_frob_p(fu3)))
    t0 = fp12_mul(fp12_mul(fp12_cyc_sqr(y6), y4), y5)
    t1 = fp12_mul(fp12_mul(y3, y5), t0)
    t0 = fp12_mul(t0, y2)
    t1 = fp12_cyc_sqr(fp12_mul(fp12_cyc_sqr(t1), t0))
    t0 = fp12_mul(t1, y1)
    t1 = fp12_mul(t1, y0)
    return fp12_mul(fp12_cyc_sqr(t0), t1)


def pairing(p, q):
    return final_exponentiation(miller_loop([(p, q)]))


def pairing_product(pairs):
    """e(P1,Q1) * e(P2,Q2) * ... computed with one shared Miller loop."""
    return final_exponentiation(miller_loop(pairs))


def gt_multi_pow(items):
    """Product of base^exp over (base, exp) pairs with shared squarings.

    Bases must lie in the cyclotomic subgroup; exponents are taken mod R.
    """
    items = [(b, int(e) % int(R)) for b, e in items]
    items = [(b, e) for b, e in items if e]
    if not items:
        return FP12_ONE
    tables = []
    for base, _ in items:
        tab = [FP12_ONE, base]
        for _ in range(14):
            tab.append(fp12_mul(tab[-1], base))
        tables.append(tab)
    top = (max(e.bit_length() for _, e in items) + 3) // 4 * 4 - 4
    result = FP12_ONE
    for i in range(top, -4, -4):
        if i != top:
            result = fp12_cyc_sqr(fp12_cyc_sqr(fp12_cyc_sqr(fp12_cyc_sqr(result))))
        for tab, (_, e) in zip(tables, items):
            window = (e >> i) & 15
            if window:
                result = fp12_mul(result, tab[window])
    return result


# Fixed-base exponentiation for the canonical pairing of the two
# generators; the nibble tables are built on first use and amortize
# across every encryption in the process.
GT_GEN = pairing(G1_GEN, G2_GEN)

_GT_GEN_TABLE = []


def gt_gen_pow(e):
    """GT_GEN^e via per-nibble precomputed tables (64 windows of 15)."""
    e = int(e) % int(R)
    if e == 0:
        return FP12_ONE
    if not _GT_GEN_TABLE:
        base = GT_GEN
        for _ in range(64):
            row = [FP12_ONE, base]
            for _ in range(14):
                row.append(fp12_mul(row[-1], base))
            _GT_GEN_TABLE.append(row)
            base = fp12_cyc_sqr(fp12_cyc_sqr(fp12_cyc_sqr(fp12_cyc_sqr(base))))
    result = FP12_ONE
    idx = 0
    while e:
        window = e & 15
        if window:
            result = fp12_mul(result, _GT_GEN_TABLE[idx][window])
        e >>= 4
        idx += 1
    return result


# ---------------------------------------------------------------------------
# Hash to group (try-and-increment; deterministic, not constant time).


def _hash_counter_stream(domain, tag, msg):
    prefix = domain + len(tag).to_bytes(2, "big") + tag + msg
    ctr = 0
    while True:
        yield hashlib.sha256(prefix + ctr.to_bytes(4, "big")).digest()
        ctr += 1


@lru_cache(maxsize=8192)
def hash_to_g1(tag, msg):
    """Map (domain tag, message) to a G1 point.  G1 has cofactor 1."""
    for digest in _hash_counter_stream(b"otachain/h2c/g1/", tag, msg):
        x = mpz(int.from_bytes(digest, "big") % P)
        rhs = (x * x % P * x + CURVE_B) % P
        y = powmod(rhs, _SQRT_EXP, P)
        if y * y % P == rhs:
            return (x, min(y, P - y))


@lru_cache(maxsize=8192)
def hash_to_g2(tag, msg):
    """Map (domain tag, message) to the order-R subgroup of the twist."""
    stream = _hash_counter_stream(b"otachain/h2c/g2/", tag, msg)
    while True:
        x = (mpz(int.from_bytes(next(stream), "big") % P), mpz(int.from_bytes(next(stream), "big") % P))
        rhs = fp2_add(fp2_mul(fp2_sqr(x), x), TWIST_B)
        y = fp2_sqrt(rhs)
        if y is None:
            continue
        if (y[1], y[0]) > ((-y[1]) % P, (-y[0]) % P):
            y = fp2_neg(y)
        q = g2_mul((x, y), G2_COFACTOR)
        if q is not None:
            return q


# ---------------------------------------------------------------------------
# Serialization.  G1: 32 bytes (x big-endian, flag bits in the top byte).
# G2: 64 bytes (x.im || x.re).  Fp12/GT: 384 bytes of tower coefficients.
# Flags: 0x40 = point at infinity, 0x80 = y is the lexicographically
# larger of the two roots.

_FLAG_INF = 0x40
_FLAG_YBIG = 0x80


def _y_is_big_fp(y):
    return y > P - y


def _y_is_big_fp2(y):
    return (y[1], y[0]) > ((-y[1]) % P, (-y[0]) % P)


def g1_to_bytes(pt):
    if pt is None:
        out = bytearray(32)
        out[0] = _FLAG_INF
        return bytes(out)
    x, y = pt
    out = bytearray(int(x).to_bytes(32, "big"))
    if _y_is_big_fp(y):
        out[0] |= _FLAG_YBIG
    return bytes(out)


def g1_from_bytes(data):
    """Decode a compressed G1 point; raises ValueError on malformed input."""
    if len(data) != 32:
        raise ValueError("G1 encoding must be 32 bytes")
    flags = data[0] & 0xC0
    if flags & _FLAG_INF:
        if any(data[1:]) or data[0] != _FLAG_INF:
            raise ValueError("malformed G1 infinity encoding")
        return None
    x = mpz(int.from_bytes(bytes([data[0] & 0x3F]) + data[1:], "big"))
    if x >= P:
        raise ValueError("G1 x-coordinate out of range")
    rhs = (x * x % P * x + CURVE_B) % P
    y = powmod(rhs, _SQRT_EXP, P)
    if y * y % P != rhs:
        raise ValueError("G1 x-coordinate not on curve")
    if bool(flags & _FLAG_YBIG) != _y_is_big_fp(y):
        y = P - y
    return (x, y)


def g2_to_bytes(pt):
    if pt is None:
        out = bytearray(64)
        out[0] = _FLAG_INF
        return bytes(out)
    x, y = pt
    out = bytearray(int(x[1]).to_bytes(32, "big") + int(x[0]).to_bytes(32, "big"))
    if _y_is_big_fp2(y):
        out[0] |= _FLAG_YBIG
    return bytes(out)


def g2_from_bytes(data, check_subgroup=True):
    """Decode a compressed G2 point, verifying twist and subgroup membership."""
    if len(data) != 64:
        raise ValueError("G2 encoding must be 64 bytes")
    flags = data[0] & 0xC0
    if flags & _FLAG_INF:
        if any(data[1:]) or data[0] != _FLAG_INF:
            raise ValueError("malformed G2 infinity encoding")
        return None
    xi = mpz(int.from_bytes(bytes([data[0] & 0x3F]) + data[1:32], "big"))
    xr = mpz(int.from_bytes(data[32:], "big"))
    if xi >= P or xr >= P:
        raise ValueError("G2 x-coordinate out of range")
    x = (xr, xi)
    rhs = fp2_add(fp2_mul(fp2_sqr(x), x), TWIST_B)
    y = fp2_sqrt(rhs)
    if y is None:
        raise ValueError("G2 x-coordinate not on twist curve")
    if bool(flags & _FLAG_YBIG) != _y_is_big_fp2(y):
        y = fp2_neg(y)
    pt = (x, y)
    if check_subgroup and not g2_in_subgroup(pt):
        raise ValueError("G2 point not in the order-R subgroup")
    return pt


def fp12_to_bytes(x):
    (c0, c2, c4), (c1, c3, c5) = x
    out = b""
    for c in (c0, c2, c4, c1, c3, c5):
        out += int(c[0]).to_bytes(32, "big") + int(c[1]).to_bytes(32, "big")
    return out


def fp12_from_bytes(data):
    if len(data) != 384:
        raise ValueError("Fp12 encoding must be 384 bytes")
    vals = [mpz(int.from_bytes(data[i : i + 32], "big")) for i in range(0, 384, 32)]
    if any(v >= P for v in vals):
        raise ValueError("Fp12 coefficient out of range")
    c0, c2, c4, c1, c3, c5 = [(vals[i], vals[i + 1]) for i in range(0, 12, 2)]
    return ((c0, c2, c4), (c1, c3, c5))
