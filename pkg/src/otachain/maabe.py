"""Decentralized ciphertext-policy ABE over the pairing groups.

Each manufacturer runs an independent authority with secrets (alpha, y)
and publishes (e(g1,g2)^alpha, g1^y).  A vehicle identified by a global
id (gid) collects per-attribute keys

    K       = g2^alpha * H(gid)^y * F(attr)^t      in G2
    K_prime = g1^t                                 in G1

where H and F map gids and attributes into G2 under distinct domain
tags.  Binding every key to H(gid) is what stops collusion: shares
recovered under different gids carry different H(gid) masks that cannot
cancel.

Encryption shares a secret z across the rows of an LSSS matrix (shares
lambda_x) together with a zero-secret masking vector (shares w_x); each
row x under authority theta = rho(x) with fresh randomness t_x is

    C0   = M * e(g1,g2)^z
    C1_x = e(g1,g2)^lambda_x * (e(g1,g2)^alpha_theta)^t_x
    C2_x = g1^{-t_x}
    C3_x = (g1^{y_theta})^t_x * g1^{w_x}
    C4_x = F(attr_x)^t_x

A holder of row x's key computes

    C1_x * e(C2_x, K) * e(C3_x, H(gid)) * e(K_prime, C4_x)
        = e(g1,g2)^lambda_x * e(g1, H(gid))^w_x

and a satisfying reconstruction {c_x} collapses the product of those
row values to e(g1,g2)^z because sum c_x*lambda_x = z and
sum c_x*w_x = 0.  The implementation folds the c_x into the G1 pairing
arguments and batches all rows into one multi-pairing.
"""

from dataclasses import dataclass

from . import bn254
from .policy import find_reconstruction

GID_TAG = b"abe.gid"
ATTRIBUTE_TAG = b"abe.attr"


class PolicyNotSatisfiedError(Exception):
    """The supplied keys do not cover any satisfying row subset."""


def hash_gid(gid):
    """H: vehicle gid -> G2."""
    return bn254.hash_to_g2(GID_TAG, gid.encode())


def hash_attribute(attr):
    """F: namespaced attribute -> G2."""
    return bn254.hash_to_g2(ATTRIBUTE_TAG, attr.encode())


@dataclass(frozen=True)
class AuthorityPublic:
    manufacturer_id: str
    gt_alpha: tuple
    g1_y: tuple


@dataclass(frozen=True)
class AuthorityKeys:
    manufacturer_id: str
    alpha: int
    y: int
    g2_alpha: tuple
    public: AuthorityPublic


@dataclass(frozen=True)
class AttributeKey:
    gid: str
    attribute: str
    k: tuple
    k_prime: tuple

    @property
    def authority(self):
        return self.attribute.split(":", 1)[0]


def authority_setup(manufacturer_id, rng):
    """Create an authority keypair for one manufacturer namespace."""
    alpha = rng.randrange(1, bn254.R)
    y = rng.randrange(1, bn254.R)
    public = AuthorityPublic(
        manufacturer_id=manufacturer_id,
        gt_alpha=bn254.gt_gen_pow(alpha),
        g1_y=bn254.g1_mul(bn254.G1_GEN, y),
    )
    return AuthorityKeys(
        manufacturer_id=manufacturer_id,
        alpha=alpha,
        y=y,
        g2_alpha=bn254.g2_mul(bn254.G2_GEN, alpha),
        public=public,
    )


def issue_attribute_key(auth, gid, attr, rng):
    """Issue the (K, K') pair binding gid to one attribute."""
    namespace = attr.split(":", 1)[0]
    if namespace != auth.manufacturer_id:
        raise ValueError(
            f"attribute {attr!r} belongs to {namespace!r}, not {auth.manufacturer_id!r}"
        )
    t = rng.randrange(1, bn254.R)
    k = bn254.g2_add(
        auth.g2_alpha,
        bn254.g2_add(
            bn254.g2_mul(hash_gid(gid), auth.y),
            bn254.g2_mul(hash_attribute(attr), t),
        ),
    )
    return AttributeKey(
        gid=gid,
        attribute=attr,
        k=k,
        k_prime=bn254.g1_mul(bn254.G1_GEN, t),
    )


def attribute_key_well_formed(key, public):
    """Publicly checkable issuance correctness:
    e(g1, K) = e(g1,g2)^alpha * e(g1^y, H(gid)) * e(K', F(attr))."""
    lhs = bn254.pairing(bn254.G1_GEN, key.k)
    rhs = bn254.fp12_mul(
        public.gt_alpha,
        bn254.pairing_product(
            [
                (public.g1_y, hash_gid(key.gid)),
                (key.k_prime, hash_attribute(key.attribute)),
            ]
        ),
    )
    return lhs == rhs


@dataclass(frozen=True)
class CiphertextRow:
    c1: tuple
    c2: tuple
    c3: tuple
    c4: tuple


@dataclass(frozen=True)
class AbeCiphertext:
    c0: tuple
    rows: tuple
    policy: object


def random_gt_message(rng):
    """Uniform element of the pairing target subgroup, the message space."""
    return bn254.gt_gen_pow(rng.randrange(1, bn254.R))


def abe_encrypt(publics, matrix, msg, rng):
    """Encrypt a GT message under the compiled policy matrix.

    publics maps manufacturer id to AuthorityPublic; every row authority
    must be present.
    """
    missing = [a for a in matrix.row_authorities if a not in publics]
    if missing:
        raise ValueError(f"no authority public key for {sorted(set(missing))}")
    n = matrix.width
    mod = matrix.modulus
    z = rng.randrange(1, mod)
    v = [z] + [rng.randrange(mod) for _ in range(n - 1)]
    w = [0] + [rng.randrange(mod) for _ in range(n - 1)]
    rows = []
    for x, row in enumerate(matrix.rows):
        lam = sum(a * b for a, b in zip(row, v)) % mod
        wx = sum(a * b for a, b in zip(row, w)) % mod
        tx = rng.randrange(1, mod)
        pub = publics[matrix.row_authorities[x]]
        rows.append(
            CiphertextRow(
                c1=bn254.fp12_mul(bn254.gt_gen_pow(lam), bn254.gt_pow(pub.gt_alpha, tx)),
                c2=bn254.g1_mul(bn254.G1_GEN, -tx % mod),
                c3=bn254.g1_add(
                    bn254.g1_mul(pub.g1_y, tx), bn254.g1_mul(bn254.G1_GEN, wx)
                ),
                c4=bn254.g2_mul(hash_attribute(matrix.row_labels[x]), tx),
            )
        )
    return AbeCiphertext(
        c0=bn254.fp12_mul(msg, bn254.gt_gen_pow(z)),
        rows=tuple(rows),
        policy=matrix,
    )


def abe_decrypt(ct, gid, keys):
    """Recover the message with a satisfying key set for a single gid.

    Raises PolicyNotSatisfiedError when no reconstruction exists and
    ValueError when keys span several gids.
    """
    keys = list(keys)
    if any(key.gid != gid for key in keys):
        raise ValueError("attribute keys belong to more than one gid")
    by_attr = {key.attribute: key for key in keys}
    rec = find_reconstruction(ct.policy, set(by_attr))
    if rec is None:
        raise PolicyNotSatisfiedError("policy not satisfied")
    h_gid = hash_gid(gid)
    gt_items = []
    pairs = []
    for idx, c in rec.rows:
        row = ct.rows[idx]
        key = by_attr[ct.policy.row_labels[idx]]
        gt_items.append((row.c1, c))
        pairs.append((bn254.g1_mul(row.c2, c), key.k))
        pairs.append((bn254.g1_mul(row.c3, c), h_gid))
        pairs.append((bn254.g1_mul(key.k_prime, c), row.c4))
    gt_z = bn254.fp12_mul(bn254.gt_multi_pow(gt_items), bn254.pairing_product(pairs))
    return bn254.fp12_mul(ct.c0, bn254.fp12_conj(gt_z))
