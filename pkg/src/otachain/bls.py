"""BLS signatures with aggregation, minimal-signature variant.

Secret keys live in Z_r*, public keys in G2, signatures in G1; messages
hash to G1 under a dedicated domain tag.  A signature verifies when

    e(sig, g2) = e(hash_to_g1(msg), pk)

which is the single-signer case of the aggregate equation

    e(sig_agg, g2) = prod_j e(hash_to_g1(msg_j), pk_j).

Both checks run as one multi-pairing against the inverted left side, so
a verification costs a single shared Miller loop plus final
exponentiation.  Aggregate verification refuses duplicate messages
outright: allowing them would let a signer replay one receipt under
several keys, the classic rogue aggregation.
"""

from dataclasses import dataclass

from . import bn254

MESSAGE_TAG = b"bls.msg"


class DuplicateMessageError(ValueError):
    """Raised when an aggregate covers the same message twice."""


@dataclass(frozen=True)
class BlsKeyPair:
    sk: int
    pk: tuple

    def pk_bytes(self):
        return bn254.g2_to_bytes(self.pk)


def bls_keygen(rng):
    """Sample a keypair; rng is any random.Random-compatible source."""
    sk = rng.randrange(1, bn254.R)
    return BlsKeyPair(sk=sk, pk=bn254.g2_mul(bn254.G2_GEN, sk))


def bls_sign(sk, msg):
    sk = int(sk) % int(bn254.R)
    if sk == 0:
        raise ValueError("signing key must be nonzero")
    return bn254.g1_mul(bn254.hash_to_g1(MESSAGE_TAG, msg), sk)


def _valid_g1(pt):
    return pt is not None and bn254.g1_is_on_curve(pt)


def _valid_g2(pt):
    return pt is not None and bn254.g2_in_subgroup(pt)


def bls_verify(pk, msg, sig):
    """True iff sig is a valid signature on msg under pk.

    Malformed or off-curve inputs return False rather than raising.
    """
    if not _valid_g1(sig) or not _valid_g2(pk):
        return False
    h = bn254.hash_to_g1(MESSAGE_TAG, msg)
    check = bn254.pairing_product([(bn254.g1_neg(sig), bn254.G2_GEN), (h, pk)])
    return check == bn254.FP12_ONE


def bls_aggregate(sigs):
    """G1 product of the signatures; order-independent."""
    if not sigs:
        raise ValueError("cannot aggregate an empty signature list")
    agg = None
    for sig in sigs:
        if not _valid_g1(sig):
            raise ValueError("aggregate input is not a valid signature point")
        agg = bn254.g1_add(agg, sig)
    return agg


def bls_verify_aggregate(pks, msgs, agg):
    """Verify an aggregate signature over pairwise distinct messages."""
    if len(pks) != len(msgs) or not pks:
        raise ValueError("need equally many keys and messages, at least one")
    if len(set(msgs)) != len(msgs):
        raise DuplicateMessageError("aggregate covers a repeated message")
    if not _valid_g1(agg):
        return False
    pairs = [(bn254.g1_neg(agg), bn254.G2_GEN)]
    for pk, msg in zip(pks, msgs):
        if not _valid_g2(pk):
            return False
        pairs.append((bn254.hash_to_g1(MESSAGE_TAG, msg), pk))
    return bn254.pairing_product(pairs) == bn254.FP12_ONE
