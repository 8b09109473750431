"""Firmware packaging, session-key fair exchange, and distribution receipts.

A package binds firmware bytes to their access policy through the
authentication code

    ac = sha256(update_bytes || canonical_policy_text)

so any party holding the plaintext can re-derive and check it.  To hand
the update to a responder without giving it away first, a distributor
opens a session with a fresh key k, publishes h = sha256(k) and
enc_update = mimc_encrypt(k, update_bytes), and proves for the instance
y = (enc_update, h, ac, policy_text) that it knows k with

    sha256(k) = h  and  sha256(mimc_decrypt(k, enc_update) || policy_text) = ac.

The responder answers with a BLS receipt over sha256(ac || h); revealing
k on the ledger later settles the exchange, and anyone can recompute h
from the revealed key because k is serialized fixed-width big-endian.

Two proof systems share one gen/prove/verify interface:

    attested     reference system.  proof_gen creates a signing key kept
                 inside the proving key (a stand-in for a trusted
                 setup); the prover checks its witness locally and signs
                 a digest of the instance.  Soundness reduces to
                 signature unforgeability; only the instance is signed,
                 so the proof leaks nothing about k.
    transparent  testing system.  The proof is the witness itself and
                 the verifier re-executes the relation.  Not hiding;
                 it serves as the soundness oracle for attested proofs.
"""

import hashlib
from dataclasses import dataclass

from . import bn254
from .bls import bls_keygen, bls_sign, bls_verify
from .mimc import mimc_decrypt, mimc_encrypt
from .policy import canonical_policy_text, parse_policy

STATEMENT_TAG = b"exchange.statement"
INSTANCE_TAG = b"exchange.instance"
CERTIFICATE_TAG = b"vehicle.cert"

PROOF_SYSTEMS = ("attested", "transparent")

SESSION_KEY_BYTES = 32


class WitnessError(ValueError):
    """Raised when a prover's witness fails the relation it must attest."""


def serialize_session_key(k):
    """Fixed-width big-endian form; h and key reveals both hash exactly this."""
    return int(k).to_bytes(SESSION_KEY_BYTES, "big")


def _frame(*parts):
    # Length-prefix every field so the digest input is injective.
    out = []
    for part in parts:
        out.append(len(part).to_bytes(8, "big"))
        out.append(part)
    return b"".join(out)


def _statement_digest(ac, policy_text):
    return hashlib.sha256(STATEMENT_TAG + _frame(ac, policy_text.encode())).digest()


@dataclass(frozen=True)
class ProvingKey:
    system: str
    statement: bytes
    signer_sk: int  # 0 under the transparent system

    def to_json(self):
        return {
            "system": self.system,
            "statement": self.statement.hex(),
            "signer_sk": format(self.signer_sk, "x"),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            system=obj["system"],
            statement=bytes.fromhex(obj["statement"]),
            signer_sk=int(obj["signer_sk"], 16),
        )


@dataclass(frozen=True)
class VerifyingKey:
    system: str
    statement: bytes
    signer_pk: bytes  # serialized G2 point; empty under the transparent system

    def to_json(self):
        return {
            "system": self.system,
            "statement": self.statement.hex(),
            "signer_pk": self.signer_pk.hex(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            system=obj["system"],
            statement=bytes.fromhex(obj["statement"]),
            signer_pk=bytes.fromhex(obj["signer_pk"]),
        )


@dataclass(frozen=True)
class ExchangeInstance:
    enc_update: bytes
    h: bytes
    ac: bytes
    policy_text: str

    def digest(self):
        return hashlib.sha256(
            INSTANCE_TAG
            + _frame(self.enc_update, self.h, self.ac, self.policy_text.encode())
        ).digest()


def _relation_holds(k, instance):
    if hashlib.sha256(serialize_session_key(k)).digest() != instance.h:
        return False
    try:
        update = mimc_decrypt(k, instance.enc_update)
    except ValueError:
        return False
    ac = hashlib.sha256(update + instance.policy_text.encode()).digest()
    return ac == instance.ac


def proof_gen(ac, policy_text, system="attested", rng=None):
    """Key pair bound to the decrypt-to-authentic-firmware relation of one package."""
    if system not in PROOF_SYSTEMS:
        raise ValueError(f"unknown proof system {system!r}")
    statement = _statement_digest(ac, policy_text)
    if system == "transparent":
        return (
            ProvingKey(system=system, statement=statement, signer_sk=0),
            VerifyingKey(system=system, statement=statement, signer_pk=b""),
        )
    if rng is None:
        raise ValueError("attested setup needs a randomness source")
    pair = bls_keygen(rng)
    return (
        ProvingKey(system=system, statement=statement, signer_sk=pair.sk),
        VerifyingKey(system=system, statement=statement, signer_pk=pair.pk_bytes()),
    )


@dataclass(frozen=True)
class FirmwarePackage:
    update_bytes: bytes
    policy_text: str  # canonical encoding
    ac: bytes
    proving_key: ProvingKey
    verifying_key: VerifyingKey
    max_update: int

    @property
    def size_bytes(self):
        return len(self.update_bytes)


def package_update(update_bytes, policy_text, max_update, system="attested", rng=None):
    """Bind firmware to a policy and generate the proof keys for its relation."""
    if max_update < 1:
        raise ValueError("max_update must be at least 1")
    canonical = canonical_policy_text(parse_policy(policy_text))
    ac = hashlib.sha256(update_bytes + canonical.encode()).digest()
    proving_key, verifying_key = proof_gen(ac, canonical, system=system, rng=rng)
    return FirmwarePackage(
        update_bytes=update_bytes,
        policy_text=canonical,
        ac=ac,
        proving_key=proving_key,
        verifying_key=verifying_key,
        max_update=max_update,
    )


def package_manifest(pkg):
    """Exactly the fields the ledger contract constructor consumes."""
    return {
        "ac": pkg.ac.hex(),
        "policy_text": pkg.policy_text,
        "verifying_key": pkg.verifying_key.to_json(),
        "max_update": pkg.max_update,
        "size_bytes": pkg.size_bytes,
    }


@dataclass(frozen=True)
class ExchangeSession:
    k: int
    h: bytes
    enc_update: bytes
    proof: bytes | None = None

    def instance(self, pkg):
        return ExchangeInstance(
            enc_update=self.enc_update,
            h=self.h,
            ac=pkg.ac,
            policy_text=pkg.policy_text,
        )


def open_session(pkg, rng):
    """Fresh k per call; receipt uniqueness rests on h never repeating."""
    k = rng.randrange(1, bn254.R)
    return ExchangeSession(
        k=k,
        h=hashlib.sha256(serialize_session_key(k)).digest(),
        enc_update=mimc_encrypt(k, pkg.update_bytes),
    )


def prove_exchange(proving_key, session, pkg):
    """Produce a proof for the session's instance; refuses a bad witness."""
    instance = session.instance(pkg)
    if _statement_digest(instance.ac, instance.policy_text) != proving_key.statement:
        raise WitnessError("instance does not match the key's statement")
    if not _relation_holds(session.k, instance):
        raise WitnessError("witness fails the exchange relation")
    if proving_key.system == "transparent":
        return serialize_session_key(session.k)
    sig = bls_sign(proving_key.signer_sk, instance.digest())
    return bn254.g1_to_bytes(sig)


def verify_exchange(verifying_key, instance, proof):
    """Accept iff the proof attests the relation for exactly this instance."""
    if _statement_digest(instance.ac, instance.policy_text) != verifying_key.statement:
        return False
    if verifying_key.system == "transparent":
        if len(proof) != SESSION_KEY_BYTES:
            return False
        return _relation_holds(int.from_bytes(proof, "big"), instance)
    try:
        sig = bn254.g1_from_bytes(proof)
        signer_pk = bn254.g2_from_bytes(verifying_key.signer_pk)
    except ValueError:
        return False
    return bls_verify(signer_pk, instance.digest(), sig)


@dataclass(frozen=True)
class VehicleCertificate:
    vehicle_pk: tuple  # G2 point
    manufacturer_id: str
    signature: tuple  # G1 point, by the manufacturer's certificate key

    def to_json(self):
        return {
            "vehicle_pk": bn254.g2_to_bytes(self.vehicle_pk).hex(),
            "manufacturer_id": self.manufacturer_id,
            "signature": bn254.g1_to_bytes(self.signature).hex(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            vehicle_pk=bn254.g2_from_bytes(bytes.fromhex(obj["vehicle_pk"])),
            manufacturer_id=obj["manufacturer_id"],
            signature=bn254.g1_from_bytes(bytes.fromhex(obj["signature"])),
        )


def _certificate_payload(manufacturer_id, vehicle_pk):
    return CERTIFICATE_TAG + _frame(
        manufacturer_id.encode(), bn254.g2_to_bytes(vehicle_pk)
    )


def issue_certificate(cert_sk, manufacturer_id, vehicle_pk):
    sig = bls_sign(cert_sk, _certificate_payload(manufacturer_id, vehicle_pk))
    return VehicleCertificate(
        vehicle_pk=vehicle_pk, manufacturer_id=manufacturer_id, signature=sig
    )


def verify_certificate(cert, manufacturer_pk):
    payload = _certificate_payload(cert.manufacturer_id, cert.vehicle_pk)
    return bls_verify(manufacturer_pk, payload, cert.signature)


@dataclass(frozen=True)
class Receipt:
    signer_pk: tuple  # G2 point
    cert: VehicleCertificate
    message: bytes
    sig: tuple  # G1 point


def receipt_message(ac, h):
    """sha256(ac || h); both operands are fixed-width digests."""
    return hashlib.sha256(ac + h).digest()


def make_receipt(vehicle_sk, cert, ac, h):
    message = receipt_message(ac, h)
    return Receipt(
        signer_pk=cert.vehicle_pk,
        cert=cert,
        message=message,
        sig=bls_sign(vehicle_sk, message),
    )


def verify_receipt(receipt, manufacturer_pk):
    if receipt.signer_pk != receipt.cert.vehicle_pk:
        return False
    if not verify_certificate(receipt.cert, manufacturer_pk):
        return False
    return bls_verify(receipt.signer_pk, receipt.message, receipt.sig)
