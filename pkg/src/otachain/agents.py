"""Role state machines: manufacturer, distributor AV, responder AV.

The update campaign runs in five steps.  A manufacturer packages the
firmware, deploys the contract, and hands the package to the top-k
vehicles by reputation (ties broken by gid, ascending).  At each contact
a distributor broadcasts an attribute-encrypted challenge; a responder
that decrypts it echoes a digest of the challenge message, proving it
satisfies the policy without naming its attributes.  The pair then runs
the fair exchange: the distributor sends the encrypted update with a
proof that it decrypts to the authentic firmware, and the responder
answers with a BLS receipt over sha256(ac || h).  Receipts are redeemed
on the ledger in batches, which reveals the session keys; responders
pick their key from the KeyRevealed event, decrypt, and install only if
sha256(update || policy) equals the contract's ac.  Installed
responders fetch the proving key from the contract and start
distributing themselves.

Agents are deterministic state machines advanced by an external event
loop.  They never share mutable state; everything flows through message
values and chain transactions.  Time enters only as numbers stamped by
the caller, so the same calls replay to the same states.

Distributors pre-generate proofs between contacts (one per proof_gen
interval since they became distributors); an exchange consumes one
prepared proof, keeping the generation cost off the contact clock.
"""

import hashlib
import warnings
from dataclasses import dataclass, field

from . import bn254
from .bls import BlsKeyPair, bls_keygen
from .chain import address_of, make_transaction, redeem_payload
from .exchange import (
    ExchangeInstance,
    FirmwarePackage,
    ProvingKey,
    VehicleCertificate,
    VerifyingKey,
    issue_certificate,
    make_receipt,
    open_session,
    package_manifest,
    package_update,
    prove_exchange,
    receipt_message,
    serialize_session_key,
    verify_exchange,
    verify_receipt,
)
from .maabe import (
    AuthorityKeys,
    PolicyNotSatisfiedError,
    abe_decrypt,
    abe_encrypt,
    authority_setup,
    issue_attribute_key,
    random_gt_message,
)
from .mimc import mimc_decrypt
from .policy import compile_lsss, parse_policy

# Forward progress of a responder within one update campaign.
PROGRESS = ("idle", "challenged", "proof-verified", "receipt-sent",
            "key-received", "installed")

DEFAULT_BATCH_THRESHOLD = 5


@dataclass(frozen=True)
class Manufacturer:
    manufacturer_id: str
    chain_keys: BlsKeyPair  # validator key: blocks and deploy transactions
    cert_keys: BlsKeyPair  # issues vehicle certificates
    authority: AuthorityKeys  # attribute authority for this namespace

    @property
    def authority_public(self):
        return self.authority.public


def create_manufacturer(manufacturer_id, rng):
    return Manufacturer(
        manufacturer_id=manufacturer_id,
        chain_keys=bls_keygen(rng),
        cert_keys=bls_keygen(rng),
        authority=authority_setup(manufacturer_id, rng),
    )


@dataclass(frozen=True)
class VehicleIdentity:
    """Tamper-proof device contents issued at enrollment."""

    gid: str
    attribute_keys: tuple  # AttributeKey values, all bound to gid
    keypair: BlsKeyPair  # signs receipts and chain transactions
    certificate: VehicleCertificate
    manufacturer_pk: tuple  # certificate key of the issuing manufacturer

    @property
    def address(self):
        return address_of(self.keypair.pk_bytes()).hex()


def enroll_vehicle(issuer, gid, attributes, rng, authorities=None):
    """Issue keys and a certificate; attribute keys come from each
    attribute's namespace owner."""
    authorities = authorities or {issuer.manufacturer_id: issuer.authority}
    keypair = bls_keygen(rng)
    keys = []
    for attr in sorted(attributes):
        namespace = attr.split(":", 1)[0]
        if namespace not in authorities:
            raise ValueError(f"no authority for namespace {namespace!r}")
        keys.append(issue_attribute_key(authorities[namespace], gid, attr, rng))
    return VehicleIdentity(
        gid=gid,
        attribute_keys=tuple(keys),
        keypair=keypair,
        certificate=issue_certificate(issuer.cert_keys.sk, issuer.manufacturer_id, keypair.pk),
        manufacturer_pk=issuer.cert_keys.pk,
    )


@dataclass(frozen=True)
class PendingReceipt:
    receipt: object
    key: int
    responder_gid: str
    received_at: float


@dataclass
class DistributorState:
    identity: VehicleIdentity
    pkg: FirmwarePackage
    contract_address: str
    batch_threshold: int = DEFAULT_BATCH_THRESHOLD
    distributor_since: float = 0.0
    proofs_used: int = 0
    sessions: dict = field(default_factory=dict)  # responder gid -> session
    pending: list = field(default_factory=list)  # PendingReceipt, FIFO
    redeemed: int = 0


@dataclass
class ResponderState:
    identity: VehicleIdentity
    progress: str = "idle"
    held: dict | None = None  # enc_update, h, ac, policy_text once proof-verified
    installed_update: bytes | None = None
    quarantined: list = field(default_factory=list)

    def _advance(self, stage):
        # Progress may only move forward along PROGRESS.
        if PROGRESS.index(stage) < PROGRESS.index(self.progress):
            raise ValueError(f"progress may not move back from {self.progress}")
        self.progress = stage


def proofs_available(dstate, now, proof_gen_s):
    """Proofs prepared since becoming a distributor, minus those consumed."""
    if proof_gen_s <= 0:
        raise ValueError("proof generation time must be positive")
    prepared = int((now - dstate.distributor_since) / proof_gen_s)
    return max(0, prepared - dstate.proofs_used)


# --- release ---


def chain_reputation(chain, fleet):
    """Total on-chain reputation per gid, summed across deployed contracts."""
    by_address = {}
    for contract in chain.state["contracts"].values():
        for address_hex, value in contract["reputation"].items():
            by_address[address_hex] = by_address.get(address_hex, 0) + value
    return {v.gid: by_address.get(v.address, 0) for v in fleet}


def select_distributors(fleet, reputation, top_k):
    """Top-k vehicles by reputation, ties by gid ascending; clamps oversize k."""
    if top_k > len(fleet):
        warnings.warn(
            f"top_k={top_k} exceeds fleet size {len(fleet)}; clamping", stacklevel=2
        )
        top_k = len(fleet)
    ranked = sorted(fleet, key=lambda v: (-reputation.get(v.gid, 0), v.gid))
    return ranked[:top_k]


def manufacturer_release(
    manufacturer,
    chain,
    fleet,
    update_bytes,
    policy_text,
    max_update,
    top_k,
    rng,
    proposer_sk=None,
    batch_threshold=DEFAULT_BATCH_THRESHOLD,
    now=0.0,
    include_proving_key=True,
):
    """Package, deploy, and seed the initial distributor set with the update.

    The proving key travels in the deploy payload by default so that
    installed responders can turn distributor straight from chain state.
    """
    pkg = package_update(update_bytes, policy_text, max_update, rng=rng)
    payload = package_manifest(pkg)
    if include_proving_key:
        payload["proving_key"] = pkg.proving_key.to_json()
    tx = make_transaction(manufacturer.chain_keys, "deploy", payload)
    _, results = chain.seal(
        [tx], manufacturer.chain_keys.sk if proposer_sk is None else proposer_sk
    )
    if not results[0].ok:
        raise ValueError(f"deploy rejected: {results[0].reason}")
    address = results[0].output

    chosen = select_distributors(fleet, chain_reputation(chain, fleet), top_k)
    distributors = [
        DistributorState(
            identity=v,
            pkg=pkg,
            contract_address=address,
            batch_threshold=batch_threshold,
            distributor_since=now,
        )
        for v in chosen
    ]
    return address, distributors


def contract_view(chain, address_hex):
    """The contract fields agents read, plus the address itself."""
    view = {
        key: chain.query_state(address_hex, key)
        for key in ("ac", "policy_text", "verifying_key", "proving_key", "max_update")
    }
    view["address"] = address_hex
    return view


# --- challenge / response ---


@dataclass(frozen=True)
class Challenge:
    ciphertext: object  # AbeCiphertext
    echo: bytes  # digest the distributor expects back


def challenge_echo(message):
    return hashlib.sha256(bn254.fp12_to_bytes(message)).digest()


def distributor_broadcast_challenge(dstate, authorities, rng):
    """Fresh random GT message encrypted under the package policy."""
    matrix = compile_lsss(parse_policy(dstate.pkg.policy_text))
    message = random_gt_message(rng)
    ciphertext = abe_encrypt(authorities, matrix, message, rng)
    return Challenge(ciphertext=ciphertext, echo=challenge_echo(message))


def responder_handle_challenge(rstate, challenge):
    """Echo the challenge digest if the policy is satisfied; otherwise silence.

    Responders already past the challenge stage (receipt sent, key
    awaited, or installed) stay silent: exchanges are serialized
    per responder and duplicate downloads are skipped.
    """
    if rstate.progress not in ("idle", "challenged"):
        return None
    try:
        message = abe_decrypt(
            challenge.ciphertext, rstate.identity.gid, rstate.identity.attribute_keys
        )
    except (PolicyNotSatisfiedError, ValueError):
        return None
    rstate._advance("challenged")
    return challenge_echo(message)


# --- fair exchange ---


def run_exchange(dstate, rstate, contract, rng, now=0.0):
    """One full exchange after a correct echo; returns the receipt or None.

    The responder rebuilds the proof instance from contract state (ac,
    policy, verifying key) rather than trusting the distributor, and
    signs only after the proof verifies.  The distributor verifies the
    receipt and certificate before storing the pending redemption.
    """
    session = open_session(dstate.pkg, rng)
    dstate.proofs_used += 1
    proof = prove_exchange(dstate.pkg.proving_key, session, dstate.pkg)

    accepted = responder_receive_update(
        rstate, contract, session.enc_update, session.h, proof
    )
    if not accepted:
        return None

    receipt = make_receipt(
        rstate.identity.keypair.sk,
        rstate.identity.certificate,
        bytes.fromhex(contract["ac"]),
        session.h,
    )
    rstate._advance("receipt-sent")

    if not distributor_accept_receipt(dstate, session, receipt):
        return None
    dstate.sessions[rstate.identity.gid] = session
    dstate.pending.append(
        PendingReceipt(
            receipt=receipt, key=session.k, responder_gid=rstate.identity.gid,
            received_at=now,
        )
    )
    return receipt


def responder_receive_update(rstate, contract, enc_update, h, proof):
    """Verify the exchange proof against contract state; hold the ciphertext."""
    vk = VerifyingKey.from_json(contract["verifying_key"])
    instance = ExchangeInstance(
        enc_update=enc_update,
        h=h,
        ac=bytes.fromhex(contract["ac"]),
        policy_text=contract["policy_text"],
    )
    if not verify_exchange(vk, instance, proof):
        return False
    rstate._advance("proof-verified")
    rstate.held = {
        "enc_update": enc_update,
        "h": h,
        "ac": contract["ac"],
        "policy_text": contract["policy_text"],
    }
    return True


def distributor_accept_receipt(dstate, session, receipt):
    """Receipt must cover exactly this session and carry a valid certificate."""
    expected = receipt_message(dstate.pkg.ac, session.h)
    if receipt.message != expected:
        return False
    return verify_receipt(receipt, dstate.identity.manufacturer_pk)


# --- redemption ---


@dataclass(frozen=True)
class RedemptionAttempt:
    tx: object
    batch: tuple  # PendingReceipt entries carried by the transaction


def build_redemption(dstate, count):
    """Move the oldest `count` receipts in flight and build their transaction.

    The batch leaves `pending` immediately so an overlapping trigger cannot
    submit the same receipt twice while the first transaction is in transit.
    """
    batch = tuple(dstate.pending[:count])
    del dstate.pending[:count]
    payload = redeem_payload(
        dstate.contract_address,
        [p.receipt for p in batch],
        [p.key for p in batch],
    )
    return RedemptionAttempt(
        tx=make_transaction(dstate.identity.keypair, "redeem", payload), batch=batch
    )


def distributor_redeem(dstate):
    """One batch transaction when the threshold is met, else None."""
    if len(dstate.pending) < dstate.batch_threshold:
        return None
    return build_redemption(dstate, dstate.batch_threshold)


def flush_redemption(dstate):
    """Everything pending, regardless of threshold (timeout path)."""
    if not dstate.pending:
        return None
    return build_redemption(dstate, len(dstate.pending))


def settle_redemption(dstate, attempt, ok):
    """Count a confirmed batch; put a rejected one back for retry."""
    if ok:
        dstate.redeemed += len(attempt.batch)
    else:
        dstate.pending[0:0] = attempt.batch
    return ok


def prune_pending(dstate):
    """Drop locally invalid receipt/key pairs after a chain rejection."""
    keep = []
    dropped = []
    for p in dstate.pending:
        h = hashlib.sha256(serialize_session_key(p.key)).digest()
        fine = (
            p.receipt.message == receipt_message(dstate.pkg.ac, h)
            and verify_receipt(p.receipt, dstate.identity.manufacturer_pk)
        )
        (keep if fine else dropped).append(p)
    dstate.pending = keep
    return dropped


# --- finalize ---


def responder_finalize(rstate, key_bytes):
    """Decrypt with the revealed key and install only on an exact ac match.

    A mismatch (wrong bytes, wrong key) quarantines the ciphertext and
    leaves nothing installed.
    """
    if rstate.progress != "receipt-sent" or rstate.held is None:
        return None
    rstate._advance("key-received")
    held = rstate.held
    try:
        update = mimc_decrypt(int.from_bytes(key_bytes, "big"), held["enc_update"])
    except ValueError:
        rstate.quarantined.append(held)
        rstate.held = None
        return None
    digest = hashlib.sha256(update + held["policy_text"].encode()).digest()
    if digest != bytes.fromhex(held["ac"]):
        rstate.quarantined.append(held)
        rstate.held = None
        return None
    rstate.installed_update = update
    rstate._advance("installed")
    return update


def promote_responder(rstate, contract, now=0.0, batch_threshold=DEFAULT_BATCH_THRESHOLD):
    """An installed responder becomes a distributor for the same update."""
    if rstate.progress != "installed":
        raise ValueError("only installed responders distribute")
    if contract.get("proving_key") is None:
        raise ValueError("contract carries no proving key")
    pkg = FirmwarePackage(
        update_bytes=rstate.installed_update,
        policy_text=contract["policy_text"],
        ac=bytes.fromhex(contract["ac"]),
        proving_key=ProvingKey.from_json(contract["proving_key"]),
        verifying_key=VerifyingKey.from_json(contract["verifying_key"]),
        max_update=contract["max_update"],
    )
    return DistributorState(
        identity=rstate.identity,
        pkg=pkg,
        contract_address=contract["address"],
        batch_threshold=batch_threshold,
        distributor_since=now,
    )
