"""Deterministic consortium ledger with the firmware-update contract.

A fixed registry of manufacturer validators takes turns proposing
blocks (round-robin, no fault tolerance; the validator set is closed
and trusted).  Every transaction is signed by its sender's chain key;
execution order equals transaction order, so replaying the block file
on any replica reproduces the head state root bit for bit.  The state
root is the sha256 of the canonical JSON serialization of the full
state, and blocks link by header digest.

The firmware-update contract holds, per deployment: the package
manifest fields, a per-distributor reputation map, a per-vehicle
download counter, and an append-only event log.  Redemption
(`receive_proof`) checks every receipt certificate, enforces the
download cap (updated_avs[pk] never exceeds max_update), recomputes
each receipt message C_s = sha256(ac || sha256(key_s)) from the
revealed keys, and verifies the aggregate signature via

    e(g1, sig_agg) = prod_s e(pk_s, hash_to_g1(C_s)).

Any failing check rejects the whole transaction with a reason code and
no state change; on success the sender's reputation grows by exactly
the number of entries and one KeyRevealed event is emitted per entry.

Manifests may carry the proving key on-chain (the constructor accepts
it) but flows that use the attested proof system keep it off-chain,
since there the proving key holds the attestation signing secret.
"""

import copy
import hashlib
import json
from dataclasses import dataclass

from . import bn254
from .bls import (
    DuplicateMessageError,
    bls_aggregate,
    bls_sign,
    bls_verify,
    bls_verify_aggregate,
)
from .exchange import (
    VehicleCertificate,
    receipt_message,
    serialize_session_key,
    verify_certificate,
)
from .policy import PolicySyntaxError, canonical_policy_text, parse_policy

TX_TAG = b"chain.tx"
BLOCK_TAG = b"chain.block"
CONTRACT_TAG = b"chain.contract"

ADDRESS_BYTES = 20

TX_KINDS = ("deploy", "redeem", "query")


def canonical_json(obj):
    """Key-sorted, separator-free JSON; the byte form every hash covers."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def address_of(pk_bytes):
    """Chain address: truncated hash of the serialized public key."""
    return hashlib.sha256(pk_bytes).digest()[:ADDRESS_BYTES]


def _frame(*parts):
    out = []
    for part in parts:
        out.append(len(part).to_bytes(8, "big"))
        out.append(part)
    return b"".join(out)


@dataclass(frozen=True)
class Validator:
    validator_id: str
    chain_pk: bytes  # serialized G2, verifies blocks and deploy transactions
    cert_pk: bytes  # serialized G2, verifies vehicle certificates

    def to_json(self):
        return {
            "validator_id": self.validator_id,
            "chain_pk": self.chain_pk.hex(),
            "cert_pk": self.cert_pk.hex(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            validator_id=obj["validator_id"],
            chain_pk=bytes.fromhex(obj["chain_pk"]),
            cert_pk=bytes.fromhex(obj["cert_pk"]),
        )


@dataclass(frozen=True)
class Transaction:
    sender_pk: bytes
    kind: str
    payload: dict
    sig: bytes

    @property
    def sender(self):
        return address_of(self.sender_pk)

    def digest(self):
        return hashlib.sha256(
            TX_TAG
            + _frame(self.sender_pk, self.kind.encode(), canonical_json(self.payload))
        ).digest()

    def to_json(self):
        return {
            "sender_pk": self.sender_pk.hex(),
            "kind": self.kind,
            "payload": self.payload,
            "sig": self.sig.hex(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            sender_pk=bytes.fromhex(obj["sender_pk"]),
            kind=obj["kind"],
            payload=obj["payload"],
            sig=bytes.fromhex(obj["sig"]),
        )


def make_transaction(keypair, kind, payload):
    """Sign (sender, kind, payload) with the sender's chain key."""
    if kind not in TX_KINDS:
        raise ValueError(f"unknown transaction kind {kind!r}")
    unsigned = Transaction(
        sender_pk=keypair.pk_bytes(), kind=kind, payload=payload, sig=b""
    )
    sig = bls_sign(keypair.sk, unsigned.digest())
    return Transaction(
        sender_pk=unsigned.sender_pk,
        kind=kind,
        payload=payload,
        sig=bn254.g1_to_bytes(sig),
    )


@dataclass(frozen=True)
class Block:
    height: int
    parent: bytes
    transactions: tuple
    state_root: bytes
    proposer_id: str
    proposer_sig: bytes

    def header_digest(self):
        tx_digest = hashlib.sha256(
            canonical_json([tx.to_json() for tx in self.transactions])
        ).digest()
        return hashlib.sha256(
            BLOCK_TAG
            + _frame(
                self.height.to_bytes(8, "big"),
                self.parent,
                tx_digest,
                self.state_root,
                self.proposer_id.encode(),
            )
        ).digest()

    def to_json(self):
        return {
            "height": self.height,
            "parent": self.parent.hex(),
            "transactions": [tx.to_json() for tx in self.transactions],
            "state_root": self.state_root.hex(),
            "proposer_id": self.proposer_id,
            "proposer_sig": self.proposer_sig.hex(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            height=obj["height"],
            parent=bytes.fromhex(obj["parent"]),
            transactions=tuple(
                Transaction.from_json(tx) for tx in obj["transactions"]
            ),
            state_root=bytes.fromhex(obj["state_root"]),
            proposer_id=obj["proposer_id"],
            proposer_sig=bytes.fromhex(obj["proposer_sig"]),
        )


@dataclass(frozen=True)
class ExecutionResult:
    status: str  # "ok" | "rejected"
    reason: str | None = None
    output: object = None

    @property
    def ok(self):
        return self.status == "ok"


def _rejected(reason):
    return ExecutionResult(status="rejected", reason=reason)


_MANIFEST_FIELDS = ("ac", "policy_text", "verifying_key", "max_update", "size_bytes")


class Chain:
    """Single-writer ledger; queries read the committed state only."""

    def __init__(self, validators):
        if not validators:
            raise ValueError("validator set must be nonempty")
        self.validators = tuple(validators)
        self.state = {
            "validators": [v.to_json() for v in self.validators],
            "deploy_count": 0,
            "contracts": {},
        }
        genesis = Block(
            height=0,
            parent=b"\x00" * 32,
            transactions=(),
            state_root=self.compute_state_root(self.state),
            proposer_id="",
            proposer_sig=b"",
        )
        self.blocks = [genesis]
        self.results = [()]  # per block, tuple of ExecutionResult

    # --- roots and schedule ---

    @staticmethod
    def compute_state_root(state):
        return hashlib.sha256(canonical_json(state)).digest()

    @property
    def head(self):
        return self.blocks[-1]

    @property
    def state_root(self):
        return self.head.state_root

    def scheduled_proposer(self, height):
        return self.validators[(height - 1) % len(self.validators)]

    def _validator_by_id(self, validator_id):
        for v in self.validators:
            if v.validator_id == validator_id:
                return v
        return None

    def _manufacturer_of(self, sender_pk):
        for v in self.validators:
            if v.chain_pk == sender_pk:
                return v
        return None

    # --- execution ---

    def _execute(self, state, tx):
        if tx.kind not in TX_KINDS:
            return _rejected("unknown_kind")
        try:
            sig = bn254.g1_from_bytes(tx.sig)
            pk = bn254.g2_from_bytes(tx.sender_pk)
        except ValueError:
            return _rejected("bad_signature")
        if not bls_verify(pk, tx.digest(), sig):
            return _rejected("bad_signature")
        if tx.kind == "deploy":
            return self._execute_deploy(state, tx)
        if tx.kind == "redeem":
            return self._execute_redeem(state, tx)
        return self._execute_query(state, tx)

    def _execute_deploy(self, state, tx):
        manufacturer = self._manufacturer_of(tx.sender_pk)
        if manufacturer is None:
            return _rejected("not_manufacturer")
        payload = tx.payload
        if not isinstance(payload, dict) or any(
            field not in payload for field in _MANIFEST_FIELDS
        ):
            return _rejected("bad_payload")
        try:
            ac = bytes.fromhex(payload["ac"])
            policy = parse_policy(payload["policy_text"])
        except (ValueError, PolicySyntaxError):
            return _rejected("bad_payload")
        if (
            len(ac) != 32
            or canonical_policy_text(policy) != payload["policy_text"]
            or not isinstance(payload["max_update"], int)
            or payload["max_update"] < 1
        ):
            return _rejected("bad_payload")

        address = hashlib.sha256(
            CONTRACT_TAG + tx.digest() + state["deploy_count"].to_bytes(8, "big")
        ).digest()[:ADDRESS_BYTES]
        state["deploy_count"] += 1
        state["contracts"][address.hex()] = {
            "ac": payload["ac"],
            "policy_text": payload["policy_text"],
            "verifying_key": payload["verifying_key"],
            "proving_key": payload.get("proving_key"),
            "max_update": payload["max_update"],
            "size_bytes": payload["size_bytes"],
            "manufacturer_id": manufacturer.validator_id,
            "deployer": tx.sender.hex(),
            "reputation": {},
            "updated_avs": {},
            "event_log": [
                {
                    "name": "Deployed",
                    "topics": [manufacturer.validator_id],
                    "data": payload["ac"],
                }
            ],
        }
        return ExecutionResult(status="ok", output=address.hex())

    def _execute_redeem(self, state, tx):
        payload = tx.payload
        if not isinstance(payload, dict):
            return _rejected("bad_payload")
        contract = state["contracts"].get(payload.get("contract"))
        if contract is None:
            return _rejected("unknown_contract")
        pks = payload.get("pks")
        certs = payload.get("certs")
        keys = payload.get("keys")
        if not (isinstance(pks, list) and isinstance(certs, list) and isinstance(keys, list)):
            return _rejected("bad_payload")
        if not (len(pks) == len(certs) == len(keys)) or not pks:
            return _rejected("length_mismatch")
        if len(set(pks)) != len(pks):
            return _rejected("duplicate_pk")

        issuer = self._validator_by_id(contract["manufacturer_id"])
        if issuer is None:
            return _rejected("bad_certificate")
        try:
            agg = bn254.g1_from_bytes(bytes.fromhex(payload.get("aggregate_sig", "")))
            cert_pk = bn254.g2_from_bytes(issuer.cert_pk)
        except ValueError:
            return _rejected("malformed_aggregate")

        ac = bytes.fromhex(contract["ac"])
        signer_pks = []
        messages = []
        for pk_hex, cert_json, key_hex in zip(pks, certs, keys):
            try:
                signer_pk = bn254.g2_from_bytes(bytes.fromhex(pk_hex))
                cert = VehicleCertificate(
                    vehicle_pk=bn254.g2_from_bytes(
                        bytes.fromhex(cert_json["vehicle_pk"])
                    ),
                    manufacturer_id=cert_json["manufacturer_id"],
                    signature=bn254.g1_from_bytes(
                        bytes.fromhex(cert_json["signature"])
                    ),
                )
                key_bytes = bytes.fromhex(key_hex)
            except (KeyError, TypeError, ValueError):
                return _rejected("bad_certificate")
            if (
                len(key_bytes) != 32
                or cert.manufacturer_id != contract["manufacturer_id"]
                or cert.vehicle_pk != signer_pk
                or not verify_certificate(cert, cert_pk)
            ):
                return _rejected("bad_certificate")
            if contract["updated_avs"].get(pk_hex, 0) >= contract["max_update"]:
                return _rejected("download_cap")
            h = hashlib.sha256(key_bytes).digest()
            signer_pks.append(signer_pk)
            messages.append(receipt_message(ac, h))

        try:
            if not bls_verify_aggregate(signer_pks, messages, agg):
                return _rejected("pairing_mismatch")
        except DuplicateMessageError:
            return _rejected("duplicate_message")
        except ValueError:
            return _rejected("malformed_aggregate")

        self._update_reputation(contract, tx.sender.hex(), len(pks))
        for pk_hex, key_hex in zip(pks, keys):
            contract["updated_avs"][pk_hex] = contract["updated_avs"].get(pk_hex, 0) + 1
            contract["event_log"].append(
                {"name": "KeyRevealed", "topics": [pk_hex], "data": key_hex}
            )
        return ExecutionResult(status="ok", output={"revealed": len(pks)})

    @staticmethod
    def _update_reputation(contract, distributor, n):
        # Reached only from a fully verified redemption.
        contract["reputation"][distributor] = (
            contract["reputation"].get(distributor, 0) + n
        )

    def _execute_query(self, state, tx):
        if not isinstance(tx.payload, dict):
            return _rejected("bad_payload")
        contract = state["contracts"].get(tx.payload.get("contract"))
        if contract is None:
            return _rejected("unknown_contract")
        key = tx.payload.get("key")
        if key not in contract:
            return _rejected("bad_payload")
        return ExecutionResult(status="ok", output=copy.deepcopy(contract[key]))

    # --- blocks ---

    def _execute_all(self, txs):
        state = copy.deepcopy(self.state)
        results = tuple(self._execute(state, tx) for tx in txs)
        return state, results

    def produce_block(self, txs, proposer_sk):
        """Execute txs in order on the current head and sign the header."""
        height = self.head.height + 1
        proposer = self.scheduled_proposer(height)
        state, _ = self._execute_all(txs)
        block = Block(
            height=height,
            parent=self.head.header_digest(),
            transactions=tuple(txs),
            state_root=self.compute_state_root(state),
            proposer_id=proposer.validator_id,
            proposer_sig=b"",
        )
        sig = bls_sign(proposer_sk, block.header_digest())
        return Block(
            height=block.height,
            parent=block.parent,
            transactions=block.transactions,
            state_root=block.state_root,
            proposer_id=block.proposer_id,
            proposer_sig=bn254.g1_to_bytes(sig),
        )

    def apply_block(self, block):
        """Validate, re-execute, and commit; raises ValueError on any mismatch."""
        if block.height != self.head.height + 1:
            raise ValueError("block height does not extend the head")
        if block.parent != self.head.header_digest():
            raise ValueError("parent hash does not match the head")
        proposer = self.scheduled_proposer(block.height)
        if block.proposer_id != proposer.validator_id:
            raise ValueError("proposer out of schedule")
        try:
            sig = bn254.g1_from_bytes(block.proposer_sig)
            pk = bn254.g2_from_bytes(proposer.chain_pk)
        except ValueError as exc:
            raise ValueError("malformed proposer signature") from exc
        if not bls_verify(pk, block.header_digest(), sig):
            raise ValueError("invalid proposer signature")
        state, results = self._execute_all(block.transactions)
        root = self.compute_state_root(state)
        if root != block.state_root:
            raise ValueError("state root mismatch")
        self.state = state
        self.blocks.append(block)
        self.results.append(results)
        return results

    def seal(self, txs, proposer_sk):
        """produce_block followed by apply_block on this replica."""
        block = self.produce_block(txs, proposer_sk)
        results = self.apply_block(block)
        return block, results

    # --- queries (committed state only) ---

    def _contract(self, address_hex):
        contract = self.state["contracts"].get(address_hex)
        if contract is None:
            raise ValueError(f"unknown contract {address_hex!r}")
        return contract

    def query_state(self, address_hex, key):
        contract = self._contract(address_hex)
        if key not in contract:
            raise ValueError(f"unknown state key {key!r}")
        return copy.deepcopy(contract[key])

    def query_reputation(self, address_hex, distributor_hex):
        return self._contract(address_hex)["reputation"].get(distributor_hex, 0)

    def query_download_count(self, address_hex, pk_hex):
        return self._contract(address_hex)["updated_avs"].get(pk_hex, 0)

    def query_events(self, address_hex, name=None, topic=None):
        events = self._contract(address_hex)["event_log"]
        return [
            copy.deepcopy(ev)
            for ev in events
            if (name is None or ev["name"] == name)
            and (topic is None or topic in ev["topics"])
        ]

    # --- replay ---

    @classmethod
    def replay(cls, validators, blocks):
        """Rebuild from genesis; bit-exact state roots are enforced."""
        chain = cls(validators)
        if not blocks or blocks[0].to_json() != chain.blocks[0].to_json():
            raise ValueError("genesis mismatch")
        for block in blocks[1:]:
            chain.apply_block(block)
        return chain


def redeem_payload(contract_address_hex, receipts, keys):
    """Transaction payload redeeming receipts with their revealed session keys."""
    if len(receipts) != len(keys) or not receipts:
        raise ValueError("need one key per receipt")
    agg = bls_aggregate([r.sig for r in receipts])
    return {
        "contract": contract_address_hex,
        "aggregate_sig": bn254.g1_to_bytes(agg).hex(),
        "pks": [bn254.g2_to_bytes(r.signer_pk).hex() for r in receipts],
        "certs": [r.cert.to_json() for r in receipts],
        "keys": [serialize_session_key(k).hex() for k in keys],
    }


# --- persistence: length-prefixed records, config first ---


def save_chain(path, chain):
    with open(path, "wb") as fh:
        config = canonical_json([v.to_json() for v in chain.validators])
        fh.write(len(config).to_bytes(4, "big") + config)
        for block in chain.blocks:
            record = canonical_json(block.to_json())
            fh.write(len(record).to_bytes(4, "big") + record)


def _read_records(fh):
    while True:
        prefix = fh.read(4)
        if not prefix:
            return
        if len(prefix) != 4:
            raise ValueError("truncated record length")
        size = int.from_bytes(prefix, "big")
        record = fh.read(size)
        if len(record) != size:
            raise ValueError("truncated record")
        yield record


def load_chain(path):
    with open(path, "rb") as fh:
        records = list(_read_records(fh))
    if not records:
        raise ValueError("empty chain file")
    validators = tuple(Validator.from_json(v) for v in json.loads(records[0]))
    blocks = [Block.from_json(json.loads(r)) for r in records[1:]]
    return Chain.replay(validators, blocks)
