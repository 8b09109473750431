"""Ledger tests: blocks, replay determinism, and the update contract.

Redemption fixtures are built end to end from the exchange module
(real sessions, receipts, and aggregate signatures), so the accounting
assertions are checked against independently constructed inputs.
"""

import hashlib
import random

import pytest

from otachain.bls import bls_aggregate, bls_keygen
from otachain.chain import (
    Block,
    Chain,
    Transaction,
    Validator,
    address_of,
    load_chain,
    make_transaction,
    redeem_payload,
    save_chain,
)
from otachain.exchange import (
    issue_certificate,
    make_receipt,
    open_session,
    package_manifest,
    package_update,
    serialize_session_key,
)

POLICY = "m1:model_x AND m1:year_2020"


class World:
    """One manufacturer validator, one distributor, a pool of certified vehicles."""

    def __init__(self, seed, n_vehicles=3, max_update=3, validator_ids=("m1",)):
        self.rng = random.Random(seed)
        self.keys = {}  # validator_id -> (chain keypair, cert keypair)
        validators = []
        for vid in validator_ids:
            chain_kp = bls_keygen(self.rng)
            cert_kp = bls_keygen(self.rng)
            self.keys[vid] = (chain_kp, cert_kp)
            validators.append(Validator(vid, chain_kp.pk_bytes(), cert_kp.pk_bytes()))
        self.chain = Chain(tuple(validators))
        self.distributor = bls_keygen(self.rng)
        self.vehicles = [self._certified_vehicle("m1") for _ in range(n_vehicles)]
        self.pkg = package_update(
            self.rng.randbytes(200), POLICY, max_update, rng=self.rng
        )

    def _certified_vehicle(self, vid):
        kp = bls_keygen(self.rng)
        cert = issue_certificate(self.keys[vid][1].sk, vid, kp.pk)
        return kp, cert

    def seal(self, txs):
        proposer = self.chain.scheduled_proposer(self.chain.head.height + 1)
        return self.chain.seal(txs, self.keys[proposer.validator_id][0].sk)

    def deploy(self, pkg=None):
        tx = make_transaction(
            self.keys["m1"][0], "deploy", package_manifest(pkg or self.pkg)
        )
        _, results = self.seal([tx])
        assert results[0].ok, results[0]
        return results[0].output

    def receipts(self, address_hex, vehicles=None, pkg=None):
        pkg = pkg or self.pkg
        out = []
        for kp, cert in vehicles if vehicles is not None else self.vehicles:
            session = open_session(pkg, self.rng)
            out.append((make_receipt(kp.sk, cert, pkg.ac, session.h), session.k))
        return out

    def redeem_tx(self, address_hex, pairs):
        payload = redeem_payload(
            address_hex, [r for r, _ in pairs], [k for _, k in pairs]
        )
        return make_transaction(self.distributor, "redeem", payload)


# --- deploy ---


def test_deploy_initializes_readable_state():
    w = World(seed=1)
    addr = w.deploy()
    assert w.chain.query_state(addr, "ac") == w.pkg.ac.hex()
    assert w.chain.query_state(addr, "policy_text") == w.pkg.policy_text
    assert w.chain.query_state(addr, "max_update") == 3
    assert w.chain.query_state(addr, "verifying_key") == w.pkg.verifying_key.to_json()
    assert w.chain.query_events(addr, name="Deployed") == [
        {"name": "Deployed", "topics": ["m1"], "data": w.pkg.ac.hex()}
    ]


def test_two_deploys_get_distinct_addresses():
    w = World(seed=2)
    a = w.deploy()
    b = w.deploy()
    assert a != b


def test_non_manufacturer_deploy_rejected():
    w = World(seed=3)
    root_before = w.chain.state_root
    tx = make_transaction(w.distributor, "deploy", package_manifest(w.pkg))
    _, results = w.seal([tx])
    assert results[0].reason == "not_manufacturer"
    assert w.chain.state_root == root_before


def test_bad_signature_rejected():
    w = World(seed=4)
    tx = make_transaction(w.keys["m1"][0], "deploy", package_manifest(w.pkg))
    forged = Transaction(
        sender_pk=tx.sender_pk,
        kind=tx.kind,
        payload=dict(tx.payload, max_update=99),
        sig=tx.sig,
    )
    _, results = w.seal([forged])
    assert results[0].reason == "bad_signature"


# --- redemption ---


def test_honest_redemption_pays_reputation_and_reveals_keys():
    w = World(seed=5, n_vehicles=3)
    addr = w.deploy()
    pairs = w.receipts(addr)
    _, results = w.seal([w.redeem_tx(addr, pairs)])
    assert results[0].ok
    assert results[0].output == {"revealed": 3}

    dist = address_of(w.distributor.pk_bytes()).hex()
    assert w.chain.query_reputation(addr, dist) == 3
    events = w.chain.query_events(addr, name="KeyRevealed")
    assert len(events) == 3
    for (receipt, k), event in zip(pairs, events):
        assert event["topics"] == [receipt.cert.to_json()["vehicle_pk"]]
        assert bytes.fromhex(event["data"]) == serialize_session_key(k)
        assert hashlib.sha256(bytes.fromhex(event["data"])).digest() == hashlib.sha256(
            serialize_session_key(k)
        ).digest()


def test_flipped_key_rejects_whole_transaction():
    w = World(seed=6, n_vehicles=3)
    addr = w.deploy()
    root_before = w.chain.state_root
    pairs = w.receipts(addr)
    payload = redeem_payload(addr, [r for r, _ in pairs], [k for _, k in pairs])
    key = bytearray(bytes.fromhex(payload["keys"][1]))
    key[5] ^= 0x01
    payload["keys"][1] = bytes(key).hex()
    tx = make_transaction(w.distributor, "redeem", payload)
    _, results = w.seal([tx])
    assert results[0].reason == "pairing_mismatch"
    assert w.chain.state_root == root_before
    dist = address_of(w.distributor.pk_bytes()).hex()
    assert w.chain.query_reputation(addr, dist) == 0
    assert w.chain.query_events(addr, name="KeyRevealed") == []


def test_download_cap_enforced_at_max_update():
    w = World(seed=7, n_vehicles=1, max_update=2)
    addr = w.deploy()
    vehicle_pk_hex = w.vehicles[0][0].pk_bytes().hex()
    for expected in (1, 2):
        _, results = w.seal([w.redeem_tx(addr, w.receipts(addr))])
        assert results[0].ok
        assert w.chain.query_download_count(addr, vehicle_pk_hex) == expected
    # A third download would exceed max_update; the cap comparison is >=.
    _, results = w.seal([w.redeem_tx(addr, w.receipts(addr))])
    assert results[0].reason == "download_cap"
    assert w.chain.query_download_count(addr, vehicle_pk_hex) == 2


def test_duplicate_vehicle_in_one_batch_rejected():
    w = World(seed=8, n_vehicles=1)
    addr = w.deploy()
    pairs = w.receipts(addr, vehicles=w.vehicles * 2)
    _, results = w.seal([w.redeem_tx(addr, pairs)])
    assert results[0].reason == "duplicate_pk"


def test_wrong_key_for_receipt_breaks_pairing():
    w = World(seed=9, n_vehicles=2)
    addr = w.deploy()
    (r1, k1), (r2, k2) = w.receipts(addr)
    _, results = w.seal([w.redeem_tx(addr, [(r1, k2), (r2, k1)])])
    assert results[0].reason == "pairing_mismatch"


def test_foreign_certificates_rejected():
    w = World(seed=10, n_vehicles=1)
    addr = w.deploy()
    rogue_cert_kp = bls_keygen(w.rng)
    kp = bls_keygen(w.rng)
    rogue = (kp, issue_certificate(rogue_cert_kp.sk, "m1", kp.pk))
    _, results = w.seal([w.redeem_tx(addr, w.receipts(addr, vehicles=[rogue]))])
    assert results[0].reason == "bad_certificate"

    # Certificate covers a different pk than the receipt signer.
    (receipt, k), = w.receipts(addr)
    other = w.vehicles[0][1]
    forged = type(receipt)(
        signer_pk=kp.pk, cert=other, message=receipt.message, sig=receipt.sig
    )
    _, results = w.seal([w.redeem_tx(addr, [(forged, k)])])
    assert results[0].reason == "bad_certificate"


def test_reputation_adds_batch_sizes_and_conserves_events():
    rng = random.Random(11)
    sizes = [rng.randrange(1, 51) for _ in range(3)]
    w = World(seed=12, n_vehicles=max(sizes), max_update=len(sizes))
    addr = w.deploy()
    for size in sizes:
        pairs = w.receipts(addr, vehicles=w.vehicles[:size])
        _, results = w.seal([w.redeem_tx(addr, pairs)])
        assert results[0].ok and results[0].output == {"revealed": size}
    dist = address_of(w.distributor.pk_bytes()).hex()
    assert w.chain.query_reputation(addr, dist) == sum(sizes)
    # Conservation: total reputation equals total KeyRevealed events.
    total_rep = sum(w.chain.query_state(addr, "reputation").values())
    assert total_rep == len(w.chain.query_events(addr, name="KeyRevealed"))


# --- blocks and consensus ---


def test_round_robin_schedule_and_empty_blocks():
    w = World(seed=13, validator_ids=("m1", "m2", "m3"))
    root = w.chain.state_root
    for expected in ("m1", "m2", "m3", "m1"):
        block, _ = w.seal([])
        assert block.proposer_id == expected
        assert block.state_root == root  # empty block advances height only
    assert w.chain.head.height == 4


def test_out_of_schedule_proposer_rejected():
    w = World(seed=14, validator_ids=("m1", "m2"))
    block = w.chain.produce_block([], w.keys["m1"][0].sk)
    wrong = Block(
        height=block.height,
        parent=block.parent,
        transactions=block.transactions,
        state_root=block.state_root,
        proposer_id="m2",
        proposer_sig=block.proposer_sig,
    )
    with pytest.raises(ValueError, match="proposer"):
        w.chain.apply_block(wrong)


def test_forged_proposer_signature_rejected():
    w = World(seed=15, validator_ids=("m1", "m2"))
    block = w.chain.produce_block([], w.keys["m2"][0].sk)  # wrong signer for m1 slot
    with pytest.raises(ValueError, match="signature"):
        w.chain.apply_block(block)


def test_tampered_block_rejected():
    w = World(seed=16)
    block = w.chain.produce_block([], w.keys["m1"][0].sk)
    bad_root = Block(
        height=block.height,
        parent=block.parent,
        transactions=block.transactions,
        state_root=hashlib.sha256(b"x").digest(),
        proposer_id=block.proposer_id,
        proposer_sig=block.proposer_sig,
    )
    with pytest.raises(ValueError):
        w.chain.apply_block(bad_root)
    bad_parent = Block(
        height=block.height,
        parent=hashlib.sha256(b"y").digest(),
        transactions=block.transactions,
        state_root=block.state_root,
        proposer_id=block.proposer_id,
        proposer_sig=block.proposer_sig,
    )
    with pytest.raises(ValueError, match="parent"):
        w.chain.apply_block(bad_parent)


def test_replicas_compute_identical_roots():
    w = World(seed=17, n_vehicles=2)
    replica = Chain(w.chain.validators)
    addr = w.deploy()
    w.seal([w.redeem_tx(addr, w.receipts(addr))])
    for block in w.chain.blocks[1:]:
        replica.apply_block(block)
    assert replica.state_root == w.chain.state_root
    assert replica.state == w.chain.state


# --- queries ---


def test_query_defaults_and_errors():
    w = World(seed=18)
    addr = w.deploy()
    assert w.chain.query_reputation(addr, "00" * 20) == 0
    assert w.chain.query_download_count(addr, "ab" * 32) == 0
    with pytest.raises(ValueError, match="unknown contract"):
        w.chain.query_state("ff" * 20, "ac")
    with pytest.raises(ValueError, match="unknown state key"):
        w.chain.query_state(addr, "balance")


def test_query_transaction_reads_without_writes():
    w = World(seed=19)
    addr = w.deploy()
    root = w.chain.state_root
    tx = make_transaction(
        w.distributor, "query", {"contract": addr, "key": "max_update"}
    )
    _, results = w.seal([tx])
    assert results[0].ok and results[0].output == 3
    assert w.chain.state_root == root


def test_event_order_matches_transaction_order():
    w = World(seed=20, n_vehicles=4, max_update=4)
    addr = w.deploy()
    first = w.receipts(addr, vehicles=w.vehicles[:2])
    second = w.receipts(addr, vehicles=w.vehicles[2:])
    w.seal([w.redeem_tx(addr, first), w.redeem_tx(addr, second)])
    events = w.chain.query_events(addr, name="KeyRevealed")
    expected = [r.cert.to_json()["vehicle_pk"] for r, _ in first + second]
    assert [ev["topics"][0] for ev in events] == expected


# --- persistence and replay ---


def test_save_load_replays_bit_exact(tmp_path):
    w = World(seed=21, n_vehicles=2)
    addr = w.deploy()
    w.seal([w.redeem_tx(addr, w.receipts(addr))])
    w.seal([])
    path = tmp_path / "ledger.bin"
    save_chain(path, w.chain)
    loaded = load_chain(path)
    assert loaded.state_root == w.chain.state_root
    assert loaded.state == w.chain.state
    assert [b.to_json() for b in loaded.blocks] == [b.to_json() for b in w.chain.blocks]


def test_corrupted_chain_file_rejected(tmp_path):
    w = World(seed=22, n_vehicles=1)
    addr = w.deploy()
    w.seal([w.redeem_tx(addr, w.receipts(addr))])
    path = tmp_path / "ledger.bin"
    save_chain(path, w.chain)
    data = bytearray(path.read_bytes())
    data[-40] ^= 0x01  # inside the last block record
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError):
        load_chain(path)
