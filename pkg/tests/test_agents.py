"""Role state machines: release, challenge, exchange, redemption, install.

The desk-scale liveness test at the bottom drives the full five-step
flow by hand (no simulator) and doubles as the reference for the event
loop's wiring.
"""

import dataclasses
import hashlib
import random

import pytest

from otachain import bn254
from otachain.agents import (
    Challenge,
    DistributorState,
    ResponderState,
    chain_reputation,
    challenge_echo,
    contract_view,
    create_manufacturer,
    distributor_broadcast_challenge,
    distributor_redeem,
    enroll_vehicle,
    flush_redemption,
    manufacturer_release,
    promote_responder,
    proofs_available,
    prune_pending,
    responder_finalize,
    responder_handle_challenge,
    run_exchange,
    select_distributors,
    settle_redemption,
)
from otachain.bls import bls_keygen
from otachain.chain import Chain, Validator
from otachain.exchange import issue_certificate, serialize_session_key

POLICY = "m1:model_x AND m1:year_2020"
SATISFYING = ("m1:model_x", "m1:year_2020")
LACKING = ("m1:model_x",)


class Fleet:
    def __init__(self, seed, n_satisfying=3, n_lacking=0, max_update=3, top_k=1):
        self.rng = random.Random(seed)
        self.manufacturer = create_manufacturer("m1", self.rng)
        self.chain = Chain(
            (
                Validator(
                    "m1",
                    self.manufacturer.chain_keys.pk_bytes(),
                    self.manufacturer.cert_keys.pk_bytes(),
                ),
            )
        )
        self.vehicles = []
        for i in range(n_satisfying + n_lacking):
            attrs = SATISFYING if i < n_satisfying else LACKING
            self.vehicles.append(
                enroll_vehicle(self.manufacturer, f"av{i:02d}", attrs, self.rng)
            )
        self.update = self.rng.randbytes(400)
        self.address, self.distributors = manufacturer_release(
            self.manufacturer,
            self.chain,
            self.vehicles,
            self.update,
            POLICY,
            max_update,
            top_k,
            self.rng,
        )
        self.contract = contract_view(self.chain, self.address)
        self.authorities = {"m1": self.manufacturer.authority_public}

    def seal(self, txs):
        return self.chain.seal(txs, self.manufacturer.chain_keys.sk)

    def responder(self, index):
        return ResponderState(identity=self.vehicles[index])

    def full_exchange(self, dstate, rstate):
        challenge = distributor_broadcast_challenge(dstate, self.authorities, self.rng)
        echo = responder_handle_challenge(rstate, challenge)
        assert echo == challenge.echo
        receipt = run_exchange(dstate, rstate, self.contract, self.rng)
        assert receipt is not None
        return receipt


# --- release and distributor selection ---


def test_release_deploys_and_seeds_top_k():
    f = Fleet(seed=1, n_satisfying=3, top_k=2)
    assert [d.identity.gid for d in f.distributors] == ["av00", "av01"]
    assert f.contract["ac"] == f.distributors[0].pkg.ac.hex()
    assert f.distributors[0].pkg.update_bytes == f.update
    assert f.contract["proving_key"] is not None


def test_select_distributors_ranks_by_reputation_then_gid():
    f = Fleet(seed=2, n_satisfying=3)
    a, b, c = f.vehicles
    chosen = select_distributors([a, b, c], {a.gid: 5, b.gid: 2, c.gid: 9}, 2)
    assert [v.gid for v in chosen] == [c.gid, a.gid]
    # Fresh chain: every reputation is zero, ties break lexicographically.
    assert chain_reputation(f.chain, f.vehicles) == {v.gid: 0 for v in f.vehicles}


def test_oversize_top_k_clamps_with_warning():
    f = Fleet(seed=3, n_satisfying=2)
    with pytest.warns(UserWarning, match="clamp"):
        chosen = select_distributors(f.vehicles, {}, 5)
    assert len(chosen) == 2


# --- challenge / response ---


def test_satisfying_responder_echoes_challenge():
    f = Fleet(seed=4, n_satisfying=2, n_lacking=1)
    dstate = f.distributors[0]
    challenge = distributor_broadcast_challenge(dstate, f.authorities, f.rng)
    other = distributor_broadcast_challenge(dstate, f.authorities, f.rng)
    assert challenge.echo != other.echo  # fresh message per contact

    satisfied = f.responder(1)
    assert responder_handle_challenge(satisfied, challenge) == challenge.echo
    assert satisfied.progress == "challenged"

    lacking = f.responder(2)
    assert responder_handle_challenge(lacking, challenge) is None
    assert lacking.progress == "idle"


def test_busy_or_installed_responders_stay_silent():
    f = Fleet(seed=5, n_satisfying=2)
    dstate = f.distributors[0]
    rstate = f.responder(1)
    challenge = distributor_broadcast_challenge(dstate, f.authorities, f.rng)
    assert responder_handle_challenge(rstate, challenge) == challenge.echo
    # A second challenge before the exchange is fine (still negotiating).
    assert responder_handle_challenge(rstate, challenge) == challenge.echo
    run_exchange(dstate, rstate, f.contract, f.rng)
    assert rstate.progress == "receipt-sent"
    assert responder_handle_challenge(rstate, challenge) is None


# --- exchange ---


def test_exchange_stores_receipt_and_session():
    f = Fleet(seed=6, n_satisfying=2)
    dstate = f.distributors[0]
    rstate = f.responder(1)
    receipt = f.full_exchange(dstate, rstate)
    assert dstate.pending[0].receipt is receipt
    assert dstate.pending[0].responder_gid == rstate.identity.gid
    assert dstate.sessions[rstate.identity.gid].k == dstate.pending[0].key
    assert rstate.progress == "receipt-sent"
    assert rstate.held["enc_update"] == dstate.sessions[rstate.identity.gid].enc_update
    assert dstate.proofs_used == 1


def test_responder_aborts_on_bad_proof_or_tampered_ciphertext():
    f = Fleet(seed=7, n_satisfying=2)
    dstate = f.distributors[0]
    rstate = f.responder(1)
    from otachain.exchange import open_session, prove_exchange

    session = open_session(dstate.pkg, f.rng)
    proof = prove_exchange(dstate.pkg.proving_key, session, dstate.pkg)
    from otachain.agents import responder_receive_update

    tampered = bytearray(session.enc_update)
    tampered[30] ^= 0xFF
    assert not responder_receive_update(
        rstate, f.contract, bytes(tampered), session.h, proof
    )
    assert not responder_receive_update(
        rstate, f.contract, session.enc_update, session.h, proof[:-1]
    )
    assert rstate.progress == "challenged" or rstate.progress == "idle"
    assert rstate.held is None


def test_distributor_discards_receipt_with_foreign_certificate():
    f = Fleet(seed=8, n_satisfying=2)
    dstate = f.distributors[0]
    rogue_cert_keys = bls_keygen(f.rng)
    victim = f.vehicles[1]
    forged_identity = dataclasses.replace(
        victim,
        certificate=issue_certificate(rogue_cert_keys.sk, "m1", victim.keypair.pk),
    )
    rstate = ResponderState(identity=forged_identity)
    challenge = distributor_broadcast_challenge(dstate, f.authorities, f.rng)
    assert responder_handle_challenge(rstate, challenge) == challenge.echo
    assert run_exchange(dstate, rstate, f.contract, f.rng) is None
    assert dstate.pending == []


# --- redemption ---


def test_redemption_batches_and_pays_reputation():
    f = Fleet(seed=9, n_satisfying=13, top_k=1)
    dstate = f.distributors[0]
    for i in range(1, 13):
        f.full_exchange(dstate, f.responder(i))
    assert len(dstate.pending) == 12

    batches = []
    while (attempt := distributor_redeem(dstate)) is not None:
        _, results = f.seal([attempt.tx])
        assert results[0].ok
        settle_redemption(dstate, attempt, results[0].ok)
        batches.append(len(attempt.batch))
    assert batches == [5, 5]  # threshold-sized transactions
    assert len(dstate.pending) == 2

    flush = flush_redemption(dstate)
    _, results = f.seal([flush.tx])
    settle_redemption(dstate, flush, results[0].ok)
    assert dstate.pending == []
    assert dstate.redeemed == 12
    assert f.chain.query_reputation(f.address, dstate.identity.address) == 12


def test_rejected_redemption_retains_then_prunes():
    f = Fleet(seed=10, n_satisfying=4, top_k=1)
    dstate = f.distributors[0]
    for i in range(1, 4):
        f.full_exchange(dstate, f.responder(i))
    # Corrupt one pending key so the aggregate check fails on chain.
    bad = dstate.pending[1]
    dstate.pending[1] = dataclasses.replace(bad, key=(bad.key + 1) % bn254.R)

    attempt = flush_redemption(dstate)
    _, results = f.seal([attempt.tx])
    assert results[0].reason == "pairing_mismatch"
    settle_redemption(dstate, attempt, results[0].ok)
    assert len(dstate.pending) == 3  # retained for retry

    dropped = prune_pending(dstate)
    assert [p.responder_gid for p in dropped] == [bad.responder_gid]
    retry = flush_redemption(dstate)
    _, results = f.seal([retry.tx])
    assert results[0].ok
    settle_redemption(dstate, retry, True)
    assert f.chain.query_reputation(f.address, dstate.identity.address) == 2


# --- finalize and promotion ---


def redeem_all(f, dstate):
    attempt = flush_redemption(dstate)
    _, results = f.seal([attempt.tx])
    assert results[0].ok
    settle_redemption(dstate, attempt, True)


def revealed_key(f, pk_hex):
    events = f.chain.query_events(f.address, name="KeyRevealed", topic=pk_hex)
    assert events, "no KeyRevealed event for this responder"
    return bytes.fromhex(events[-1]["data"])


def test_finalize_flow_end_to_end():
    f = Fleet(seed=12, n_satisfying=3, top_k=1)
    dstate = f.distributors[0]
    rstate = f.responder(1)
    f.full_exchange(dstate, rstate)

    # No event yet: the responder just waits in receipt-sent.
    pk_hex = rstate.identity.keypair.pk_bytes().hex()
    assert f.chain.query_events(f.address, name="KeyRevealed", topic=pk_hex) == []
    assert rstate.progress == "receipt-sent"

    redeem_all(f, dstate)
    key_bytes = revealed_key(f, pk_hex)
    assert key_bytes == serialize_session_key(dstate.sessions[rstate.identity.gid].k)
    installed = responder_finalize(rstate, key_bytes)
    assert installed == f.update
    assert rstate.progress == "installed"

    promoted = promote_responder(rstate, f.contract, now=50.0)
    assert isinstance(promoted, DistributorState)
    assert promoted.pkg.ac == bytes.fromhex(f.contract["ac"])
    assert promoted.distributor_since == 50.0

    # Epidemic growth: the promoted vehicle can serve another responder.
    second = f.responder(2)
    challenge = distributor_broadcast_challenge(promoted, f.authorities, f.rng)
    assert responder_handle_challenge(second, challenge) == challenge.echo
    assert run_exchange(promoted, second, f.contract, f.rng) is not None


def test_finalize_quarantines_on_key_mismatch():
    f = Fleet(seed=13, n_satisfying=2, top_k=1)
    dstate = f.distributors[0]
    rstate = f.responder(1)
    f.full_exchange(dstate, rstate)
    wrong = hashlib.sha256(b"not the key").digest()
    assert responder_finalize(rstate, wrong) is None
    assert rstate.installed_update is None
    assert len(rstate.quarantined) == 1
    assert rstate.progress == "key-received"


def test_never_installs_bytes_failing_the_ac_check():
    # Injected held state models a distributor that somehow slipped a
    # different payload past the transport: the ac check still gates install.
    f = Fleet(seed=14, n_satisfying=2, top_k=1)
    rstate = f.responder(1)
    from otachain.mimc import mimc_encrypt

    k = f.rng.randrange(1, bn254.R)
    rstate.progress = "receipt-sent"
    rstate.held = {
        "enc_update": mimc_encrypt(k, b"malicious payload"),
        "h": hashlib.sha256(serialize_session_key(k)).digest(),
        "ac": f.contract["ac"],
        "policy_text": f.contract["policy_text"],
    }
    assert responder_finalize(rstate, serialize_session_key(k)) is None
    assert rstate.installed_update is None
    assert rstate.quarantined


# --- proof stockpiling ---


def test_proofs_available_accrues_off_contact_clock():
    f = Fleet(seed=15, n_satisfying=1, top_k=1)
    dstate = f.distributors[0]
    dstate.distributor_since = 100.0
    assert proofs_available(dstate, 100.0, 6.0) == 0
    assert proofs_available(dstate, 118.9, 6.0) == 3
    dstate.proofs_used = 2
    assert proofs_available(dstate, 118.9, 6.0) == 1
    assert proofs_available(dstate, 90.0, 6.0) == 0  # clamped, never negative
    with pytest.raises(ValueError):
        proofs_available(dstate, 118.9, 0)


# --- desk-scale liveness ---


def test_epidemic_liveness_all_vehicles_install():
    f = Fleet(seed=16, n_satisfying=5, top_k=1, max_update=5)
    distributors = {d.identity.gid: d for d in f.distributors}
    responders = {
        v.gid: ResponderState(identity=v)
        for v in f.vehicles
        if v.gid not in distributors
    }
    installed = set(distributors)
    sizes = [len(installed)]

    for round_no in range(10):
        if not responders:
            break
        for dstate in list(distributors.values()):
            for gid, rstate in list(responders.items()):
                challenge = distributor_broadcast_challenge(
                    dstate, f.authorities, f.rng
                )
                if responder_handle_challenge(rstate, challenge) != challenge.echo:
                    continue
                if run_exchange(dstate, rstate, f.contract, f.rng) is None:
                    continue
                redeem_all(f, dstate)
                key = revealed_key(f, rstate.identity.keypair.pk_bytes().hex())
                if responder_finalize(rstate, key) is not None:
                    distributors[gid] = promote_responder(rstate, f.contract)
                    responders.pop(gid)
                    installed.add(gid)
        sizes.append(len(installed))

    assert not responders, f"uninstalled after bounded rounds: {sorted(responders)}"
    assert sizes == sorted(sizes)  # distributor set grows monotonically
    # Receipt/key symmetry via chain conservation: every revealed key paid +1.
    total_rep = sum(f.chain.query_state(f.address, "reputation").values())
    assert total_rep == len(f.chain.query_events(f.address, name="KeyRevealed")) == 4
