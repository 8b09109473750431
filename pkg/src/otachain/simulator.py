"""Discrete-event dissemination of one update over a contact trace.

Crypto latencies are charged to the simulated clock from a parameter
table (linear in the policy row count for the challenge round, flat for
proof verification and the receipt), so a two-hour campaign replays in
seconds of wall time.  The primitives still run for real at every
state-changing step: challenges are actual ciphertexts, proofs and
receipts are verified, and redemptions execute on an in-process chain
whose block file is written next to the metrics.

Two sizes describe the update.  `size_bytes` is the modeled transfer
size used for link-time accounting, while `payload_bytes` controls how
much real firmware is generated and encrypted; simulating a gigabyte
image must not mean encrypting one.

A run is a pure function of scenario plus seed.  One `random.Random`
feeds contact generation and key material in a fixed order, events
drain from a (time, sequence) heap, and every output file is
byte-identical across reruns.  `OTA_SEED` overrides the scenario seed.
"""

from __future__ import annotations

import heapq
import json
import os
import random
from collections import Counter
from dataclasses import dataclass, field, fields
from fractions import Fraction
from itertools import count
from pathlib import Path

from . import bn254
from .agents import (
    ResponderState,
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
    settle_redemption,
)
from .chain import Chain, Validator, save_chain
from .policy import (
    PolicySyntaxError,
    canonical_policy_text,
    compile_lsss,
    parse_policy,
    policy_attributes,
    satisfies,
)

TRACE_HEADER = "time_s,gid_a,gid_b,duration_s"
COVERAGE_HEADER = "time_s,fraction_installed"
DURATION_MODELS = ("fixed", "exponential")
MB = {"decimal": 10**6, "binary": 2**20}


class ScenarioError(ValueError):
    """Scenario rejected; `problems` names every offending field."""

    def __init__(self, problems):
        self.problems = tuple(problems)
        super().__init__("invalid scenario: " + "; ".join(self.problems))


# --- cost model ---


def _linear(per_row_ms, base_ms, rows):
    """per_row*rows + base in exact decimal arithmetic, rounded once.

    Accumulating float steps would drift the charged value off the
    published decimal (4.03*5 + 0.01 != 20.16 in binary floats).
    """
    return float(Fraction(str(per_row_ms)) * rows + Fraction(str(base_ms)))


@dataclass(frozen=True)
class CostModel:
    """Latencies charged to the simulated clock, overridable per scenario.

    Challenge encryption and decryption are linear in the policy row
    count.  Proof generation happens off-contact (distributors stockpile
    proofs between encounters); everything else must fit the contact
    window together with the transfer itself.
    """

    abe_enc_per_row_ms: float = 10.9
    abe_enc_base_ms: float = 1.35
    abe_dec_per_row_ms: float = 4.03
    abe_dec_base_ms: float = 0.01
    proof_gen_s: float = 6.0
    proof_verify_ms: float = 5.0
    receipt_ms: float = 2.03  # one group exponentiation signs the receipt
    bandwidth_kbps: float = 760.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, float)) or value <= 0:
                raise ValueError(f"{f.name} must be strictly positive")

    def abe_enc_ms(self, rows):
        return _linear(self.abe_enc_per_row_ms, self.abe_enc_base_ms, rows)

    def abe_dec_ms(self, rows):
        return _linear(self.abe_dec_per_row_ms, self.abe_dec_base_ms, rows)

    def transfer_s(self, size_bytes):
        return size_bytes * 8 / (self.bandwidth_kbps * 1000.0)

    def exchange_s(self, rows, size_bytes):
        """In-contact time for one complete exchange."""
        in_contact_ms = (
            self.abe_enc_ms(rows)
            + self.abe_dec_ms(rows)
            + self.proof_verify_ms
            + self.receipt_ms
        )
        return in_contact_ms / 1000.0 + self.transfer_s(size_bytes)


# --- contacts ---


@dataclass(frozen=True)
class ContactEvent:
    time_s: float
    gid_a: str
    gid_b: str
    duration_s: float


def generate_contacts(
    n_vehicles,
    rate_per_s,
    horizon_s,
    seed,
    *,
    duration_s=30.0,
    duration_model="fixed",
    gids=None,
):
    """Homogeneous pairwise contact process at `rate_per_s` overall.

    Arrivals are exponential, the pair is uniform over distinct
    vehicles, and durations are either the fixed value or exponential
    with that mean.
    """
    if n_vehicles < 2:
        raise ValueError("need at least two vehicles")
    if rate_per_s <= 0:
        raise ValueError("rate_per_s must be positive")
    if horizon_s <= 0:
        raise ValueError("horizon_s must be positive")
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if duration_model not in DURATION_MODELS:
        raise ValueError(f"duration_model must be one of {DURATION_MODELS}")
    if gids is None:
        gids = [f"v{i:03d}" for i in range(n_vehicles)]
    elif len(gids) != n_vehicles:
        raise ValueError("gids length must equal n_vehicles")

    rng = random.Random(seed)
    events = []
    t = 0.0
    while True:
        t += rng.expovariate(rate_per_s)
        if t >= horizon_s:
            return events
        i = rng.randrange(n_vehicles)
        j = rng.randrange(n_vehicles - 1)
        if j >= i:
            j += 1
        d = (
            duration_s
            if duration_model == "fixed"
            else rng.expovariate(1.0 / duration_s)
        )
        events.append(ContactEvent(t, gids[i], gids[j], d))


def save_contact_trace(path, events):
    lines = [TRACE_HEADER]
    lines += [
        f"{ev.time_s!r},{ev.gid_a},{ev.gid_b},{ev.duration_s!r}" for ev in events
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_contact_trace(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != TRACE_HEADER:
        raise ValueError(f"first line must be {TRACE_HEADER!r}")
    events = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"line {n}: expected 4 comma-separated fields")
        try:
            ev = ContactEvent(float(parts[0]), parts[1], parts[2], float(parts[3]))
        except ValueError:
            raise ValueError(f"line {n}: time_s and duration_s must be numbers")
        if ev.duration_s <= 0:
            raise ValueError(f"line {n}: duration_s must be positive")
        if events and ev.time_s < events[-1].time_s:
            raise ValueError(f"line {n}: contacts must be sorted by time")
        events.append(ev)
    return events


# --- scenario ---


@dataclass(frozen=True)
class VehicleSpec:
    gid: str
    manufacturer_id: str
    attributes: tuple


@dataclass(frozen=True)
class UpdateSpec:
    policy_text: str
    size_bytes: int  # modeled transfer size
    max_update: int
    top_k: int
    payload_bytes: int = 256  # real firmware bytes fed to the crypto


@dataclass(frozen=True)
class ContactPlan:
    rate_per_s: float = 0.0
    horizon_s: float = 0.0
    duration_s: float = 30.0
    duration_model: str = "fixed"
    trace_file: str | None = None  # overrides the synthetic generator


@dataclass(frozen=True)
class Scenario:
    seed: int
    manufacturers: dict  # manufacturer id -> tuple of bare attribute names
    fleet: tuple  # VehicleSpec entries
    update: UpdateSpec
    contacts: ContactPlan
    cost: CostModel = field(default_factory=CostModel)
    batch_threshold: int = 5
    redeem_timeout_s: float = 60.0
    chain_latency_s: float = 1.0


def _check_update(data, universes, problems):
    bad = lambda key, why: problems.append(f"update.{key}: {why}")
    known = {
        "policy", "size_bytes", "size_mb", "mb_convention",
        "max_update", "top_k", "payload_bytes",
    }
    for key in sorted(set(data) - known):
        bad(key, "unknown field")

    policy = data.get("policy")
    if not isinstance(policy, str):
        bad("policy", "expected a string")
        policy_text = None
    else:
        try:
            node = parse_policy(policy)
            policy_text = canonical_policy_text(node)
            for attr in sorted(policy_attributes(node)):
                namespace, _, name = attr.partition(":")
                if name not in universes.get(namespace, ()):
                    bad("policy", f"attribute {attr!r} not in any universe")
        except PolicySyntaxError as exc:
            bad("policy", str(exc))
            policy_text = None

    size_bytes = None
    if ("size_bytes" in data) == ("size_mb" in data):
        bad("size_bytes", "give exactly one of size_bytes or size_mb")
    elif "size_bytes" in data:
        if not isinstance(data["size_bytes"], int) or data["size_bytes"] < 1:
            bad("size_bytes", "expected a positive integer")
        else:
            size_bytes = data["size_bytes"]
    else:
        convention = data.get("mb_convention", "decimal")
        if convention not in MB:
            bad("mb_convention", f"expected one of {sorted(MB)}")
        elif not isinstance(data["size_mb"], (int, float)) or data["size_mb"] <= 0:
            bad("size_mb", "expected a positive number")
        else:
            size_bytes = round(data["size_mb"] * MB[convention])

    out = {}
    for key, default in (("max_update", None), ("top_k", None), ("payload_bytes", 256)):
        value = data.get(key, default)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            bad(key, "expected a positive integer")
        else:
            out[key] = value

    if problems or policy_text is None or size_bytes is None:
        return None
    return UpdateSpec(policy_text=policy_text, size_bytes=size_bytes, **out)


def _check_contacts(data, problems):
    bad = lambda key, why: problems.append(f"contacts.{key}: {why}")
    known = {"rate_per_s", "horizon_s", "duration_s", "duration_model", "trace_file"}
    for key in sorted(set(data) - known):
        bad(key, "unknown field")

    if "trace_file" in data:
        for key in sorted((known - {"trace_file"}) & set(data)):
            bad(key, "not allowed alongside trace_file")
        if not isinstance(data["trace_file"], str) or not data["trace_file"]:
            bad("trace_file", "expected a path")
            return None
        return ContactPlan(trace_file=data["trace_file"])

    plan = {}
    for key in ("rate_per_s", "horizon_s"):
        value = data.get(key)
        if not isinstance(value, (int, float)) or value <= 0:
            bad(key, "expected a positive number")
        else:
            plan[key] = float(value)
    duration = data.get("duration_s", 30.0)
    if not isinstance(duration, (int, float)) or duration <= 0:
        bad("duration_s", "expected a positive number")
    else:
        plan["duration_s"] = float(duration)
    model = data.get("duration_model", "fixed")
    if model not in DURATION_MODELS:
        bad("duration_model", f"expected one of {DURATION_MODELS}")
    else:
        plan["duration_model"] = model
    return None if len(plan) < 4 else ContactPlan(**plan)


def scenario_from_dict(data):
    """Validate a parsed scenario; every problem is reported, not just the first."""
    if not isinstance(data, dict):
        raise ScenarioError(["scenario: expected a JSON object"])
    problems = []
    bad = lambda key, why: problems.append(f"{key}: {why}")

    known = {
        "seed", "manufacturers", "fleet", "update", "contacts",
        "cost_model", "batch_threshold", "redeem_timeout_s", "chain_latency_s",
    }
    for key in sorted(set(data) - known):
        bad(key, "unknown field")

    seed = data.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool):
        bad("seed", "expected an integer")

    universes = {}
    manufacturers = data.get("manufacturers")
    if not isinstance(manufacturers, dict) or not manufacturers:
        bad("manufacturers", "expected a non-empty object")
    else:
        for mid, attrs in manufacturers.items():
            if not isinstance(mid, str) or not mid or ":" in mid:
                bad("manufacturers", f"bad manufacturer id {mid!r}")
                continue
            if (
                not isinstance(attrs, list)
                or not attrs
                or any(not isinstance(a, str) or not a or ":" in a for a in attrs)
            ):
                bad(f"manufacturers.{mid}", "expected bare attribute names")
                continue
            universes[mid] = tuple(attrs)

    fleet = []
    entries = data.get("fleet")
    if not isinstance(entries, list) or not entries:
        bad("fleet", "expected a non-empty array")
        entries = []
    seen = set()
    for n, entry in enumerate(entries):
        where = f"fleet[{n}]"
        if not isinstance(entry, dict):
            bad(where, "expected an object")
            continue
        gid = entry.get("gid")
        mid = entry.get("manufacturer")
        attrs = entry.get("attributes")
        if not isinstance(gid, str) or not gid:
            bad(f"{where}.gid", "expected a non-empty string")
            continue
        if gid in seen:
            bad(f"{where}.gid", f"duplicate gid {gid!r}")
        seen.add(gid)
        if mid not in universes:
            bad(f"{where}.manufacturer", f"unknown manufacturer {mid!r}")
            continue
        if not isinstance(attrs, list):
            bad(f"{where}.attributes", "expected an array")
            continue
        for attr in attrs:
            namespace, _, name = str(attr).partition(":")
            if name not in universes.get(namespace, ()):
                bad(f"{where}.attributes", f"{attr!r} not in any universe")
        fleet.append(
            VehicleSpec(gid=gid, manufacturer_id=mid, attributes=tuple(attrs))
        )

    update = None
    if not isinstance(data.get("update"), dict):
        bad("update", "expected an object")
    else:
        update = _check_update(data["update"], universes, problems)
    if update is not None and fleet and update.top_k > len(fleet):
        bad("update.top_k", "exceeds fleet size")

    contacts = None
    if not isinstance(data.get("contacts"), dict):
        bad("contacts", "expected an object")
    else:
        contacts = _check_contacts(data["contacts"], problems)
    if (
        contacts is not None
        and contacts.trace_file is None
        and len(fleet) < 2
    ):
        bad("fleet", "synthetic contacts need at least two vehicles")

    cost = CostModel()
    overrides = data.get("cost_model", {})
    if not isinstance(overrides, dict):
        bad("cost_model", "expected an object")
    else:
        names = {f.name for f in fields(CostModel)}
        for key in sorted(set(overrides) - names):
            bad(f"cost_model.{key}", "unknown parameter")
        try:
            cost = CostModel(**{k: v for k, v in overrides.items() if k in names})
        except ValueError as exc:
            bad("cost_model", str(exc))

    threshold = data.get("batch_threshold", 5)
    if not isinstance(threshold, int) or isinstance(threshold, bool) or threshold < 1:
        bad("batch_threshold", "expected a positive integer")
    timeout = data.get("redeem_timeout_s", 60.0)
    if not isinstance(timeout, (int, float)) or timeout <= 0:
        bad("redeem_timeout_s", "expected a positive number")
    latency = data.get("chain_latency_s", 1.0)
    if not isinstance(latency, (int, float)) or latency < 0:
        bad("chain_latency_s", "expected a non-negative number")

    if problems:
        raise ScenarioError(problems)
    return Scenario(
        seed=seed,
        manufacturers=universes,
        fleet=tuple(fleet),
        update=update,
        contacts=contacts,
        cost=cost,
        batch_threshold=threshold,
        redeem_timeout_s=float(timeout),
        chain_latency_s=float(latency),
    )


def load_scenario(path):
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ScenarioError([f"scenario: no such file {str(path)!r}"])
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"scenario: not valid JSON ({exc})"])
    return scenario_from_dict(data)


# --- the run ---


@dataclass
class SimulationResult:
    metrics: dict
    coverage: list  # (time_s, fraction_installed) points, one per change
    trace: list  # {time, gid, role, event, detail} records
    chain: Chain
    contract_address: str


def _effective_seed(scenario):
    raw = os.environ.get("OTA_SEED")
    if raw is None:
        return scenario.seed
    try:
        return int(raw)
    except ValueError:
        raise ScenarioError([f"OTA_SEED: expected an integer, got {raw!r}"])


def run_simulation(scenario):
    """Drive the five-step flow over the contact trace; see module docstring."""
    seed = _effective_seed(scenario)
    rng = random.Random(seed)
    contact_seed = rng.getrandbits(64)

    manufacturers = {
        mid: create_manufacturer(mid, rng) for mid in sorted(scenario.manufacturers)
    }
    chain = Chain(
        tuple(
            Validator(mid, m.chain_keys.pk_bytes(), m.cert_keys.pk_bytes())
            for mid, m in manufacturers.items()
        )
    )
    secret_auth = {mid: m.authority for mid, m in manufacturers.items()}
    public_auth = {mid: m.authority_public for mid, m in manufacturers.items()}

    fleet = [
        enroll_vehicle(
            manufacturers[spec.manufacturer_id],
            spec.gid,
            spec.attributes,
            rng,
            authorities=secret_auth,
        )
        for spec in scenario.fleet
    ]
    by_gid = {v.gid: v for v in fleet}
    n_vehicles = len(fleet)

    formula = parse_policy(scenario.update.policy_text)
    rows = len(compile_lsss(formula).rows)
    satisfying = {
        spec.gid: satisfies(formula, set(spec.attributes)) for spec in scenario.fleet
    }
    eligible = [v for v in fleet if satisfying[v.gid]]
    if not eligible:
        raise ScenarioError(["update.policy: no vehicle satisfies it, nothing to seed"])

    payload = rng.randbytes(scenario.update.payload_bytes)
    size = scenario.update.size_bytes
    cost = scenario.cost

    def proposer_sk():
        scheduled = chain.scheduled_proposer(chain.head.height + 1)
        return manufacturers[scheduled.validator_id].chain_keys.sk

    releasing = manufacturers[sorted(manufacturers)[0]]
    address, seeds = manufacturer_release(
        releasing,
        chain,
        eligible,
        payload,
        scenario.update.policy_text,
        scenario.update.max_update,
        scenario.update.top_k,
        rng,
        proposer_sk=proposer_sk(),
        batch_threshold=scenario.batch_threshold,
        now=0.0,
    )
    contract = contract_view(chain, address)
    distributors = {d.identity.gid: d for d in seeds}
    initial = sorted(distributors)
    responders = {
        v.gid: ResponderState(identity=v) for v in fleet if v.gid not in distributors
    }

    if scenario.contacts.trace_file:
        try:
            events = load_contact_trace(scenario.contacts.trace_file)
        except (OSError, ValueError) as exc:
            raise ScenarioError([f"contacts.trace_file: {exc}"])
        for ev in events:
            if ev.gid_a not in by_gid or ev.gid_b not in by_gid:
                raise ScenarioError(
                    [f"contacts.trace_file: unknown gid in contact at t={ev.time_s}"]
                )
        horizon = events[-1].time_s if events else 0.0
    else:
        events = generate_contacts(
            n_vehicles,
            scenario.contacts.rate_per_s,
            scenario.contacts.horizon_s,
            contact_seed,
            duration_s=scenario.contacts.duration_s,
            duration_model=scenario.contacts.duration_model,
            gids=[spec.gid for spec in scenario.fleet],
        )
        horizon = scenario.contacts.horizon_s

    heap = []
    seq = count()

    def push(t, kind, item):
        heapq.heappush(heap, (t, next(seq), kind, item))

    for ev in events:
        push(ev.time_s, "contact", ev)

    trace = []
    coverage = [(0.0, len(distributors) / n_vehicles)]
    counters = Counter()
    hist = Counter()  # accepted-transaction batch sizes
    flush_at = {}
    tallies = Counter()  # redeem_accepted, redeem_rejected, timeout_flushes
    bytes_transferred = 0
    time_to_full = None
    end_time = horizon

    def record(t, gid, role, event, **detail):
        trace.append(
            {"time": t, "gid": gid, "role": role, "event": event, "detail": detail}
        )

    record(
        0.0,
        releasing.manufacturer_id,
        "manufacturer",
        "deploy",
        address=address,
        policy=scenario.update.policy_text,
        policy_rows=rows,
        max_update=scenario.update.max_update,
        size_bytes=size,
    )
    for gid in initial:
        record(0.0, gid, "distributor", "seeded")

    def submit(dstate, attempt, now, timeout):
        if timeout:
            tallies["timeout_flushes"] += 1
        record(
            now,
            dstate.identity.gid,
            "distributor",
            "redeem_submitted",
            receipts=len(attempt.batch),
            timeout=timeout,
        )
        push(now + scenario.chain_latency_s, "delivery", (dstate.identity.gid, attempt))

    def maybe_redeem(dstate, now):
        attempt = distributor_redeem(dstate)
        if attempt is not None:
            submit(dstate, attempt, now, timeout=False)
        elif dstate.pending and dstate.identity.gid not in flush_at:
            due = dstate.pending[0].received_at + scenario.redeem_timeout_s
            flush_at[dstate.identity.gid] = due
            push(due, "flush", dstate.identity.gid)

    def on_contact(t, ev):
        nonlocal bytes_transferred
        counters["contacts"] += 1
        a_dist = ev.gid_a in distributors
        b_dist = ev.gid_b in distributors
        if a_dist == b_dist:
            counters["unpaired"] += 1
            return
        dstate = distributors[ev.gid_a if a_dist else ev.gid_b]
        rstate = responders[ev.gid_b if a_dist else ev.gid_a]
        dgid, rgid = dstate.identity.gid, rstate.identity.gid

        if not satisfying[rgid]:
            counters["policy_unsatisfied"] += 1
            record(t, rgid, "responder", "silent", reason="policy_unsatisfied")
            return
        if rstate.progress not in ("idle", "challenged"):
            counters["busy"] += 1
            record(
                t, rgid, "responder", "silent",
                reason="busy", progress=rstate.progress,
            )
            return
        if proofs_available(dstate, t, cost.proof_gen_s) < 1:
            counters["no_proof"] += 1
            record(
                t, dgid, "distributor", "exchange_skipped",
                responder=rgid, reason="no_proof",
            )
            return

        breakdown = {
            "abe_enc_ms": cost.abe_enc_ms(rows),
            "abe_dec_ms": cost.abe_dec_ms(rows),
            "proof_verify_ms": cost.proof_verify_ms,
            "receipt_ms": cost.receipt_ms,
            "transfer_s": cost.transfer_s(size),
        }
        total_s = cost.exchange_s(rows, size)
        if total_s > ev.duration_s:
            counters["contact_too_short"] += 1
            record(
                t, dgid, "distributor", "exchange_skipped",
                responder=rgid, reason="contact_too_short",
                total_s=total_s, duration_s=ev.duration_s, **breakdown,
            )
            return

        challenge = distributor_broadcast_challenge(dstate, public_auth, rng)
        echo = responder_handle_challenge(rstate, challenge)
        if echo != challenge.echo:
            counters["challenge_failed"] += 1
            record(t, rgid, "responder", "silent", reason="challenge_failed")
            return
        t_done = t + total_s
        receipt = run_exchange(dstate, rstate, contract, rng, now=t_done)
        if receipt is None:
            counters["exchange_failed"] += 1
            record(t, dgid, "distributor", "exchange_failed", responder=rgid)
            return

        # The receipt only becomes redeemable once the transfer finishes;
        # park it until then so an overlapping flush cannot carry it early.
        entry = dstate.pending.pop()
        push(t_done, "receipt", (dgid, entry))

        counters["exchanges"] += 1
        bytes_transferred += size
        record(
            t, dgid, "distributor", "exchange",
            responder=rgid, completed_at=t_done, total_s=total_s,
            duration_s=ev.duration_s, **breakdown,
        )
        record(t_done, rgid, "responder", "receipt_sent", distributor=dgid)

    def on_receipt(t, gid, entry):
        dstate = distributors[gid]
        dstate.pending.append(entry)
        maybe_redeem(dstate, t)

    def on_flush(t, gid):
        flush_at.pop(gid, None)
        dstate = distributors.get(gid)
        if dstate is None or not dstate.pending:
            return
        due = dstate.pending[0].received_at + scenario.redeem_timeout_s
        if t + 1e-9 < due:
            flush_at[gid] = due
            push(due, "flush", gid)
            return
        submit(dstate, flush_redemption(dstate), t, timeout=True)

    def finalize_responder(t, pending):
        nonlocal time_to_full
        rstate = responders.get(pending.responder_gid)
        if rstate is None or rstate.progress != "receipt-sent":
            return
        gid = rstate.identity.gid
        pk_hex = bn254.g2_to_bytes(pending.receipt.signer_pk).hex()
        revealed = chain.query_events(address, name="KeyRevealed", topic=pk_hex)
        key_bytes = bytes.fromhex(revealed[-1]["data"])
        record(t, gid, "responder", "key_received")
        update = responder_finalize(rstate, key_bytes)
        if update is None:
            counters["quarantined"] += 1
            record(t, gid, "responder", "quarantined")
            return
        responders.pop(gid)
        distributors[gid] = promote_responder(
            rstate, contract, now=t, batch_threshold=scenario.batch_threshold
        )
        frac = len(distributors) / n_vehicles
        coverage.append((t, frac))
        record(t, gid, "responder", "installed", fraction_installed=frac)
        record(t, gid, "distributor", "promoted")
        if frac == 1.0 and time_to_full is None:
            time_to_full = t

    def on_delivery(t, gid, attempt):
        dstate = distributors[gid]
        _, results = chain.seal([attempt.tx], proposer_sk())
        result = results[0]
        settle_redemption(dstate, attempt, result.ok)
        if result.ok:
            tallies["redeem_accepted"] += 1
            hist[len(attempt.batch)] += 1
            record(
                t, gid, "distributor", "redeem_settled",
                status="ok", receipts=len(attempt.batch),
            )
            for pending in attempt.batch:
                finalize_responder(t, pending)
            return
        tallies["redeem_rejected"] += 1
        record(
            t, gid, "distributor", "redeem_settled",
            status="rejected", reason=result.reason, receipts=len(attempt.batch),
        )
        dropped = prune_pending(dstate)
        for pending in dropped:
            record(
                t, gid, "distributor", "receipt_dropped",
                responder=pending.responder_gid,
            )
        if dropped:
            if dstate.pending:
                submit(dstate, flush_redemption(dstate), t, timeout=False)
        else:
            # Local checks found nothing to drop; stop rather than loop.
            counters["abandoned_receipts"] += len(dstate.pending)
            dstate.pending.clear()
            record(t, gid, "distributor", "redeem_abandoned")

    while heap:
        t, _, kind, item = heapq.heappop(heap)
        end_time = max(end_time, t)
        if kind == "contact":
            on_contact(t, item)
        elif kind == "receipt":
            on_receipt(t, *item)
        elif kind == "flush":
            on_flush(t, item)
        else:
            on_delivery(t, *item)

    reveals = len(chain.query_events(address, name="KeyRevealed"))
    metrics = {
        "seed": seed,
        "n_vehicles": n_vehicles,
        "n_satisfying": sum(satisfying.values()),
        "initial_distributors": initial,
        "contract_address": address,
        "policy": scenario.update.policy_text,
        "policy_rows": rows,
        "update_size_bytes": size,
        "payload_bytes": scenario.update.payload_bytes,
        "contacts": counters["contacts"],
        "exchanges_completed": counters["exchanges"],
        "exchanges_skipped": {
            "busy": counters["busy"],
            "challenge_failed": counters["challenge_failed"],
            "contact_too_short": counters["contact_too_short"],
            "exchange_failed": counters["exchange_failed"],
            "no_proof": counters["no_proof"],
            "policy_unsatisfied": counters["policy_unsatisfied"],
            "unpaired": counters["unpaired"],
        },
        "installed": len(distributors),
        "coverage_final": len(distributors) / n_vehicles,
        "time_to_full_coverage_s": time_to_full,
        "redeem_transactions": tallies["redeem_accepted"] + tallies["redeem_rejected"],
        "redeem_accepted": tallies["redeem_accepted"],
        "redeem_rejected": tallies["redeem_rejected"],
        "timeout_flushes": tallies["timeout_flushes"],
        "receipts_per_transaction": {str(k): hist[k] for k in sorted(hist)},
        "key_reveals": reveals,
        "quarantined": counters["quarantined"],
        "reputation": {
            gid: chain.query_reputation(address, by_gid[gid].address)
            for gid in sorted(by_gid)
        },
        "bytes_transferred": bytes_transferred,
        "blocks": chain.head.height + 1,
        "final_state_root": chain.head.state_root.hex(),
        "end_time_s": end_time,
    }
    return SimulationResult(
        metrics=metrics,
        coverage=coverage,
        trace=trace,
        chain=chain,
        contract_address=address,
    )


def write_outputs(result, out_dir):
    """metrics.json, coverage.csv, trace.jsonl, and chain.bin under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(
        json.dumps(result.metrics, sort_keys=True, indent=2) + "\n"
    )
    lines = [COVERAGE_HEADER]
    lines += [f"{t!r},{frac!r}" for t, frac in result.coverage]
    (out / "coverage.csv").write_text("\n".join(lines) + "\n")
    (out / "trace.jsonl").write_text(
        "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in result.trace)
    )
    save_chain(out / "chain.bin", result.chain)
    return {
        "metrics": out / "metrics.json",
        "coverage": out / "coverage.csv",
        "trace": out / "trace.jsonl",
        "chain": out / "chain.bin",
    }
