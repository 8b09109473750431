"""Command-line front end.

Exit codes: 0 on success, 2 when the inputs are invalid (bad flags,
malformed scenario or policy, unreadable input files), 1 when a valid
request fails at runtime.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import bn254
from .agents import create_manufacturer
from .bls import bls_keygen
from .chain import load_chain
from .exchange import package_manifest, package_update, PROOF_SYSTEMS
from .policy import (
    PolicySyntaxError,
    canonical_policy_text,
    compile_lsss,
    parse_policy,
)
from .simulator import ScenarioError, load_scenario, run_simulation, write_outputs


class CliError(ValueError):
    """Bad user input discovered past argument parsing; exits 2."""


def _emit(doc, out):
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)
        print(f"wrote {out}")


def _rng(seed):
    return random.Random(seed) if seed is not None else random.SystemRandom()


def cmd_keygen(args):
    rng = _rng(args.seed)
    if args.role == "manufacturer":
        m = create_manufacturer(args.id, rng)
        doc = {
            "role": "manufacturer",
            "id": args.id,
            "chain": {
                "sk": f"{m.chain_keys.sk:064x}",
                "pk": m.chain_keys.pk_bytes().hex(),
            },
            "cert": {
                "sk": f"{m.cert_keys.sk:064x}",
                "pk": m.cert_keys.pk_bytes().hex(),
            },
            "authority": {
                "manufacturer_id": args.id,
                "alpha": m.authority.alpha,
                "y": m.authority.y,
                "gt_alpha": bn254.fp12_to_bytes(m.authority.public.gt_alpha).hex(),
                "g1_y": bn254.g1_to_bytes(m.authority.public.g1_y).hex(),
            },
        }
    else:
        keypair = bls_keygen(rng)
        doc = {
            "role": "vehicle",
            "id": args.id,
            "sk": f"{keypair.sk:064x}",
            "pk": keypair.pk_bytes().hex(),
        }
    _emit(doc, args.out)
    return 0


def cmd_policy_compile(args):
    node = parse_policy(args.expression)
    matrix = compile_lsss(node)
    _emit(
        {
            "policy": args.expression,
            "canonical": canonical_policy_text(node),
            "width": matrix.width,
            "rows": [list(row) for row in matrix.rows],
            "attributes": list(matrix.row_labels),
        },
        args.out,
    )
    return 0


def cmd_package(args):
    try:
        update = Path(args.update).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read update: {exc}")
    pkg = package_update(
        update, args.policy, args.max_update, system=args.system, rng=_rng(args.seed)
    )
    _emit(package_manifest(pkg), args.out)
    if args.keys_out:
        _emit(
            {
                "proving_key": pkg.proving_key.to_json(),
                "verifying_key": pkg.verifying_key.to_json(),
            },
            args.keys_out,
        )
    return 0


def cmd_run(args):
    scenario = load_scenario(args.scenario)
    result = run_simulation(scenario)
    paths = write_outputs(result, args.out)
    m = result.metrics
    print(
        f"coverage {m['coverage_final']:.3f}"
        f" ({m['installed']}/{m['n_vehicles']} installed)"
    )
    print(
        f"redeem transactions {m['redeem_transactions']}"
        f" ({m['redeem_accepted']} accepted, {m['redeem_rejected']} rejected),"
        f" {m['key_reveals']} keys revealed"
    )
    print("outputs: " + " ".join(str(p) for p in paths.values()))
    return 0


def _contract_doc(contract):
    doc = {
        key: contract[key]
        for key in ("ac", "policy_text", "max_update", "reputation", "updated_avs")
    }
    doc["events"] = contract["event_log"]
    return doc


def cmd_inspect_ledger(args):
    try:
        chain = load_chain(args.chain)
    except OSError as exc:
        raise CliError(f"cannot read chain: {exc}")
    except ValueError as exc:
        raise CliError(f"invalid chain file: {exc}")
    contracts = chain.state["contracts"]
    if args.contract is not None:
        if args.contract not in contracts:
            raise CliError(f"unknown contract {args.contract!r}")
        contracts = {args.contract: contracts[args.contract]}
    _emit(
        {
            "height": chain.head.height,
            "state_root": chain.head.state_root.hex(),
            "validators": [v.validator_id for v in chain.validators],
            "blocks": [
                {
                    "height": block.height,
                    "proposer": block.proposer_id,
                    "transactions": [
                        {"kind": tx.kind, "sender": tx.sender.hex()}
                        for tx in block.transactions
                    ],
                }
                for block in chain.blocks
            ],
            "contracts": {
                addr: _contract_doc(contract) for addr, contract in contracts.items()
            },
        },
        args.out,
    )
    return 0


def cmd_report(args):
    run_dir = Path(args.run_dir)
    try:
        metrics = json.loads((run_dir / "metrics.json").read_text())
        coverage = (run_dir / "coverage.csv").read_text().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read run output: {exc}")
    print(f"vehicles            {metrics['n_vehicles']}")
    print(f"satisfying          {metrics['n_satisfying']}")
    print(f"installed           {metrics['installed']}")
    print(f"coverage            {metrics['coverage_final']:.3f}")
    full = metrics["time_to_full_coverage_s"]
    print(f"full coverage at    {'never' if full is None else f'{full:.1f} s'}")
    print(f"exchanges           {metrics['exchanges_completed']}")
    print(f"redeem transactions {metrics['redeem_transactions']}")
    print(f"timeout flushes     {metrics['timeout_flushes']}")
    print(f"keys revealed       {metrics['key_reveals']}")
    print(f"bytes transferred   {metrics['bytes_transferred']}")
    print()
    print("coverage curve")
    for line in coverage:
        time_s, _, fraction = line.partition(",")
        print(f"  {time_s:>22} {fraction}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="otachain",
        description="attribute-gated firmware dissemination toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate an identity")
    p.add_argument("--role", choices=("vehicle", "manufacturer"), default="vehicle")
    p.add_argument("--id", default="v0", help="identity label")
    p.add_argument("--seed", type=int, help="deterministic keys for testing")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("policy", help="policy tools")
    policy_sub = p.add_subparsers(dest="policy_command", required=True)
    c = policy_sub.add_parser("compile", help="compile a policy to its share matrix")
    c.add_argument("expression")
    c.add_argument("--out", help="write JSON here instead of stdout")
    c.set_defaults(func=cmd_policy_compile)

    p = sub.add_parser("package", help="package an update for dissemination")
    p.add_argument("--update", required=True, help="firmware file")
    p.add_argument("--policy", required=True)
    p.add_argument("--max-update", type=int, required=True)
    p.add_argument("--system", choices=PROOF_SYSTEMS, default="attested")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="manifest JSON path, stdout when omitted")
    p.add_argument("--keys-out", help="write proving and verifying keys here")
    p.set_defaults(func=cmd_package)

    p = sub.add_parser("run", help="run a dissemination scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inspect-ledger", help="dump a chain file as JSON")
    p.add_argument("chain")
    p.add_argument("--contract", help="only this contract address")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_inspect_ledger)

    p = sub.add_parser("report", help="render the coverage table of a run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (ScenarioError, PolicySyntaxError, CliError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last resort, report and exit 1
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
