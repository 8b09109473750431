"""CLI contract: subcommand outputs, exit codes, and cross-process determinism."""

import json
import hashlib
import os
import subprocess
import sys

import pytest

from otachain.cli import main
from otachain.exchange import VerifyingKey
from otachain.policy import canonical_policy_text, compile_lsss, parse_policy

POLICY = "m1:model_x AND m1:year_2020"


def scenario_dict(n=6, seed=3):
    return {
        "seed": seed,
        "manufacturers": {"m1": ["model_x", "year_2020"]},
        "fleet": [
            {
                "gid": f"av{i:02d}",
                "manufacturer": "m1",
                "attributes": ["m1:model_x", "m1:year_2020"],
            }
            for i in range(n)
        ],
        "update": {
            "policy": POLICY,
            "size_bytes": 500_000,
            "max_update": 2,
            "top_k": 1,
            "payload_bytes": 96,
        },
        "contacts": {"rate_per_s": 0.25, "horizon_s": 600.0},
    }


@pytest.fixture(scope="module")
def scenario_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scen") / "scenario.json"
    path.write_text(json.dumps(scenario_dict()))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, scenario_file):
    out = tmp_path_factory.mktemp("out")
    assert main(["run", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    return out


def test_keygen_deterministic_per_seed(capsys):
    assert main(["keygen", "--seed", "4"]) == 0
    first = capsys.readouterr().out
    assert main(["keygen", "--seed", "4"]) == 0
    assert capsys.readouterr().out == first
    doc = json.loads(first)
    assert doc["role"] == "vehicle"
    assert len(bytes.fromhex(doc["pk"])) == 64
    assert len(bytes.fromhex(doc["sk"])) == 32


def test_keygen_manufacturer_carries_authority(capsys):
    assert main(["keygen", "--role", "manufacturer", "--id", "m7", "--seed", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["id"] == "m7"
    assert doc["authority"]["manufacturer_id"] == "m7"
    assert len(bytes.fromhex(doc["authority"]["gt_alpha"])) == 384
    assert len(bytes.fromhex(doc["authority"]["g1_y"])) == 32
    assert doc["chain"]["pk"] != doc["cert"]["pk"]


def test_policy_compile_matches_library(capsys):
    expr = "m1:a OR (m1:b AND m1:c)"
    assert main(["policy", "compile", expr]) == 0
    doc = json.loads(capsys.readouterr().out)
    node = parse_policy(expr)
    matrix = compile_lsss(node)
    assert doc["canonical"] == canonical_policy_text(node)
    assert doc["rows"] == [list(row) for row in matrix.rows]
    assert doc["attributes"] == list(matrix.row_labels)
    assert doc["width"] == matrix.width


def test_policy_compile_rejects_bad_expression(capsys):
    assert main(["policy", "compile", "m1:a AND"]) == 2
    assert "error:" in capsys.readouterr().err


def test_package_writes_manifest_and_keys(tmp_path, capsys):
    firmware = tmp_path / "fw.bin"
    firmware.write_bytes(b"\x17" * 333)
    manifest_path = tmp_path / "manifest.json"
    keys_path = tmp_path / "keys.json"
    code = main(
        [
            "package", "--update", str(firmware), "--policy", POLICY,
            "--max-update", "2", "--seed", "8",
            "--out", str(manifest_path), "--keys-out", str(keys_path),
        ]
    )
    assert code == 0
    manifest = json.loads(manifest_path.read_text())
    assert set(manifest) == {"ac", "policy_text", "verifying_key", "max_update", "size_bytes"}
    canonical = canonical_policy_text(parse_policy(POLICY))
    expected_ac = hashlib.sha256(b"\x17" * 333 + canonical.encode()).hexdigest()
    assert manifest["ac"] == expected_ac
    assert manifest["size_bytes"] == 333
    keys = json.loads(keys_path.read_text())
    vk = VerifyingKey.from_json(keys["verifying_key"])
    assert vk.to_json() == manifest["verifying_key"]


def test_package_bad_inputs_exit_two(tmp_path, capsys):
    assert main(
        ["package", "--update", str(tmp_path / "missing.bin"),
         "--policy", POLICY, "--max-update", "2"]
    ) == 2
    firmware = tmp_path / "fw.bin"
    firmware.write_bytes(b"x")
    assert main(
        ["package", "--update", str(firmware), "--policy", POLICY,
         "--max-update", "0"]
    ) == 2


def test_run_then_report_renders_matching_numbers(run_dir, capsys):
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert main(["report", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert f"installed           {metrics['installed']}" in out
    assert f"redeem transactions {metrics['redeem_transactions']}" in out
    assert f"keys revealed       {metrics['key_reveals']}" in out
    coverage_lines = (run_dir / "coverage.csv").read_text().splitlines()
    for line in coverage_lines[1:]:
        time_s, _, frac = line.partition(",")
        assert time_s in out and frac in out


def test_inspect_ledger_cross_checks_metrics(run_dir, capsys):
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert main(["inspect-ledger", str(run_dir / "chain.bin")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["state_root"] == metrics["final_state_root"]
    contract = doc["contracts"][metrics["contract_address"]]
    reveals = [e for e in contract["events"] if e["name"] == "KeyRevealed"]
    assert len(reveals) == metrics["key_reveals"]
    kinds = [
        tx["kind"] for block in doc["blocks"] for tx in block["transactions"]
    ]
    assert kinds.count("redeem") == metrics["redeem_transactions"]
    assert kinds.count("deploy") == 1


def test_inspect_ledger_contract_filter(run_dir, capsys):
    metrics = json.loads((run_dir / "metrics.json").read_text())
    address = metrics["contract_address"]
    assert main(["inspect-ledger", str(run_dir / "chain.bin"), "--contract", address]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert list(doc["contracts"]) == [address]
    assert main(["inspect-ledger", str(run_dir / "chain.bin"), "--contract", "00"]) == 2


def test_inspect_ledger_rejects_corrupt_file(run_dir, tmp_path, capsys):
    blob = bytearray((run_dir / "chain.bin").read_bytes())
    blob[-40] ^= 0x01
    corrupt = tmp_path / "corrupt.bin"
    corrupt.write_bytes(bytes(blob))
    assert main(["inspect-ledger", str(corrupt)]) == 2
    assert "error:" in capsys.readouterr().err


def test_run_twice_is_byte_identical_across_processes(scenario_file, tmp_path):
    env = {k: v for k, v in os.environ.items() if k != "OTA_SEED"}
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "otachain.cli", "run",
             "--scenario", str(scenario_file), "--out", str(out)],
            capture_output=True, env=env, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append(out)
    a, b = outs
    for name in ("metrics.json", "coverage.csv", "trace.jsonl", "chain.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_ota_seed_env_reaches_the_run(scenario_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("OTA_SEED", "77")
    out = tmp_path / "o"
    assert main(["run", "--scenario", str(scenario_file), "--out", str(out)]) == 0
    assert json.loads((out / "metrics.json").read_text())["seed"] == 77


def test_exit_codes_for_bad_invocations(tmp_path, capsys):
    assert main(["--bogus"]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["run", "--scenario", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x")]) == 2

    sparse = tmp_path / "sparse.json"
    sparse.write_text(json.dumps({"seed": 1}))
    assert main(["run", "--scenario", str(sparse), "--out", str(tmp_path / "y")]) == 2
    err = capsys.readouterr().err
    for field in ("manufacturers", "fleet", "update", "contacts"):
        assert field in err

    assert main(["report", str(tmp_path / "missing")]) == 2


def test_unwritable_output_is_a_runtime_error(scenario_file, tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_bytes(b"file, not a directory")
    code = main(
        ["run", "--scenario", str(scenario_file), "--out", str(blocker / "sub")]
    )
    assert code == 1
    assert "runtime error:" in capsys.readouterr().err
