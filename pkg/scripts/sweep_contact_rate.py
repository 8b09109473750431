"""Sweep the contact rate and tabulate dissemination outcomes.

Every run uses the same fleet, update, and seed; only the Poisson
contact rate changes. Shows how encounter frequency drives time to
full coverage and how batching amortizes redemption transactions.

    python3 scripts/sweep_contact_rate.py --rates 0.05,0.1,0.2,0.4
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from otachain.simulator import run_simulation, scenario_from_dict


def build_scenario(n_vehicles, rate_per_s, horizon_s, seed):
    return scenario_from_dict(
        {
            "seed": seed,
            "manufacturers": {"m1": ["model_x", "year_2020"]},
            "fleet": [
                {
                    "gid": f"av{i:03d}",
                    "manufacturer": "m1",
                    "attributes": ["m1:model_x", "m1:year_2020"],
                }
                for i in range(n_vehicles)
            ],
            "update": {
                "policy": "m1:model_x AND m1:year_2020",
                "size_mb": 1,
                "max_update": 3,
                "top_k": 1,
                "payload_bytes": 128,
            },
            "contacts": {"rate_per_s": rate_per_s, "horizon_s": horizon_s},
        }
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rates", default="0.05,0.1,0.2,0.4")
    parser.add_argument("--vehicles", type=int, default=30)
    parser.add_argument("--horizon", type=float, default=7200.0, help="seconds")
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--csv", help="also write the table to this file")
    args = parser.parse_args()

    rates = [float(r) for r in args.rates.split(",")]
    header = f"{'rate/s':>8} {'coverage':>9} {'full at (s)':>12} {'exchanges':>10} {'redeem txs':>11} {'flushes':>8}"
    rows = []
    print(header)
    for rate in rates:
        m = run_simulation(
            build_scenario(args.vehicles, rate, args.horizon, args.seed)
        ).metrics
        full = m["time_to_full_coverage_s"]
        rows.append(
            (
                rate,
                m["coverage_final"],
                "" if full is None else f"{full:.1f}",
                m["exchanges_completed"],
                m["redeem_transactions"],
                m["timeout_flushes"],
            )
        )
        print(
            f"{rate:>8.3f} {m['coverage_final']:>9.3f} {rows[-1][2]:>12}"
            f" {m['exchanges_completed']:>10} {m['redeem_transactions']:>11}"
            f" {m['timeout_flushes']:>8}"
        )

    if args.csv:
        lines = ["rate_per_s,coverage,full_at_s,exchanges,redeem_txs,flushes"]
        lines += [",".join(str(v) for v in row) for row in rows]
        Path(args.csv).write_text("\n".join(lines) + "\n")
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
