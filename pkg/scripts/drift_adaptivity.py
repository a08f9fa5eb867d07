"""Message rate around concept drifts on drift-desk.

For each protocol, messages in the 50 rounds after each drift are compared
with the 50 rounds before it, pooled over seeds.
"""
from common import grouped, parser, run_grid, save, table

from dynavg.config import load_preset
from dynavg.metrics import DriftResponse, drift_response


def main() -> None:
    p = parser(__doc__, seeds=10)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--preset", default="drift-desk", choices=("drift", "drift-desk"))
    args = p.parse_args()
    cf = load_preset(args.preset)
    cfg = cf.config if args.rounds is None else cf.config.replace(rounds=args.rounds)
    variants = [v for v in cf.variants if v["kind"] != "serial"]
    rows = []
    for label, runs in grouped(run_grid(cfg, variants, args.seeds)).items():
        pooled = sum((drift_response(r.ledger, args.window) for r in runs), DriftResponse([], []))
        rows.append({"protocol": label, "drifts": len(pooled.before),
                     "msgs_before": sum(pooled.before) / max(len(pooled.before), 1),
                     "msgs_after": sum(pooled.after) / max(len(pooled.after), 1),
                     "ratio": pooled.ratio})
    table(rows, ["protocol", "drifts", "msgs_before", "msgs_after", "ratio"])
    save(args.out, "drift_adaptivity", rows)


if __name__ == "__main__":
    main()
