"""Per-learner loss and bytes as the number of learners grows.

Runs periodic (b=1) and dynamic averaging on the drift stream with m in
{10, 100, 200}; cumulative loss is divided by m to compare across sizes.
"""
from common import mean, parser, save, table

from dynavg.config import load_preset
from dynavg.harness import run


def main() -> None:
    p = parser(__doc__, seeds=1)
    p.add_argument("--learners", type=int, nargs="+", default=[10, 100, 200])
    p.add_argument("--delta", type=float, default=1.0)
    args = p.parse_args()
    base = load_preset("drift-desk").config.replace(rounds=args.rounds or 500)
    rows = []
    for m in args.learners:
        for proto in ({"kind": "periodic", "delta": None}, {"kind": "dynamic", "delta": args.delta}):
            runs = [run(base.replace(learners=m, seed=s).with_protocol(period=1, **proto), write=False)
                    for s in range(args.seeds)]
            rows.append({"learners": m, "protocol": runs[0].config.protocol.label,
                         "loss_per_learner": mean(runs, lambda r: r.ledger.total_loss / m),
                         "bytes_per_learner": mean(runs, lambda r: r.ledger.total_bytes / m),
                         "seconds": mean(runs, lambda r: r.seconds)})
    table(rows, ["learners", "protocol", "loss_per_learner", "bytes_per_learner", "seconds"])
    save(args.out, "scale_out", rows)


if __name__ == "__main__":
    main()
