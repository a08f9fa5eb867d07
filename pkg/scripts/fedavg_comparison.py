"""Dynamic averaging against FedAvg subsampling on fedavg-cmp.

Loss and bytes are reported relative to FedAvg with C=0.3.
"""
from common import grouped, mean, parser, run_grid, save, table

from dynavg.config import load_preset


def main() -> None:
    args = parser(__doc__, seeds=5).parse_args()
    cf = load_preset("fedavg-cmp")
    cfg = cf.config if args.rounds is None else cf.config.replace(rounds=args.rounds)
    res = grouped(run_grid(cfg, cf.variants, args.seeds))
    base = res["fedavg(C=0.3,b=5)"]
    loss0 = mean(base, lambda r: r.ledger.total_loss)
    bytes0 = mean(base, lambda r: r.ledger.total_bytes)
    rows = []
    for label, runs in res.items():
        loss = mean(runs, lambda r: r.ledger.total_loss)
        nbytes = mean(runs, lambda r: r.ledger.total_bytes)
        rows.append({"protocol": label, "loss_ratio": loss / loss0, "bytes_ratio": nbytes / bytes0,
                     "matched": abs(loss / loss0 - 1) <= 0.1 and nbytes < bytes0,
                     "accuracy": mean(runs, lambda r: r.evaluation["eval_accuracy"])})
    table(rows, ["protocol", "loss_ratio", "bytes_ratio", "matched", "accuracy"])
    save(args.out, "fedavg_comparison", rows)


if __name__ == "__main__":
    main()
