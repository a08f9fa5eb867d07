"""Loss against communication for dynamic and periodic averaging on mnist-like.

Ratios are relative to periodic averaging with b=1, averaged over seeds.
"""
from common import grouped, mean, parser, run_grid, save, table

from dynavg.config import load_preset


def main() -> None:
    args = parser(__doc__, seeds=5).parse_args()
    cf = load_preset("mnist-like")
    cfg = cf.config if args.rounds is None else cf.config.replace(rounds=args.rounds)
    res = grouped(run_grid(cfg, cf.variants, args.seeds))
    base = res["periodic(b=1)"]
    loss0 = mean(base, lambda r: r.ledger.total_loss)
    bytes0 = mean(base, lambda r: r.ledger.total_bytes)
    rows = []
    for label, runs in res.items():
        loss = mean(runs, lambda r: r.ledger.total_loss)
        nbytes = mean(runs, lambda r: r.ledger.total_bytes)
        rows.append({"protocol": label, "cum_loss": loss, "cum_bytes": nbytes,
                     "loss_ratio": loss / loss0, "bytes_ratio": nbytes / bytes0 if bytes0 else 0.0,
                     "accuracy": mean(runs, lambda r: r.evaluation.get("eval_accuracy", float("nan")))})
    table(rows, ["protocol", "cum_loss", "cum_bytes", "loss_ratio", "bytes_ratio", "accuracy"])
    save(args.out, "tradeoff", rows)


if __name__ == "__main__":
    main()
