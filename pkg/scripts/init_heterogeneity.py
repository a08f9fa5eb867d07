"""Accuracy of periodic averaging under heterogeneous initialization.

Each learner starts from a shared model plus uniform noise of width eps;
accuracy of the averaged model is reported relative to eps=0, b=1.
"""
from common import parser, run_grid, save

from dynavg.config import load_preset


def main() -> None:
    p = parser(__doc__, seeds=3)
    p.add_argument("--eps", type=float, nargs="+", default=[0.0, 0.1, 0.5, 1.0, 2.0])
    p.add_argument("--periods", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    args = p.parse_args()
    cfg = load_preset("mnist-like").config.replace(rounds=args.rounds or 500)
    res = run_grid(cfg, [{"kind": "periodic"}], args.seeds,
                   axes={"init_noise": args.eps, "period": args.periods})
    mat = res.report["relative_accuracy"]["periodic"]
    print("eps \\ b " + "".join(f"{b:>8}" for b in mat["period"]))
    for eps, row in zip(mat["init_noise"], mat["matrix"]):
        print(f"{eps:>7g} " + "".join(f"{v:>8.3f}" for v in row))
    save(args.out, "init_heterogeneity", mat)


if __name__ == "__main__":
    main()
