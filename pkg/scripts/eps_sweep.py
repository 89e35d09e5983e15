"""Privacy-utility sweep: DPTD and noisy plain SGDA over epsilon on the chain.

Writes per-cell logs, summary.json and an epoch-averaged aggregate.csv.
"""

from pathlib import Path

from _common import overrides, parser, print_groups

from dptd.harness import aggregate, load_spec, read_logs, report_csv, train


def main():
    p = parser(__doc__, "chain_eps_sweep.json")
    p.add_argument("--epsilons", type=lambda s: [float(x) for x in s.split(",")], help="comma separated")
    args = p.parse_args()
    spec = load_spec(args.config, overrides(args, epsilons=args.epsilons))
    summary = train(spec)
    print(f"reference MSPBE {summary['reference_mspbe']:.3e}")
    for eps, rep in summary["calibrations"].items():
        print(f"eps={eps:>6}  sigma={rep['sigma']:.4f}  beta'={rep['beta_prime']:.3g}  sigma'^2={rep['sigma_prime_sq']:.3f}")
    print_groups(summary["groups"])
    out = Path(spec.out_dir) / "aggregate.csv"
    out.write_text(report_csv(aggregate(read_logs(spec.out_dir), spec.epoch)), encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
