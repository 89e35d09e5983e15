"""Non-private DPTD on the 5-state chain with one-hot features (SAS data)."""

from _common import overrides, parser

from dptd.harness import load_spec, train


def main():
    p = parser(__doc__, "chain_nonprivate.json")
    p.add_argument("--T", type=int)
    args = p.parse_args()
    summary = train(load_spec(args.config, overrides(args, T=args.T)))
    for cell in summary["cells"]:
        print(f"seed {cell['seed']:>3}  final MSPBE {cell['final_mspbe']:.3e}  avg metric {cell['avg_metric']:.4f}")
    below = sum(c["final_mspbe"] < 1e-3 for c in summary["cells"])
    print(f"{below}/{len(summary['cells'])} seeds reach MSPBE < 1e-3")


if __name__ == "__main__":
    main()
