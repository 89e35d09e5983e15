"""Momentum (DPTD) against plain SGDA, with and without noise, at one epsilon.

Running the noiseless variants next to the private ones separates optimizer
behaviour from the effect of the injected noise.
"""

import json

from _common import overrides, parser, print_groups

from dptd.harness import load_spec, train


def main():
    p = parser(__doc__, "chain_eps_sweep.json")
    p.add_argument("--epsilon", type=float, default=10.0)
    args = p.parse_args()
    base = overrides(args)
    private = train(load_spec(args.config, {**base, "epsilons": [args.epsilon]}))
    out_dir = load_spec(args.config, base).out_dir + "_noiseless"
    spec = json.loads(open(args.config).read())
    spec.update(base, out_dir=out_dir, epsilons=[], algorithms=["nonprivate_td", "plain_sgda"])
    clean = train(load_spec(None, spec))
    print_groups(private["groups"] + clean["groups"])


if __name__ == "__main__":
    main()
