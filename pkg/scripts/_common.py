import argparse
import json
from pathlib import Path

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def parser(description, default_config):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(CONFIGS / default_config))
    p.add_argument("--out-dir", help="override the spec's output directory")
    p.add_argument("--seeds", type=json.loads, help="JSON list, e.g. '[0,1,2]'")
    p.add_argument("--workers", type=int)
    return p


def overrides(args, **extra):
    out = {k: v for k, v in (("out_dir", args.out_dir), ("seeds", args.seeds), ("workers", args.workers)) if v is not None}
    out.update({k: v for k, v in extra.items() if v is not None})
    return out


def print_groups(groups, key="final_gap"):
    print(f"{'algorithm':<20}{'epsilon':>9}{'seeds':>7}{key + ' mean':>18}{'std':>12}")
    for g in groups:
        eps = "inf" if g["epsilon"] is None else f"{g['epsilon']:g}"
        print(f"{g['algorithm']:<20}{eps:>9}{g['n_seeds']:>7}{g[key + '_mean']:>18.6f}{g[key + '_std']:>12.6f}")
