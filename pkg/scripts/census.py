#!/usr/bin/env python3
"""Print trainable-parameter counts for a grid of network configurations."""

from __future__ import annotations

import argparse

from chsnet.network import NetworkConfig, build_chs_net, build_raiu_net, parameter_census


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--stages", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--base", type=int, nargs="+", default=[8, 16, 32])
    p.add_argument("--growth", type=float, default=1.5)
    args = p.parse_args(argv)
    print(f"{'stages':>6} {'base':>5} {'widths':<24} {'RAIU':>10} {'CHS':>10}")
    for stages in args.stages:
        for base in args.base:
            cfg = NetworkConfig(stages=stages, base_filters=base, depth_growth=args.growth,
                                input_size=(2 ** stages * 4,) * 2 + (1,))
            raiu = parameter_census(build_raiu_net(cfg)).total
            chs = parameter_census(build_chs_net(cfg)).total
            print(f"{stages:>6} {base:>5} {str(cfg.widths()):<24} {raiu:>10,} {chs:>10,}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
