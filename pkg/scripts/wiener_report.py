"""Print the five uniform-inversion parameters of the cutoff resolvent
family for a shell potential, at one or more frequency cutoffs.

The algebra norm must stay under kato_norm/(4 pi) at every cutoff; the
remaining parameters (inverse-norm sup, tail radius, smoothing power,
translation step) feed the inversion argument behind the dispersive bound.
"""

import argparse
import json
import math

import numpy as np

from mvschro.measures import kato_norm, make_shell_measure
from mvschro.wiener import parameter_report


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--coupling", type=float, default=-0.5)
    ap.add_argument("--panels", type=int, default=64)
    ap.add_argument("--cutoffs", type=float, nargs="+", default=[16.0, 64.0])
    ap.add_argument("--eps-fit", type=float, default=1.0 / 3.0)
    ap.add_argument("--K", type=float, default=8.0)
    args = ap.parse_args()

    mu = make_shell_measure(1.0, args.coupling, args.panels)
    print(f"kato/(4 pi) = {kato_norm(mu) / (4.0 * math.pi):.6f}")
    grid = np.arange(0.5, 8.0001, 0.15)
    for L in args.cutoffs:
        rep = parameter_report(mu, L, grid, args.eps_fit, K=args.K)
        print(f"L={L:g}: {json.dumps(rep.to_json_dict())}")


if __name__ == "__main__":
    main()
