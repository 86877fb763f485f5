"""Train dkt and dkt-ml on KC-duplicated synthetic data and compare evaluation methods.

A leaking baseline scores near-perfect AUC on the second copy of each KC under
one-by-one scoring; all-in-one scoring removes that advantage.
"""

import argparse
import json

from leakfree_kt.demo import DemoConfig, leakage_demo


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", nargs="+", default=["dkt", "dkt-ml"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=20)
    a = ap.parse_args()
    res = leakage_demo(a.models, DemoConfig(seed=a.seed, max_epochs=a.epochs))
    print(json.dumps(res, indent=1))


if __name__ == "__main__":
    main()
