#!/usr/bin/env python3
"""Run every randomised identity suite and print a summary table."""
import argparse
import sys
import time

from lrpnet import identities


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=500)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    failures = 0
    print(f"{'suite':<16}{'trials':>8}{'failures':>10}{'worst':>14}{'seconds':>9}  extra")
    for name in identities.SUITES:
        t0 = time.perf_counter()
        rep = identities.run_suite(name, a.trials, a.seed)
        extra = {k: v for k, v in rep.items() if k not in ("suite", "trials", "failures", "worst_violation")}
        print(f"{name:<16}{rep['trials']:>8}{rep['failures']:>10}{rep['worst_violation']:>14.3e}"
              f"{time.perf_counter() - t0:>9.1f}  {extra}")
        failures += rep["failures"]
    sys.exit(3 if failures else 0)


if __name__ == "__main__":
    main()
