"""Checking analytic gradients against finite differences.

Every parameter of a plan (per-cell window lengths, frame positions, hops,
overlap ratio) gets a derivative from the backward pass. Here they are
compared with Richardson-extrapolated finite differences that never step
across a window-edge crossing, for both window kinds, all length modes and
all position modes, on an energy and an entropy loss.
"""

import sys

from dstft import verify


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    rows = verify.gradcheck_suite(seed)
    worst = {}
    for r in rows:
        key = (r["window"], r["length_mode"], r["position_mode"])
        worst[key] = max(worst.get(key, 0.0), r["max_rel_err"])
    for (w, lm, pm), e in sorted(worst.items()):
        print(f"{w:5s} {lm:5s} {pm:13s} max relative error {e:.2e}")
    print(f"overall worst {max(worst.values()):.2e} over {len(rows)} parameter groups")


if __name__ == "__main__":
    main()
