"""Check every analytic backward pass against finite differences.

Each layer is driven with small random tensors; a tiny end-to-end network
is checked against the exact training loss. Anything above 1e-4 relative
error would indicate a broken gradient.
"""

from capnet.gradcheck import TOLERANCE, run_all


def main():
    results = run_all(seed=0)
    print(f"{'check':12s} {'worst entry':>24s} {'max rel err':>12s}")
    all_ok = True
    for name in sorted(results):
        errs = results[name]
        worst_key = max(errs, key=errs.get)
        worst = errs[worst_key]
        ok = worst < TOLERANCE
        all_ok = all_ok and ok
        print(f"{name:12s} {worst_key:>24s} {worst:12.3e}  "
              f"{'ok' if ok else 'FAIL'}")
    print()
    print("all gradients verified" if all_ok else "A GRADIENT IS WRONG")


if __name__ == "__main__":
    main()
