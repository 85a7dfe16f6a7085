"""Compare the numba and numpy slice kernels, and show touch counts vs r.

    python3 benchmarks/bench_slicing.py [--n 4096] [--c 64] [--repeat 5]
"""
import argparse

from rsnet.bench import format_timings, time_kernels, touch_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4096)
    ap.add_argument("--c", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    print(f"wall clock, n={args.n} c={args.c}")
    print(format_timings(time_kernels(args.n, args.c, repeat=args.repeat)))
    print()
    print(f"{'n':>6} {'r':>6} {'touches':>10}")
    for n, r, t in touch_table():
        print(f"{n:>6} {r:>6.2f} {t:>10}")


if __name__ == "__main__":
    main()
