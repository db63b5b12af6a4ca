"""Benchmark: compiled scan kernel vs pure-Python fallback.

Builds a realistic audit workload (serialized store bytes from a
simulated run, scanned for thousands of registered plaintext strings)
and times both backends. Run:

    python benchmarks/bench_leakscan.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import random
import statistics
import time

from privsense import leakscan
from privsense.records import dump_events
from privsense.simulate import DEFAULT_RATES, SimProfile, simulate

try:
    from privsense._scan import scan as scan_compiled
except ImportError:
    scan_compiled = None


def build_workload(days: int = 10, extra_needles: int = 4000):
    rates = dict(DEFAULT_RATES)
    rates["notifications_metadata"] = 60
    run = simulate(SimProfile(seed=4242, days=days, rates=rates))
    haystack = dump_events(run.events).encode("utf-8")

    needles = [s.encode("utf-8") for s in run.registry]
    # pad with absent needles: the audit's common case is "no hit"
    rng = random.Random(7)
    alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ+:-#"
    while len(needles) < len(run.registry) + extra_needles:
        needles.append(
            ("#" + "".join(rng.choice(alphabet) for _ in range(rng.randrange(8, 24)))).encode()
        )
    return haystack, needles


def timed(fn, haystack, needles, repeat):
    samples = []
    result = None
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn(haystack, needles)
        samples.append(time.perf_counter() - start)
    return min(samples), statistics.median(samples), result


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--days", type=int, default=10)
    args = parser.parse_args()

    haystack, needles = build_workload(days=args.days)
    mb = len(haystack) / 1e6
    print(f"corpus: {mb:.2f} MB, needles: {len(needles)} "
          f"(registered plaintexts plus absent padding)")

    rows = []
    best_pure, med_pure, hits_pure = timed(leakscan.scan_pure, haystack, needles, args.repeat)
    rows.append(("pure (bytes.find per needle)", best_pure, med_pure, len(hits_pure)))

    if scan_compiled is not None:
        best_c, med_c, hits_c = timed(scan_compiled, haystack, needles, args.repeat)
        rows.append(("compiled (single-pass bucket scan)", best_c, med_c, len(hits_c)))
        assert hits_c == hits_pure, "backends disagree"
    else:
        print("compiled kernel not available; showing fallback only")

    print(f"{'backend':<36} {'best':>10} {'median':>10} {'throughput':>14} {'hits':>6}")
    for name, best, median, hits in rows:
        throughput = mb / best
        print(f"{name:<36} {best * 1e3:>8.1f}ms {median * 1e3:>8.1f}ms "
              f"{throughput:>10.1f} MB/s {hits:>6}")
    if scan_compiled is not None:
        print(f"speedup (best/best): {best_pure / best_c:.1f}x")


if __name__ == "__main__":
    main()
