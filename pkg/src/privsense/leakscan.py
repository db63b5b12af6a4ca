"""Multi-pattern substring scanning over serialized output.

The leakage audit checks every registered plaintext against megabytes of
serialized store, wire, and backend bytes; with thousands of registered
strings this scan is the hot loop of a verification run. A compiled
kernel (``privsense._scan``) does a single pass over the haystack with a
two-byte bucket index; the pure-Python fallback calls ``bytes.find`` per
needle. Both return identical results (``benchmarks/bench_leakscan.py``
compares them). Set ``PRIVSENSE_PURE_SCAN=1`` to force the fallback.
"""

from __future__ import annotations

import os


def scan_pure(haystack: bytes, needles: list[bytes]) -> list[tuple[int, int]]:
    """Return ``(needle_index, first_offset)`` for every needle found.

    Empty needles are never reported. Results are ordered by needle index.
    """
    hits = []
    for i, needle in enumerate(needles):
        if not needle:
            continue
        offset = haystack.find(needle)
        if offset >= 0:
            hits.append((i, offset))
    return hits


if os.environ.get("PRIVSENSE_PURE_SCAN") == "1":
    scan = scan_pure
    BACKEND = "pure"
else:
    try:
        from privsense._scan import scan

        BACKEND = "compiled"
    except ImportError:
        scan = scan_pure
        BACKEND = "pure"
