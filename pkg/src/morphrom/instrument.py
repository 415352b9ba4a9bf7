"""Process-wide operation counters used by benchmarks and cost-contract tests."""

from collections import Counter
from contextlib import contextmanager

COUNTERS: Counter = Counter()


def bump(name, n=1):
    COUNTERS[name] += n


@contextmanager
def counting():
    """Yield a Counter holding the increments made inside the block."""
    before = COUNTERS.copy()
    delta = Counter()
    try:
        yield delta
    finally:
        for k, v in COUNTERS.items():
            d = v - before.get(k, 0)
            if d:
                delta[k] = d
