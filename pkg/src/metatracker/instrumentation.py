"""Global code-path counters.

Ablation variants must be gated totally — e.g. a run without KL
prioritization must never touch top-k sampling. These counters let tests
assert that, without threading flags through every call site. Not
thread-safe; reset between runs you want to compare.
"""

from collections import Counter


class Counters:
    def __init__(self):
        self._counts: Counter[str] = Counter()

    def increment(self, name: str, by: int = 1) -> None:
        self._counts[name] += by

    def get(self, name: str) -> int:
        return self._counts.get(name, 0)

    def reset(self) -> None:
        self._counts.clear()

    def snapshot(self) -> dict[str, int]:
        return dict(self._counts)


counters = Counters()
