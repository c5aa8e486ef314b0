"""Patch-size sampling distributions and the per-size score table.

Training draws a fresh patch size for every batch from a fixed distribution;
each batch's accuracy (or loss) accumulates into the score of the size it
used. Selection compares the per-size means, so sizes drawn more often gain
no advantage: highest mean wins in accuracy mode, lowest in loss mode, ties
going to the smallest size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["PatchSizeDistribution", "ScoreTable", "SCORE_MODES", "DIST_MODES"]

DIST_MODES = ("uniform_range", "uniform_fixed", "multinomial")
SCORE_MODES = ("accuracy", "loss")


@dataclass(frozen=True)
class PatchSizeDistribution:
    """Sampling law over candidate patch sizes.

    uniform_range: every integer in [low, high] equally likely.
    uniform_fixed: equal probability over the explicit ``sizes`` set.
    multinomial: every integer in [low, high], with the ``emphasized``
    subset given twice the weight of the others.
    """

    mode: str
    low: int = 0
    high: int = 0
    sizes: tuple[int, ...] = ()
    emphasized: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in DIST_MODES:
            raise ValueError(f"unknown distribution mode {self.mode!r}")
        if self.mode == "uniform_fixed":
            if not self.sizes:
                raise ValueError("uniform_fixed needs a non-empty size set")
            if any(s < 1 for s in self.sizes):
                raise ValueError(f"patch sizes must be >= 1, got {self.sizes}")
            object.__setattr__(self, "sizes", tuple(sorted(set(self.sizes))))
        else:
            if self.low < 1 or self.high < self.low:
                raise ValueError(
                    f"invalid size range [{self.low}, {self.high}]"
                )
            if self.mode == "multinomial":
                bad = [s for s in self.emphasized if not self.low <= s <= self.high]
                if bad:
                    raise ValueError(
                        f"emphasized sizes {bad} fall outside "
                        f"[{self.low}, {self.high}]"
                    )
                object.__setattr__(
                    self, "emphasized", tuple(sorted(set(self.emphasized)))
                )

    @classmethod
    def uniform_range(cls, low: int, high: int) -> "PatchSizeDistribution":
        return cls("uniform_range", low=low, high=high)

    @classmethod
    def uniform_fixed(cls, sizes) -> "PatchSizeDistribution":
        return cls("uniform_fixed", sizes=tuple(sizes))

    @classmethod
    def multinomial(cls, low: int, high: int, emphasized) -> "PatchSizeDistribution":
        return cls("multinomial", low=low, high=high, emphasized=tuple(emphasized))

    def candidates(self) -> tuple[int, ...]:
        if self.mode == "uniform_fixed":
            return self.sizes
        return tuple(range(self.low, self.high + 1))

    def weights(self) -> np.ndarray:
        """Selection probability per candidate, normalized to 1."""
        cands = self.candidates()
        w = np.ones(len(cands))
        if self.mode == "multinomial":
            emphasized = set(self.emphasized)
            for i, s in enumerate(cands):
                if s in emphasized:
                    w[i] = 2.0
        return w / w.sum()

    def sample(self, rng: np.random.Generator) -> int:
        """Draw one size; all randomness comes from the supplied generator."""
        cands = self.candidates()
        if self.mode == "multinomial":
            return int(rng.choice(cands, p=self.weights()))
        return int(cands[rng.integers(len(cands))])


@dataclass
class ScoreTable:
    """Per-size cumulative score and selection count.

    Scores accumulate raw batch statistics; comparisons use the mean
    (cumulative / count) so selection is independent of draw frequency.
    """

    sizes: tuple[int, ...]
    mode: str = "accuracy"
    cumulative: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in SCORE_MODES:
            raise ValueError(f"unknown score mode {self.mode!r}")
        sizes = tuple(sorted(set(int(s) for s in self.sizes)))
        if not sizes or sizes[0] < 1:
            raise ValueError(f"candidate sizes must be positive, got {self.sizes}")
        self.sizes = sizes
        for s in sizes:
            self.cumulative.setdefault(s, 0.0)
            self.counts.setdefault(s, 0)

    def update(self, size: int, batch_stat: float) -> None:
        size = int(size)
        if size not in self.cumulative:
            raise ValueError(
                f"size {size} is not a candidate (candidates: {self.sizes})"
            )
        self.cumulative[size] += float(batch_stat)
        self.counts[size] += 1

    def total_updates(self) -> int:
        return sum(self.counts.values())

    def mean_scores(self) -> dict[int, float]:
        """Mean score per size; never-selected sizes are absent."""
        return {
            s: self.cumulative[s] / self.counts[s]
            for s in self.sizes
            if self.counts[s] > 0
        }

    def best_size(self) -> int:
        """Highest mean in accuracy mode, lowest in loss mode; ties -> smallest."""
        means = self.mean_scores()
        if not means:
            raise ValueError("no size has been scored yet")
        best = None
        best_mean = None
        for s in self.sizes:  # ascending, so ties keep the smaller size
            if s not in means:
                continue
            m = means[s]
            better = (
                best_mean is None
                or (self.mode == "accuracy" and m > best_mean)
                or (self.mode == "loss" and m < best_mean)
            )
            if better:
                best, best_mean = s, m
        return best

    def save(self, path) -> None:
        """One line per size: ``size cumulative count mode``."""
        with open(path, "w", encoding="utf-8") as f:
            for s in self.sizes:
                f.write(f"{s} {self.cumulative[s]!r} {self.counts[s]} {self.mode}\n")

    @classmethod
    def load(cls, path) -> "ScoreTable":
        sizes = []
        cumulative = {}
        counts = {}
        modes = set()
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 4:
                    raise ValueError(
                        f"{path}:{lineno}: expected 'size cumulative count mode', "
                        f"got {line!r}"
                    )
                size = int(parts[0])
                sizes.append(size)
                cumulative[size] = float(parts[1])
                counts[size] = int(parts[2])
                modes.add(parts[3])
        if len(modes) > 1:
            raise ValueError(f"{path}: conflicting score modes {sorted(modes)}")
        mode = modes.pop() if modes else "accuracy"
        table = cls(tuple(sizes), mode)
        table.cumulative.update(cumulative)
        table.counts.update(counts)
        return table
