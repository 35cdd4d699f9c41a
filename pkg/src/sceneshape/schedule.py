"""Mixed-source batch scheduling: every batch draws evenly from all sources."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ParameterError
from .losses import QualityTier


@dataclass
class DataSource:
    name: str
    tier: QualityTier
    items: list = field(default_factory=list)
    fixture_dir: Optional[str] = None

    def __post_init__(self):
        try:
            self.tier = QualityTier(self.tier)
        except ValueError:
            raise ParameterError(f"unknown quality tier {self.tier!r}") from None
        if not self.items and self.fixture_dir is not None:
            d = Path(self.fixture_dir)
            if d.is_dir():
                self.items = sorted(str(p) for p in d.iterdir() if p.is_file())


@dataclass
class SourceSpec:
    sources: list

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("need at least one data source")
        names = [s.name for s in self.sources]
        if len(set(names)) != len(names):
            raise ConfigError("data source names must be unique")
        for s in self.sources:
            if not s.items:
                raise ConfigError(f"data source {s.name!r} is empty")

    def __len__(self) -> int:
        return len(self.sources)


def batch_counts(batch_size: int, n_sources: int, batch_index: int) -> list[int]:
    """Per-source counts: ``B // S`` each, extras round-robin rotating per batch."""
    base, extra = divmod(batch_size, n_sources)
    counts = [base] * n_sources
    start = (batch_index * extra) % n_sources
    for j in range(extra):
        counts[(start + j) % n_sources] += 1
    return counts


def batch_schedule(sources: SourceSpec, batch_size: int, rng: np.random.Generator,
                   n_batches: Optional[int] = None) -> list[list[tuple[str, object]]]:
    """Batches of ``(source name, item)`` pairs.

    Within a source items come in seeded-shuffled order and are reshuffled
    when used up.  Without ``n_batches`` the schedule runs until every
    source has been gone through at least once (one epoch of the largest
    relative source).
    """
    if not isinstance(sources, SourceSpec):
        sources = SourceSpec(list(sources))
    if batch_size < 1:
        raise ParameterError("batch size must be >= 1")
    s = len(sources)
    orders = [list(rng.permutation(len(src.items))) for src in sources.sources]
    cursor = [0] * s
    passes = [0] * s
    batches = []
    b = 0
    while True:
        if n_batches is not None and b >= n_batches:
            break
        if n_batches is None and all(p >= 1 for p in passes):
            break
        batch = []
        for i, k in enumerate(batch_counts(batch_size, s, b)):
            src = sources.sources[i]
            for _ in range(k):
                if cursor[i] == len(orders[i]):
                    orders[i] = list(rng.permutation(len(src.items)))
                    cursor[i] = 0
                batch.append((src.name, src.items[orders[i][cursor[i]]]))
                cursor[i] += 1
                if cursor[i] == len(orders[i]):
                    passes[i] += 1
        batches.append(batch)
        b += 1
        if n_batches is None and b > 10_000_000:
            raise ConfigError("schedule does not terminate")
    return batches


def source_counts(batch: Sequence[tuple[str, object]], names: Sequence[str]) -> list[int]:
    return [sum(1 for n, _ in batch if n == name) for name in names]
