from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import DomainDataset
from .exceptions import ConfigError
from .models import Model, predict_proba
from .tensor import Array
from .types import ReplayScope

logger = logging.getLogger(__name__)


class ReplayEntry(NamedTuple):
    """
    One buffered segment with the pseudo-label it received when its domain was finished.
    """

    segment: Array
    """Read-only `[channels, window]` array."""
    pseudo_label: int
    domain_index: int
    """Position of the segment's domain in the target sequence."""


class MemoryBatch(NamedTuple):
    segments: Array
    pseudo_labels: np.ndarray


def _check_fraction(fraction: float) -> float:
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"Replay fraction must lie in (0, 1], got {fraction}.")
    return fraction


def replay_count(fraction: float, size: int) -> int:
    """`round(fraction * size)`, halves rounded up."""
    return int(np.floor(fraction * size + 0.5))


@dataclass
class ReplayBuffer:
    """
    Samples kept from finished target domains.

    Entries are only ever appended; entries of earlier domains are never replaced.
    """

    capacity_fraction: float = 0.01
    entries: list[ReplayEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        _check_fraction(self.capacity_fraction)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def domain_indices(self) -> list[int]:
        return sorted({entry.domain_index for entry in self.entries})

    def count_for(self, domain_index: int) -> int:
        return sum(1 for entry in self.entries if entry.domain_index == domain_index)

    def in_scope(self, scope: ReplayScope = "all") -> list[ReplayEntry]:
        """All entries, or with `scope="last"` only those of the most recently finished domain."""
        if scope == "all" or not self.entries:
            return list(self.entries)
        last = max(entry.domain_index for entry in self.entries)
        return [entry for entry in self.entries if entry.domain_index == last]

    def sample(
        self,
        batch_size: int,
        rng: np.random.Generator,
        scope: ReplayScope = "all",
        *,
        min_size: int = 1,
    ) -> MemoryBatch | None:
        """
        Draw `min(batch_size, entries in scope)` entries without replacement.

        Returns None when fewer than `min_size` entries are in scope. Layers normalizing by batch
        statistics need `min_size=2`.
        """
        entries = self.in_scope(scope)
        if not entries or len(entries) < min_size:
            return None
        chosen = rng.choice(len(entries), size=min(batch_size, len(entries)), replace=False)
        return MemoryBatch(
            np.stack([entries[i].segment for i in chosen]),
            np.asarray([entries[i].pseudo_label for i in chosen], dtype=np.int64),
        )


def balanced_allocation(available: dict[int, int], total: int) -> dict[int, int]:
    """
    Split `total` over classes as evenly as their availability allows.

    Classes that run out hand their share to the others; leftovers go to the lowest class ids.
    """
    allocation = dict.fromkeys(available, 0)
    remaining = min(total, sum(available.values()))
    active = sorted(label for label, count in available.items() if count > 0)
    while remaining > 0 and active:
        share = max(remaining // len(active), 1)
        for label in active:
            take = min(share, available[label] - allocation[label], remaining)
            allocation[label] += take
            remaining -= take
            if remaining == 0:
                break
        active = [label for label in active if allocation[label] < available[label]]
    return allocation


def update_buffer(
    buffer: ReplayBuffer,
    model: Model,
    finished_target: DomainDataset,
    fraction: float | None = None,
    *,
    domain_index: int | None = None,
    seed: int = 0,
) -> ReplayBuffer:
    """
    Append `round(fraction * n)` segments of a finished target domain.

    Segments are balanced over the model's pseudo-labels and drawn uniformly within each class.
    The pseudo-labels are frozen at this point.

    Raises:
        ConfigError: If `fraction` lies outside `(0, 1]`.
    """
    fraction = _check_fraction(buffer.capacity_fraction if fraction is None else fraction)
    if domain_index is None:
        domain_index = max(buffer.domain_indices, default=-1) + 1
    total = replay_count(fraction, len(finished_target))
    if total == 0:
        logger.warning(
            "Replay fraction %s of %d segments rounds to zero; nothing buffered for %s.",
            fraction,
            len(finished_target),
            finished_target.domain_id,
        )
        return buffer
    pseudo = predict_proba(model, finished_target.segments).argmax(axis=1)
    rng = np.random.default_rng([seed, domain_index])
    available = {int(label): int(np.sum(pseudo == label)) for label in np.unique(pseudo)}
    chosen: list[np.ndarray] = []
    for label, count in balanced_allocation(available, total).items():
        rows = np.flatnonzero(pseudo == label)
        chosen.append(rng.choice(rows, size=count, replace=False))
    for row in np.sort(np.concatenate(chosen)):
        segment = finished_target.segments[row].copy()
        segment.flags.writeable = False
        buffer.entries.append(ReplayEntry(segment, int(pseudo[row]), domain_index))
    logger.info(
        "Buffered %d segments of %s.",
        total,
        finished_target.domain_id,
        extra={"domain": finished_target.domain_id, "buffer_size": len(buffer)},
    )
    return buffer
