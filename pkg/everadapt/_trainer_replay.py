from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import numpy as np

from .data import DomainDataset
from .models import Model
from .replay import MemoryBatch, ReplayBuffer, update_buffer

if TYPE_CHECKING:
    from .trainer import TrainConfig

logger = logging.getLogger(__name__)


class ReplayManager:
    """
    Owns the replay buffer of a run: fills it after each finished domain and draws memory batches.
    """

    model: Model
    cfg: TrainConfig
    rng: np.random.Generator
    buffer: ReplayBuffer

    def memory_batch(self) -> MemoryBatch | None:
        if not self.cfg.use_replay:
            return None
        # conventional BN replays in TRAIN_BN mode, which needs two samples
        min_size = 1 if self.cfg.norm_mode == "CBN" else 2
        return self.buffer.sample(
            self.cfg.batch_size, self.rng, self.cfg.replay_scope, min_size=min_size
        )

    def remember(self, finished_target: DomainDataset, domain_index: int) -> ReplayBuffer:
        """Buffer a slice of a finished domain; a no-op when replay is disabled."""
        if not self.cfg.use_replay:
            return self.buffer
        return update_buffer(
            self.buffer,
            self.model,
            finished_target,
            self.cfg.replay_fraction,
            domain_index=domain_index,
            seed=self.cfg.seed,
        )
