from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import numpy as np

from .base import iter_batches
from .data import DomainDataset
from .exceptions import DatasetError
from .losses import cross_entropy
from .models import Model, forward
from .optim import SGD
from .tensor import Graph, backward

if TYPE_CHECKING:
    from .trainer import TrainConfig

logger = logging.getLogger(__name__)


class SourcePretrainer:
    """
    Supervised pretraining on the labeled source domain.
    """

    model: Model
    cfg: TrainConfig
    optimizer: SGD
    rng: np.random.Generator

    def pretrain_source(self, source: DomainDataset) -> Model:
        """
        Minimize the source cross-entropy with mini-batch SGD.

        Norm layers run on batch statistics and accumulate the running source statistics that
        continual normalization later freezes.

        Raises:
            DatasetError: If the source is unlabeled or empty.
        """
        labels = source.require_labels()
        if len(source) == 0:
            raise DatasetError(f"Source domain {source.domain_id} is empty.")
        cfg = self.cfg
        epochs = cfg.epochs if cfg.pretrain_epochs is None else cfg.pretrain_epochs
        model = self.model.train()
        for epoch in range(epochs):
            losses = []
            for rows in iter_batches(self.rng.permutation(len(source)), cfg.batch_size):
                with Graph() as graph:
                    loss = cross_entropy(forward(model, source.segments[rows]), labels[rows])
                backward(graph, loss)
                self.optimizer.step()
                losses.append(loss.item())
            logger.debug("Source epoch %d: loss %.6f", epoch, float(np.mean(losses)))
        logger.info(
            "Pretrained on %s for %d epochs.",
            source.domain_id,
            epochs,
            extra={"domain": source.domain_id, "seed": cfg.seed},
        )
        return model
