from __future__ import annotations

import logging
from math import ceil
from typing import TYPE_CHECKING

import numpy as np

from .base import iter_batches
from .data import DomainDataset
from .exceptions import DatasetError
from .losses import (
    class_conditional_mmd,
    cross_entropy,
    entropy_loss,
    overall_loss,
    replay_loss,
)
from .models import Model, classify, extract_features, predict_proba
from .optim import SGD
from .tensor import Array, Graph, Tensor, backward

if TYPE_CHECKING:
    from .replay import MemoryBatch
    from .trainer import TrainConfig

logger = logging.getLogger(__name__)


def pseudo_labels_from_probs(probs: Array, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Argmax labels and the mask of predictions whose top probability reaches `threshold`."""
    return probs.argmax(axis=1), probs.max(axis=1) >= threshold


def pseudo_label(
    model: Model, batch: Array | Tensor, threshold: float
) -> tuple[np.ndarray, np.ndarray]:
    """
    Label a target batch with the model's most probable class, evaluated in eval mode.

    Returns:
        The labels and a boolean confidence mask, both of shape `[B]`.
    """
    segments = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
    return pseudo_labels_from_probs(predict_proba(model, segments), threshold)


class TargetAdapter:
    """
    Unsupervised adaptation to one target domain.
    """

    model: Model
    cfg: TrainConfig
    optimizer: SGD
    rng: np.random.Generator
    steps_done: int = 0
    """Adaptation steps over the whole run."""
    last_mean_loss: float = float("nan")

    def memory_batch(self) -> MemoryBatch | None:
        raise NotImplementedError()

    def _alpha_override(self) -> float | None:
        if not self.cfg.use_entropy:
            return 0.0
        if not self.cfg.use_cca:
            return 1.0
        return None

    def adapt_to_domain(self, source: DomainDataset, target: DomainDataset) -> Model:
        """
        Adapt the model to an unlabeled target domain.

        Every step draws a source batch, a target batch and a memory batch and minimizes the
        overall objective. Frozen (CBN) norm layers normalize all three streams by the source
        statistics unless `cbn_source_stream="batch"`, which gives the source stream its own batch
        statistics. The run takes `epochs * ceil(n_target / batch_size)` steps.

        Raises:
            DatasetError: If the target is empty or the source unlabeled.
        """
        if len(target) == 0:
            raise DatasetError(f"Target domain {target.domain_id} is empty.")
        source_labels = source.require_labels()
        cfg = self.cfg
        model = self.model
        model.freeze_statistics()
        total_steps = cfg.epochs * ceil(len(target) / cfg.batch_size)
        weights = cfg.loss_weights.model_copy(update={"total_steps": total_steps})
        alpha = self._alpha_override()
        source_batch = min(cfg.batch_size, len(source))
        source_batch_statistics = cfg.cbn_source_stream == "batch"
        missing_memory = 0
        no_shared_class = 0
        losses = []
        step = 0
        for epoch in range(cfg.epochs):
            for rows in iter_batches(self.rng.permutation(len(target)), cfg.batch_size):
                target_segments = target.segments[rows]
                source_rows = self.rng.choice(len(source), size=source_batch, replace=False)
                pseudo, confident = pseudo_label(model, target_segments, cfg.pseudo_threshold)
                if cfg.cca_thresholded:
                    pseudo = np.where(confident, pseudo, -1)
                memory = self.memory_batch()
                model.train()
                with Graph() as graph:
                    source_features = extract_features(
                        model, source.segments[source_rows], batch_statistics=source_batch_statistics
                    )
                    l_src = cross_entropy(
                        classify(model, source_features), source_labels[source_rows]
                    )
                    target_features = extract_features(model, target_segments)
                    l_e: Tensor | float = (
                        entropy_loss(classify(model, target_features)) if cfg.use_entropy else 0.0
                    )
                    l_loc: Tensor | float = 0.0
                    if cfg.use_cca:
                        l_loc = class_conditional_mmd(
                            source_features,
                            source_labels[source_rows],
                            target_features,
                            pseudo,
                            cfg.kernel,
                        )
                        no_shared_class += not l_loc.requires_grad
                    replay = replay_loss(model, memory)
                    missing_memory += replay.skipped
                    loss = overall_loss(
                        l_e, l_loc, replay.value, l_src, step, weights, alpha=alpha
                    )
                backward(graph, loss)
                self.optimizer.step()
                losses.append(loss.item())
                step += 1
            logger.debug(
                "Target %s epoch %d: loss %.6f",
                target.domain_id,
                epoch,
                float(np.mean(losses[-ceil(len(target) / cfg.batch_size) :])),
            )
        self.steps_done += step
        if cfg.use_replay and missing_memory:
            logger.warning(
                "No replay memory for %d of %d steps on %s.",
                missing_memory,
                step,
                target.domain_id,
            )
        if no_shared_class:
            logger.warning(
                "No class shared by source and confident target batches in %d of %d steps on %s.",
                no_shared_class,
                step,
                target.domain_id,
            )
        logger.info(
            "Adapted to %s in %d steps.",
            target.domain_id,
            step,
            extra={"domain": target.domain_id, "seed": cfg.seed, "mean_loss": float(np.mean(losses))},
        )
        self.last_mean_loss = float(np.mean(losses))
        return model
