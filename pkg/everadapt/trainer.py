"""
The continual adaptation loop: pretrain on the source, then adapt through the target sequence,
evaluating every finished domain and buffering a slice of it for replay.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ._trainer_adapt import TargetAdapter, pseudo_label
from ._trainer_replay import ReplayManager
from ._trainer_source import SourcePretrainer
from .base import write_json
from .data import DomainDataset, split_dataset
from .evaluation import MetricReport, ResultMatrix, accuracy, evaluate
from .exceptions import DatasetError
from .losses import KernelConfig, LossWeights
from .models import Model, ModelSpec, build_model, desk_spec, save_checkpoint
from .optim import SGD
from .replay import ReplayBuffer, update_buffer
from .types import AdaptMode, NormMode, ReplayScope, SourceStream, StageRecord

__all__ = [
    "AdaptationRun",
    "ContinualTrainer",
    "TrainConfig",
    "adapt_to_domain",
    "pretrain_source",
    "pseudo_label",
    "run_sequence",
    "update_buffer",
]

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """
    Hyperparameters and component switches of one continual run.

    Defaults are the full-scale values: lr 1e-3, weight decay 1e-4, 40 epochs, batch size 256.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(1e-3, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    momentum: float = Field(0.0, ge=0.0, lt=1.0)
    epochs: int = Field(40, ge=1)
    """Epoch budget of every target domain, and of pretraining unless `pretrain_epochs` is set."""
    pretrain_epochs: int | None = Field(None, ge=0)
    batch_size: int = Field(256, ge=2)
    seed: int = 0
    replay_fraction: float = Field(0.01, gt=0.0, le=1.0)
    pseudo_threshold: float = Field(0.8, ge=0.0, lt=1.0)
    loss_weights: LossWeights = LossWeights()
    kernel: KernelConfig = KernelConfig()
    norm_mode: NormMode = "CBN"
    cbn_source_stream: SourceStream = "frozen"
    replay_scope: ReplayScope = "all"
    use_cca: bool = True
    use_entropy: bool = True
    use_replay: bool = True
    cca_thresholded: bool = True
    """Align only confident pseudo-labels; otherwise every target sample takes part."""
    adapt: bool = True
    """False keeps the pretrained model as it is, the no-adaptation control."""
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    eval_batch_size: int = Field(256, ge=1)
    adapt_mode: AdaptMode = "corrected"


@dataclass
class AdaptationRun:
    """
    Outcome of a continual run over an ordered target sequence.
    """

    scenario: list[str]
    """Target domain ids in adaptation order."""
    result_matrix: ResultMatrix
    seed: int
    source_accuracy: float | None = None
    checkpoints: list[Path] = field(default_factory=list)
    stages: list[StageRecord] = field(default_factory=list)

    def report(self, adapt_mode: AdaptMode = "corrected") -> MetricReport:
        return evaluate(self.result_matrix, adapt_mode)

    def first_target_trace(self) -> list[float | None]:
        return self.result_matrix.first_target_trace()


class ContinualTrainer(ReplayManager, SourcePretrainer, TargetAdapter):
    """
    One model, one optimizer and one replay buffer, carried through a whole run.
    """

    def __init__(self, model: Model, cfg: TrainConfig, buffer: ReplayBuffer | None = None) -> None:
        self.model = model
        self.cfg = cfg
        self.optimizer = SGD(
            model.parameters(), cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
        )
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self.buffer = buffer if buffer is not None else ReplayBuffer(cfg.replay_fraction)
        if cfg.use_replay and cfg.replay_scope == "last":
            logger.warning("Replaying only the most recently finished domain.")

    def _checkpoint(self, run_dir: Path | None, stage: int) -> Path | None:
        if run_dir is None:
            return None
        return save_checkpoint(self.model, run_dir / f"stage_{stage}.ckpt")

    def run(
        self,
        source: DomainDataset,
        targets: Sequence[DomainDataset],
        *,
        run_dir: str | Path | None = None,
    ) -> AdaptationRun:
        """
        Pretrain, then adapt to every target in order.

        After target `i` the model is evaluated on the test parts of targets `0..i` (row `i` of
        the result matrix) and the finished target is buffered. Adaptation only ever sees the
        unlabeled training parts. A checkpoint is written after every stage when `run_dir` is set.
        """
        if not targets:
            raise DatasetError("At least one target domain is required.")
        cfg = self.cfg
        directory = Path(run_dir) if run_dir is not None else None
        source_train, source_test = _split(source, cfg)
        splits = [_split(target, cfg) for target in targets]
        run = AdaptationRun(
            scenario=[target.domain_id for target in targets],
            result_matrix=ResultMatrix(len(targets), [target.domain_id for target in targets]),
            seed=cfg.seed,
        )

        started = perf_counter()
        self.pretrain_source(source_train)
        self.model.freeze_statistics()
        run.source_accuracy = accuracy(self.model, source_test, batch_size=cfg.eval_batch_size)
        stage: StageRecord = {
            "stage": 0,
            "domain_id": source.domain_id,
            "accuracies": [run.source_accuracy],
            "seconds": perf_counter() - started,
        }
        if (path := self._checkpoint(directory, 0)) is not None:
            run.checkpoints.append(path)
            stage["checkpoint"] = path.name
        run.stages.append(stage)

        for index, (train, _) in enumerate(splits):
            started = perf_counter()
            unlabeled = train.unlabeled()
            if cfg.adapt:
                self.adapt_to_domain(source_train, unlabeled)
            for previous in range(index + 1):
                run.result_matrix.record(
                    index,
                    previous,
                    accuracy(self.model, splits[previous][1], batch_size=cfg.eval_batch_size),
                )
            if cfg.adapt:
                self.remember(unlabeled, index)
            stage = {
                "stage": index + 1,
                "domain_id": train.domain_id,
                "accuracies": run.result_matrix.values[index, : index + 1].tolist(),
                "seconds": perf_counter() - started,
                "buffer_size": len(self.buffer),
            }
            if cfg.adapt:
                stage["mean_loss"] = self.last_mean_loss
            if (path := self._checkpoint(directory, index + 1)) is not None:
                run.checkpoints.append(path)
                stage["checkpoint"] = path.name
            run.stages.append(stage)
            logger.info(
                "Finished stage %d (%s).",
                index + 1,
                train.domain_id,
                extra={
                    "domain": train.domain_id,
                    "seed": cfg.seed,
                    "accuracy": run.result_matrix.get(index, index),
                },
            )

        if directory is not None:
            write_json(
                directory / "run_manifest.json",
                {
                    "config": cfg.model_dump(mode="json"),
                    "spec": self.model.spec.model_dump(mode="json"),
                    "seed": cfg.seed,
                    "source": source.domain_id,
                    "scenario": run.scenario,
                    "result_matrix": run.result_matrix.values,
                    "stages": run.stages,
                },
                atomic=True,
            )
        return run


def _split(dataset: DomainDataset, cfg: TrainConfig) -> tuple[DomainDataset, DomainDataset]:
    """Train and test parts; without a test fraction both are the whole dataset."""
    if cfg.test_fraction == 0.0:
        return dataset, dataset
    return split_dataset(dataset, cfg.test_fraction, cfg.seed)


def pretrain_source(model: Model, source: DomainDataset, cfg: TrainConfig) -> Model:
    return ContinualTrainer(model, cfg).pretrain_source(source)


def adapt_to_domain(
    model: Model,
    source: DomainDataset,
    target: DomainDataset,
    buffer: ReplayBuffer,
    cfg: TrainConfig,
) -> Model:
    return ContinualTrainer(model, cfg, buffer).adapt_to_domain(source, target)


def run_sequence(
    source: DomainDataset,
    targets: Sequence[DomainDataset],
    cfg: TrainConfig,
    *,
    spec: ModelSpec | None = None,
    run_dir: str | Path | None = None,
) -> AdaptationRun:
    """
    Build a model for the source data and run the whole continual sequence.

    Without `spec` the small backbone is used; its input length and class count always follow
    the source data, and its norm mode follows `cfg.norm_mode`.
    """
    labels = source.require_labels()
    spec = (spec or desk_spec()).model_copy(
        update={
            "input_length": source.window_len,
            "in_channels": source.segments.shape[1],
            "num_classes": max(int(labels.max()) + 1, 2) if len(labels) else 2,
            "norm_mode": cfg.norm_mode,
        }
    )
    # model_copy skips validation
    spec = ModelSpec.model_validate(spec.model_dump())
    model = build_model(spec, cfg.seed)
    return ContinualTrainer(model, cfg).run(source, targets, run_dir=run_dir)
