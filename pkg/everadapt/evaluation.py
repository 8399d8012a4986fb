from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from .data import DomainDataset
from .exceptions import DatasetError, MetricError, StateError
from .models import Model, predict_proba
from .types import AdaptMode

logger = logging.getLogger(__name__)


class ResultMatrix:
    """
    Accuracy bookkeeping over an adaptation sequence.

    `R[i, j]` is the accuracy (percent) on domain `j` after adapting to domain `i`. Only cells with
    `j <= i` exist and each is written exactly once; absent cells hold NaN.
    """

    def __init__(self, n_domains: int, domain_ids: Sequence[str] | None = None) -> None:
        if n_domains < 1:
            raise StateError(f"A result matrix needs at least one domain, got {n_domains}.")
        if domain_ids is not None and len(domain_ids) != n_domains:
            raise StateError(f"Expected {n_domains} domain ids, got {len(domain_ids)}.")
        self.n_domains = n_domains
        self.domain_ids: list[str] = list(domain_ids or (f"T{j + 1}" for j in range(n_domains)))
        self.values = np.full((n_domains, n_domains), np.nan)

    @classmethod
    def from_rows(
        cls, rows: Sequence[Sequence[float]], domain_ids: Sequence[str] | None = None
    ) -> ResultMatrix:
        """Build from lower-triangular rows, row `i` holding `i + 1` values."""
        matrix = cls(len(rows), domain_ids)
        for i, row in enumerate(rows):
            if len(row) != i + 1:
                raise StateError(f"Row {i} must hold {i + 1} values, got {len(row)}.")
            for j, value in enumerate(row):
                matrix.record(i, j, value)
        return matrix

    def record(self, i: int, j: int, value: float) -> None:
        if not (0 <= j <= i < self.n_domains):
            raise StateError(f"Cell ({i}, {j}) is outside the lower triangle of {self.n_domains}.")
        if self.is_defined(i, j):
            raise StateError(f"Cell ({i}, {j}) was already recorded.")
        if not 0.0 <= value <= 100.0:
            raise StateError(f"Accuracy must lie in [0, 100], got {value}.")
        self.values[i, j] = value

    def is_defined(self, i: int, j: int) -> bool:
        return bool(np.isfinite(self.values[i, j]))

    def get(self, i: int, j: int) -> float | None:
        return float(self.values[i, j]) if self.is_defined(i, j) else None

    def row_complete(self, i: int) -> bool:
        return bool(np.isfinite(self.values[i, : i + 1]).all())

    @property
    def complete(self) -> bool:
        return all(self.row_complete(i) for i in range(self.n_domains))

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()

    def first_target_trace(self) -> list[float | None]:
        """Accuracy on the first domain after every stage."""
        return [self.get(i, 0) for i in range(self.n_domains)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            self.values,
            index=pd.Index([f"after_{domain}" for domain in self.domain_ids], name="stage"),
            columns=self.domain_ids,
        )

    def __repr__(self) -> str:
        return f"ResultMatrix(n_domains={self.n_domains}, complete={self.complete})"


class MetricReport(NamedTuple):
    acc: float
    bwt: float | None
    """Absent for a single domain."""
    adapt: float


class MetricSummary(NamedTuple):
    """Mean and population standard deviation of metric reports over seeds."""

    acc: float
    acc_std: float
    bwt: float | None
    bwt_std: float | None
    adapt: float
    adapt_std: float


def accuracy(model: Model, dataset: DomainDataset, *, batch_size: int = 256) -> float:
    """
    Percentage of correct argmax predictions, evaluated in eval mode.

    Raises:
        DatasetError: If the dataset is empty or unlabeled.
    """
    labels = dataset.require_labels()
    if len(dataset) == 0:
        raise DatasetError(f"Cannot measure accuracy on empty dataset {dataset.domain_id}.")
    predictions = predict_proba(model, dataset.segments, batch_size=batch_size).argmax(axis=1)
    return 100.0 * float(np.mean(predictions == labels))


def _require_row(matrix: ResultMatrix, i: int) -> np.ndarray:
    if not matrix.row_complete(i):
        raise StateError(f"Row {i} of the result matrix is incomplete.")
    return matrix.values[i, : i + 1]


def acc_metric(matrix: ResultMatrix) -> float:
    """Mean of the final row."""
    return float(np.mean(_require_row(matrix, matrix.n_domains - 1)))


def bwt_metric(matrix: ResultMatrix) -> float | None:
    """
    Mean change of accuracy on every earlier domain between just after its adaptation and the end.
    None for a single domain.
    """
    last = matrix.n_domains - 1
    if last == 0:
        return None
    final = _require_row(matrix, last)
    diagonal = matrix.diagonal()[:last]
    if not np.isfinite(diagonal).all():
        raise StateError("The diagonal of the result matrix is incomplete.")
    return float(np.mean(final[:last] - diagonal))


def adapt_metric(matrix: ResultMatrix, mode: AdaptMode = "corrected") -> float:
    """
    Mean accuracy just after adapting to each domain.

    `paper_literal` divides the diagonal sum by `N - 1` instead of `N`.

    Raises:
        MetricError: For `paper_literal` with a single domain.
    """
    diagonal = matrix.diagonal()
    if not np.isfinite(diagonal).all():
        raise StateError("The diagonal of the result matrix is incomplete.")
    if mode == "corrected":
        return float(np.mean(diagonal))
    if matrix.n_domains == 1:
        raise MetricError("The paper_literal ADAPT divides by N - 1, which is zero for N = 1.")
    return float(np.sum(diagonal) / (matrix.n_domains - 1))


def evaluate(matrix: ResultMatrix, adapt_mode: AdaptMode = "corrected") -> MetricReport:
    return MetricReport(acc_metric(matrix), bwt_metric(matrix), adapt_metric(matrix, adapt_mode))


def _mean_std(values: ArrayLike) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std())


def summarize(reports: Sequence[MetricReport]) -> MetricSummary:
    if not reports:
        raise StateError("Nothing to summarize.")
    acc, acc_std = _mean_std([report.acc for report in reports])
    adapt, adapt_std = _mean_std([report.adapt for report in reports])
    bwts = [report.bwt for report in reports if report.bwt is not None]
    bwt, bwt_std = _mean_std(bwts) if bwts else (None, None)
    return MetricSummary(acc, acc_std, bwt, bwt_std, adapt, adapt_std)
