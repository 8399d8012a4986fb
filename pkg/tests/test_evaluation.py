import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from everadapt.data import DomainDataset
from everadapt.evaluation import (
    MetricReport,
    ResultMatrix,
    acc_metric,
    accuracy,
    adapt_metric,
    bwt_metric,
    evaluate,
    summarize,
)
from everadapt.exceptions import DatasetError, MetricError, StateError
from everadapt.models import build_model

WORKED = [[90.0], [85.0, 92.0], [80.0, 88.0, 95.0]]


def test_worked_example():
    matrix = ResultMatrix.from_rows(WORKED)
    assert acc_metric(matrix) == pytest.approx(87.6666666667)
    assert bwt_metric(matrix) == pytest.approx(-7.0)
    assert adapt_metric(matrix) == pytest.approx(92.3333333333)
    assert adapt_metric(matrix, "paper_literal") == pytest.approx(138.5)
    assert evaluate(matrix) == MetricReport(acc_metric(matrix), -7.0, adapt_metric(matrix))


def test_single_domain():
    matrix = ResultMatrix.from_rows([[73.0]])
    report = evaluate(matrix)
    assert report.acc == 73.0
    assert report.bwt is None
    assert report.adapt == 73.0
    with pytest.raises(MetricError):
        adapt_metric(matrix, "paper_literal")


def test_constant_matrix():
    matrix = ResultMatrix.from_rows([[64.0] * (i + 1) for i in range(4)])
    assert evaluate(matrix) == MetricReport(64.0, 0.0, 64.0)


def test_no_forgetting_gives_zero_bwt():
    matrix = ResultMatrix.from_rows([[70.0], [70.0, 60.0], [70.0, 60.0, 99.0]])
    assert bwt_metric(matrix) == 0.0


def test_improvement_gives_positive_bwt():
    matrix = ResultMatrix.from_rows([[70.0], [75.0, 60.0], [80.0, 65.0, 90.0]])
    assert bwt_metric(matrix) == pytest.approx(7.5)


matrices = st.integers(1, 6).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.lists(
            st.floats(0.0, 100.0, allow_nan=False),
            min_size=n * (n + 1) // 2,
            max_size=n * (n + 1) // 2,
        ),
    )
)


@settings(max_examples=50, deadline=None)
@given(matrices)
def test_metrics_match_oracle(case):
    n, flat = case
    rows, start = [], 0
    for i in range(n):
        rows.append(flat[start : start + i + 1])
        start += i + 1
    report = evaluate(ResultMatrix.from_rows(rows))

    assert report.acc == pytest.approx(sum(rows[-1]) / n, abs=1e-12)
    assert report.adapt == pytest.approx(sum(rows[i][i] for i in range(n)) / n, abs=1e-12)
    if n == 1:
        assert report.bwt is None
    else:
        expected = sum(rows[-1][i] - rows[i][i] for i in range(n - 1)) / (n - 1)
        assert report.bwt == pytest.approx(expected, abs=1e-12)


def test_acc_ignores_order_within_final_row():
    first = ResultMatrix.from_rows([[50.0], [40.0, 60.0], [10.0, 20.0, 90.0]])
    second = ResultMatrix.from_rows([[50.0], [40.0, 60.0], [90.0, 10.0, 20.0]])
    assert acc_metric(first) == pytest.approx(acc_metric(second))


def test_record_errors():
    matrix = ResultMatrix(2)
    with pytest.raises(StateError):
        matrix.record(0, 1, 50.0)
    with pytest.raises(StateError):
        matrix.record(2, 0, 50.0)
    with pytest.raises(StateError):
        matrix.record(0, 0, 101.0)
    matrix.record(0, 0, 50.0)
    with pytest.raises(StateError):
        matrix.record(0, 0, 60.0)
    with pytest.raises(StateError):
        ResultMatrix(0)
    with pytest.raises(StateError):
        ResultMatrix.from_rows([[1.0, 2.0]])


def test_incomplete_matrix():
    matrix = ResultMatrix(2)
    matrix.record(0, 0, 90.0)
    matrix.record(1, 1, 80.0)
    assert not matrix.complete
    assert matrix.get(1, 0) is None
    with pytest.raises(StateError):
        acc_metric(matrix)
    with pytest.raises(StateError):
        bwt_metric(matrix)
    assert adapt_metric(matrix) == 85.0


def test_first_target_trace_and_frame():
    matrix = ResultMatrix.from_rows(WORKED, ["D2", "D3", "D4"])
    assert matrix.first_target_trace() == [90.0, 85.0, 80.0]
    frame = matrix.to_frame()
    assert list(frame.columns) == ["D2", "D3", "D4"]
    assert list(frame.index) == ["after_D2", "after_D3", "after_D4"]
    assert frame.loc["after_D3", "D3"] == 92.0
    assert np.isnan(frame.loc["after_D2", "D4"])
    assert repr(matrix) == "ResultMatrix(n_domains=3, complete=True)"


def test_summarize_uses_population_std():
    summary = summarize([MetricReport(80.0, -2.0, 90.0), MetricReport(90.0, -4.0, 94.0)])
    assert summary.acc == 85.0
    assert summary.acc_std == 5.0
    assert summary.bwt == -3.0
    assert summary.bwt_std == 1.0
    assert summary.adapt_std == 2.0

    single = summarize([MetricReport(70.0, None, 70.0)])
    assert single.bwt is None and single.bwt_std is None
    assert single.acc_std == 0.0
    with pytest.raises(StateError):
        summarize([])


def test_accuracy(tiny_spec, domain_factory):
    model = build_model(tiny_spec, 0)
    model.classifier_weight.data = np.zeros_like(model.classifier_weight.data)
    model.classifier_bias.data = np.array([1.0, 0.0, 0.0])
    segments = domain_factory("S", n_per_class=2).segments[:4]
    dataset = DomainDataset("S", segments, np.array([0, 0, 0, 1]))
    assert accuracy(model, dataset) == 75.0
    assert model.training


def test_accuracy_errors(tiny_spec):
    model = build_model(tiny_spec, 0)
    with pytest.raises(DatasetError):
        accuracy(model, DomainDataset("E", np.zeros((0, 1, 32)), np.zeros(0, dtype=np.int64)))
    with pytest.raises(DatasetError):
        accuracy(model, DomainDataset("U", np.zeros((2, 1, 32))))
