import numpy as np
import pytest
from pydantic import ValidationError

from everadapt.data import (
    SCENARIOS,
    DomainDataset,
    DomainSpec,
    FaultClass,
    SignalSchema,
    dataset_from_signals,
    default_domains,
    desk_fault_classes,
    generate_domain,
    load_dataset,
    load_scenario,
    load_signal_file,
    normalize_per_segment,
    save_dataset,
    save_scenario,
    segment_signal,
    split_dataset,
)
from everadapt.exceptions import (
    ConfigError,
    DataError,
    DatasetError,
    FormatError,
    MissingArtifactError,
    SizeError,
)


@pytest.mark.parametrize(
    "length,window,stride,count", [(4096, 1024, 1024, 4), (1024, 1024, 1024, 1), (5, 2, 2, 2)]
)
def test_segment_counts(length, window, stride, count):
    assert segment_signal(np.arange(float(length)), window, stride).shape == (count, window)


def test_segment_offsets():
    np.testing.assert_array_equal(segment_signal(np.arange(5.0), 2, 2), [[0, 1], [2, 3]])
    np.testing.assert_array_equal(segment_signal(np.arange(5.0), 3, 1)[-1], [2, 3, 4])


def test_disjoint_segments():
    segments = segment_signal(np.arange(1000.0), 64, 64)
    assert len(segments) == 1000 // 64
    assert len(np.unique(segments)) == segments.size


def test_segment_errors():
    with pytest.raises(SizeError):
        segment_signal(np.arange(3.0), 4, 1)
    with pytest.raises(SizeError):
        segment_signal(np.ones((2, 8)), 4, 4)


def test_normalize_per_segment():
    np.testing.assert_array_equal(normalize_per_segment([[3.0, 3.0, 3.0]]), [[0.0, 0.0, 0.0]])
    np.testing.assert_allclose(normalize_per_segment([[0.0, 2.0]]), [[-1.0, 1.0]])
    standard = normalize_per_segment(np.random.default_rng(0).normal(size=(4, 1, 50)))
    np.testing.assert_allclose(normalize_per_segment(standard), standard, atol=1e-12)


def test_generate_domain_is_deterministic():
    spec = default_domains(n_per_class=4)["D2"]
    first = generate_domain(spec, 64, seed=3)
    second = generate_domain(spec, 64, seed=3)
    assert first.segments.shape == (12, 1, 64)
    np.testing.assert_array_equal(first.segments, second.segments)
    np.testing.assert_array_equal(first.labels, np.repeat([0, 1, 2], 4))
    assert not np.array_equal(first.segments, generate_domain(spec, 64, seed=4).segments)


def test_generation_does_not_depend_on_sample_count():
    spec = default_domains(n_per_class=3)["D1"]
    small = generate_domain(spec, 32, seed=0)
    large = generate_domain(spec.model_copy(update={"n_per_class": 5}), 32, seed=0)
    np.testing.assert_array_equal(small.segments[:3], large.segments[:3])
    np.testing.assert_array_equal(small.segments[3:6], large.segments[5:8])


def test_healthy_signal_peaks_at_rotation_rate():
    spec = DomainSpec(
        domain_id="H", noise_sigma=0.0, n_per_class=2, classes=(FaultClass(class_id=0),)
    )
    dataset = generate_domain(spec, 1024, seed=0, sample_rate=2048.0, standardize=False)
    frequencies = np.fft.rfftfreq(1024, d=1 / 2048.0)
    for segment in dataset.segments[:, 0]:
        assert frequencies[np.argmax(np.abs(np.fft.rfft(segment)))] == spec.rotation_hz


def test_fault_classes_differ_from_healthy():
    dataset = generate_domain(default_domains(n_per_class=2)["D1"], 256, seed=0)
    healthy, outer = dataset.segments[0, 0], dataset.segments[2, 0]
    assert not np.allclose(healthy, outer)


def test_domain_spec_validation():
    with pytest.raises(ValidationError):
        DomainSpec(domain_id="X", classes=(FaultClass(class_id=0), FaultClass(class_id=2)))
    with pytest.raises(ValidationError):
        DomainSpec(domain_id="X", rotation_hz=0.0, classes=desk_fault_classes())
    with pytest.raises(ValidationError):
        FaultClass(class_id=0, impulse_rate=-1.0)


def test_scenarios():
    assert SCENARIOS["1"].domains == ("D1", "D2", "D3", "D4")
    assert SCENARIOS["2"].targets == ("D3", "D2", "D4")
    assert sorted(default_domains()) == ["D1", "D2", "D3", "D4"]


def test_dataset_validation():
    with pytest.raises(DatasetError):
        DomainDataset("X", np.zeros((3, 8)))
    with pytest.raises(DatasetError):
        DomainDataset("X", np.zeros((3, 1, 8)), np.zeros(2))
    with pytest.raises(DatasetError):
        DomainDataset("X", np.zeros((2, 1, 8))).require_labels()


def test_unlabeled_and_subset(domain_factory):
    dataset = domain_factory("S", n_per_class=2)
    hidden = dataset.unlabeled()
    assert hidden.labels is None
    assert not hidden.labeled
    np.testing.assert_array_equal(hidden.segments, dataset.segments)
    subset = dataset.subset([5, 0])
    np.testing.assert_array_equal(subset.labels, [2, 0])


def test_split_is_stratified_and_deterministic(domain_factory):
    dataset = domain_factory("S", n_per_class=10)
    train, test = split_dataset(dataset, 0.2, seed=1)
    assert len(train) == 24 and len(test) == 6
    np.testing.assert_array_equal(np.bincount(test.labels), [2, 2, 2])
    again_train, again_test = split_dataset(dataset, 0.2, seed=1)
    np.testing.assert_array_equal(test.segments, again_test.segments)
    np.testing.assert_array_equal(train.segments, again_train.segments)
    rows = {segment.tobytes() for segment in train.segments}
    assert not rows & {segment.tobytes() for segment in test.segments}


def test_load_text_and_csv(tmp_path):
    text = tmp_path / "signal.txt"
    text.write_text("1\n2\n3\n")
    np.testing.assert_array_equal(load_signal_file(text), [1.0, 2.0, 3.0])

    table = tmp_path / "signal.csv"
    table.write_text("time,drive,fan\n0,1.5,9\n1,2.5,9\n2,3.5,9\n")
    schema = SignalSchema(format="csv", column=1, header_rows=1)
    np.testing.assert_array_equal(load_signal_file(table, schema), [1.5, 2.5, 3.5])


def test_load_binary(tmp_path):
    values = np.array([0.5, -1.0, 2.0], dtype="<f4")
    path = tmp_path / "signal.bin"
    path.write_bytes(np.array([3], dtype="<u8").tobytes() + values.tobytes())
    schema = SignalSchema(format="binary", dtype="<f4")
    np.testing.assert_array_equal(load_signal_file(path, schema), values)

    truncated = tmp_path / "truncated.bin"
    truncated.write_bytes(np.array([4], dtype="<u8").tobytes() + values.tobytes())
    with pytest.raises(FormatError) as exc_info:
        load_signal_file(truncated, schema)
    assert "16 bytes" in str(exc_info.value)
    assert "12 bytes" in str(exc_info.value)


def test_parse_error_names_byte_offset(tmp_path):
    path = tmp_path / "signal.txt"
    path.write_text("1.0\n2.0\nabc\n")
    with pytest.raises(FormatError) as exc_info:
        load_signal_file(path)
    assert exc_info.value.offset == 8
    assert "byte offset 8" in str(exc_info.value)


def test_load_errors(tmp_path):
    with pytest.raises(MissingArtifactError):
        load_signal_file(tmp_path / "absent.txt")
    path = tmp_path / "nan.txt"
    path.write_text("1\nnan\n")
    with pytest.raises(DataError):
        load_signal_file(path)


def test_dataset_from_signals():
    dataset = dataset_from_signals("F", [np.arange(8.0), np.arange(12.0)], [0, 1], window=4)
    assert dataset.segments.shape == (5, 1, 4)
    np.testing.assert_array_equal(dataset.labels, [0, 0, 1, 1, 1])
    with pytest.raises(DatasetError):
        dataset_from_signals("F", [np.arange(8.0)], [0, 1], window=4)


def test_dataset_round_trip(tmp_path, domain_factory):
    dataset = domain_factory("S", n_per_class=2)
    restored = load_dataset(save_dataset(dataset, tmp_path / "S"))
    np.testing.assert_array_equal(restored.segments, dataset.segments)
    np.testing.assert_array_equal(restored.labels, dataset.labels)

    hidden = load_dataset(save_dataset(dataset.unlabeled(), tmp_path / "T"))
    assert hidden.labels is None
    with pytest.raises(MissingArtifactError):
        load_dataset(tmp_path / "absent")


def test_scenario_round_trip(tmp_path):
    path = save_scenario(SCENARIOS["3"], tmp_path / "scenario.json")
    assert load_scenario(path) == SCENARIOS["3"]
    with pytest.raises(MissingArtifactError):
        load_scenario(tmp_path / "absent.json")


def test_invalid_scenario_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text('{"name": "x", "source": "D1", "targets": []}')
    with pytest.raises(ConfigError) as exc_info:
        load_scenario(path)
    assert any(error.startswith("scenario.targets") for error in exc_info.value.errors)

    path.write_text("not json")
    with pytest.raises(ConfigError):
        load_scenario(path)
