import math

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from zeromatch import oracle as fm
from zeromatch.data import gen_blobs
from zeromatch.exceptions import ConfigurationError, CoverageError, ParseError, ValidationError
from zeromatch.oracle import OracleSpec, PseudoLabelSet, generate, zero_shot_accuracy


@pytest.fixture(scope="module")
def ds():
    return gen_blobs(4, 6, 100, 3.0, seed=0)


@pytest.fixture(scope="module")
def big():
    # 12 500 per class, 80% train -> 10 000 train rows per class
    return gen_blobs(2, 2, 6250, 1.0, seed=0)


def truth(d):
    return np.concatenate([d.train_labels, d.test_labels])


def test_perfect_teacher(ds):
    pls = generate(OracleSpec(accuracy=1.0), ds)
    assert np.array_equal(pls.hard, truth(ds))
    assert zero_shot_accuracy(pls, ds) == 1.0


def test_zero_accuracy_binary_flips():
    d = gen_blobs(2, 3, 50, 2.0, seed=1)
    pls = generate(OracleSpec(accuracy=0.0), d)
    assert np.array_equal(pls.hard, 1 - truth(d))


def test_adjacent_confusion_shifts_by_one(ds):
    pls = generate(OracleSpec(accuracy=0.0, confusion="adjacent"), ds)
    assert np.array_equal(pls.hard, (truth(ds) + 1) % 4)


@pytest.mark.parametrize("a", [0.3, 0.6, 0.9])
def test_calibration_band(big, a):
    n = big.n_train + big.n_test
    pls = generate(OracleSpec(accuracy=a, seed=7), big)
    emp = np.mean(pls.hard == truth(big))
    assert abs(emp - a) <= 3 * math.sqrt(a * (1 - a) / n)


def test_zero_shot_matches_calibration(big):
    pls = generate(OracleSpec(accuracy=0.6, seed=2), big)
    assert abs(zero_shot_accuracy(pls, big) - 0.6) <= 3 * math.sqrt(0.24 / big.n_test)


def test_full_fallback(ds):
    pls = generate(OracleSpec(accuracy=0.9, fallback_rate=1.0, fallback_class=2), ds)
    assert np.all(pls.hard == 2)


def test_custom_matrix(ds):
    m = np.full((4, 4), 0.1) + np.eye(4) * 0.6
    spec = OracleSpec.from_matrix(m, seed=1)
    assert spec.accuracy == pytest.approx(0.7)
    pls = generate(spec, ds)
    assert 0.55 < np.mean(pls.hard == truth(ds)) < 0.85


def test_matrix_validation():
    with pytest.raises(ValueError):
        OracleSpec(accuracy=0.5, confusion=[[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(ValueError):
        OracleSpec(accuracy=0.9, confusion=[[0.5, 0.5], [0.5, 0.5]])


def test_matrix_size_must_match_dataset(ds):
    spec = OracleSpec.from_matrix(np.eye(3))
    with pytest.raises(ConfigurationError):
        generate(spec, ds)


def test_generation_deterministic_and_embeddings_leave_labels_alone(ds):
    plain = generate(OracleSpec(accuracy=0.5, seed=4), ds)
    again = generate(OracleSpec(accuracy=0.5, seed=4), ds)
    emb = generate(OracleSpec(accuracy=0.5, seed=4, embedding_dim=8), ds)
    assert plain.equals(again)
    assert np.array_equal(plain.hard, emb.hard)
    assert emb.embeddings.shape == (len(emb), 8)


def test_preset_reproduces_zero_shot_row():
    d = gen_blobs(10, 16, 2000, 3.0, seed=0)
    pls = generate(OracleSpec.from_preset("gpt4o-yahoo", seed=0), d)
    assert OracleSpec.from_preset("gpt4o-yahoo").accuracy == 0.6881
    assert zero_shot_accuracy(pls, d) == pytest.approx(0.688, abs=3 * math.sqrt(0.688 * 0.312 / d.n_test))


def test_file_round_trip(tmp_path, ds):
    pls = generate(OracleSpec(accuracy=0.7, seed=3, embedding_dim=4), ds)
    path = tmp_path / "pl.tsv"
    fm.save(pls, path)
    assert fm.load(path).equals(pls)


def test_round_trip_with_soft(tmp_path):
    soft = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
    pls = PseudoLabelSet(3, np.array([5, 9]), np.array([0, 2]), soft=soft, source="llm", seed=1)
    path = tmp_path / "pl.tsv"
    fm.save(pls, path)
    back = fm.load(path)
    assert back.equals(pls)
    assert back.embeddings is None


def test_header_format(tmp_path):
    pls = PseudoLabelSet(3, np.arange(2), np.array([1, 2]), source="x", seed=5)
    path = tmp_path / "pl.tsv"
    fm.save(pls, path)
    assert path.read_text().splitlines() == ["#K=3 #N=2 #source=x #seed=5 #d_e=0", "0\t1", "1\t2"]


def test_hand_written_hard_only_file(tmp_path):
    path = tmp_path / "ext.tsv"
    path.write_text("#K=3 #N=3 #source=gpt #seed=0 #d_e=0\n0\t2\n1\t0\n2\t1\n")
    pls = fm.load(path)
    assert np.array_equal(pls.hard, [2, 0, 1])
    assert pls.soft is None and pls.embeddings is None


def test_label_out_of_range_names_index(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("#K=3 #N=2 #source=x #seed=0 #d_e=0\n0\t1\n17\t3\n")
    with pytest.raises(ValidationError, match="index 17"):
        fm.load(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("#K=3 #N=2 #source=x #seed=0 #d_e=0\n0\t1\n1\tone\n")
    with pytest.raises(ParseError) as exc:
        fm.load(path)
    assert exc.value.line == 3


def test_coverage_error_lists_missing(ds):
    pls = generate(OracleSpec(), ds, include_test=False)
    with pytest.raises(CoverageError) as exc:
        zero_shot_accuracy(pls, ds)
    assert ds.n_train in exc.value.missing


def test_soft_argmax_must_match_hard():
    with pytest.raises(ValidationError):
        PseudoLabelSet(2, np.arange(1), np.array([0]), soft=np.array([[0.2, 0.8]]))


def _probe_accuracy(a, seed):
    d = gen_blobs(4, 8, 150, 3.0, seed=seed)
    pls = generate(OracleSpec(accuracy=a, embedding_dim=16, embedding_noise=0.5, seed=seed), d)
    e_train = pls.embeddings_for(d.global_indices("train"))
    e_test = pls.embeddings_for(d.test_indices)
    clf = LogisticRegression(max_iter=2000).fit(e_train, d.train_labels)
    return clf.score(e_test, d.test_labels)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_embedding_informativeness_is_monotone(seed):
    assert _probe_accuracy(0.95, seed) > _probe_accuracy(0.3, seed)
