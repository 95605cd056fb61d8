import numpy as np
import pytest
from sklearn.base import clone

from zeromatch import ZeroMatchClassifier
from zeromatch.data import gen_blobs, split_semisupervised
from zeromatch.oracle import OracleSpec, generate


@pytest.fixture(scope="module")
def problem():
    ds = split_semisupervised(gen_blobs(3, 6, 80, 5.0, seed=0), 2, seed=0)
    classes = np.array([10, 20, 30])
    y = np.full(ds.n_train, -1)
    y[ds.labeled_indices] = classes[ds.train_labels[ds.labeled_indices]]
    pls = generate(OracleSpec(accuracy=0.9, embedding_dim=4, seed=0), ds)
    pl = classes[pls.labels_for(np.arange(ds.n_train))]
    return ds, classes, y, pl, pls


def test_params_round_trip_through_clone():
    est = ZeroMatchClassifier(method="adamatch", steps=10, tau=0.9)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(lr=0.01).lr == 0.01


def test_fit_predict_with_label_mapping(problem):
    ds, classes, y, pl, _ = problem
    est = ZeroMatchClassifier(steps=300, warmup=20, random_state=0).fit(ds.train_features, y, pl)
    assert np.array_equal(est.classes_, classes)
    pred = est.predict(ds.test_features)
    assert set(pred) <= set(classes)
    assert est.score(ds.test_features, classes[ds.test_labels]) > 0.8
    proba = est.predict_proba(ds.test_features)
    assert proba.shape == (ds.n_test, 3) and np.allclose(proba.sum(axis=1), 1)
    assert est.training_log_.shape == (300, 8) and est.stage1_log_.shape == (300, 8)


def test_random_state_reproducible(problem):
    ds, _, y, pl, _ = problem
    a = ZeroMatchClassifier(steps=30, warmup=3, random_state=4).fit(ds.train_features, y, pl)
    b = ZeroMatchClassifier(steps=30, warmup=3, random_state=4).fit(ds.train_features, y, pl)
    assert np.array_equal(a.predict_proba(ds.test_features), b.predict_proba(ds.test_features))


def test_feature_variants_need_extras_at_predict(problem):
    ds, classes, y, pl, pls = problem
    est = ZeroMatchClassifier(method="pl_feature", steps=20, warmup=2, random_state=0)
    est.fit(ds.train_features, y, pl)
    with pytest.raises(ValueError):
        est.predict(ds.test_features)
    test_pl = classes[pls.labels_for(ds.test_indices)]
    assert len(est.predict(ds.test_features, pseudo_labels=test_pl)) == ds.n_test

    emb = pls.embeddings_for(np.arange(ds.n_train))
    est = ZeroMatchClassifier(method="zeromatch_emb", steps=20, warmup=2, random_state=0)
    est.fit(ds.train_features, y, pl, embeddings=emb)
    pred = est.predict(ds.test_features, embeddings=pls.embeddings_for(ds.test_indices))
    assert len(pred) == ds.n_test


def test_input_validation(problem):
    ds, _, y, pl, _ = problem
    with pytest.raises(ValueError):
        ZeroMatchClassifier(method="zeromatch").fit(ds.train_features, y)
    with pytest.raises(ValueError):
        ZeroMatchClassifier(method="bogus").fit(ds.train_features, y, pl)
    with pytest.raises(ValueError):
        ZeroMatchClassifier(method="adamatch").fit(ds.train_features, np.full(len(y), -1))
    fitted = ZeroMatchClassifier(method="supervised", steps=5, warmup=1).fit(ds.train_features, y)
    with pytest.raises(ValueError):
        fitted.predict(ds.test_features[:, :3])
