import numpy as np
import pytest
from sklearn.base import clone

from gatedrnn.estimator import RecurrentDensityEstimator, check_sequences
from gatedrnn.exceptions import DataError, ParameterError


def binary_seqs(n=12, T=10, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return [(rng.random((T, d)) < 0.4).astype(float) for _ in range(n)]


def test_check_sequences():
    seqs = check_sequences(binary_seqs(3))
    assert len(seqs) == 3 and seqs[0].dtype == np.float64
    assert len(check_sequences(np.zeros((4, 5, 2)))) == 4
    with pytest.raises(DataError):
        check_sequences([])
    with pytest.raises(DataError):
        check_sequences([np.full((3, 2), 0.5)])
    with pytest.raises(DataError):
        check_sequences([np.zeros((3, 2)), np.zeros((3, 4))])
    with pytest.raises(DataError):
        check_sequences([np.zeros((1, 2))])
    with pytest.raises(DataError):
        check_sequences([np.array([1.0, np.nan] * 20)], head="gmm")
    with pytest.raises(DataError):
        check_sequences([np.zeros((40, 2))], head="gmm")
    with pytest.raises(ParameterError):
        check_sequences([np.zeros(40)], head="poisson")


def test_params_and_clone():
    est = RecurrentDensityEstimator(cell="lstm", hidden=5, lr=0.01)
    params = est.get_params()
    assert params["cell"] == "lstm" and params["hidden"] == 5 and params["lr"] == 0.01
    twin = clone(est).set_params(cell="tanh")
    assert twin.cell == "tanh" and est.cell == "lstm"


def test_fit_score_transform():
    X = binary_seqs()
    est = RecurrentDensityEstimator(cell="gru", hidden=4, lr=0.01, max_epochs=3, patience=2)
    assert est.fit(X) is est
    assert len(est.curves_) == 3 and est.lr_ == 0.01
    per_seq = est.score_samples(X[:4])
    assert per_seq.shape == (4,) and np.all(per_seq < 0)
    assert est.score(X) == pytest.approx(np.mean(est.score_samples(X)), rel=1e-12)
    assert est.transform(X[:2]).shape == (2, 4)
    with pytest.raises(DataError):
        est.score([np.zeros((4, 7))])


def test_unfitted_raises():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        RecurrentDensityEstimator().score(binary_seqs(2))


def test_lr_search_and_gmm_head():
    rng = np.random.default_rng(1)
    X = [np.sin(np.arange(120) * 0.2 + rng.uniform(0, 6)) + 0.1 * rng.normal(size=120)
         for _ in range(6)]
    est = RecurrentDensityEstimator(head="gmm", hidden=3, components=2, lr_candidates=2,
                                    max_epochs=2, random_state=3)
    est.fit(X)
    assert est.lr_ in est.search_.candidates
    assert np.isfinite(est.score(X))
    assert est.n_features_in_ == 1


def test_fit_is_deterministic():
    X = binary_seqs(8)
    a = RecurrentDensityEstimator(hidden=3, lr=0.01, max_epochs=2).fit(X).score(X)
    b = RecurrentDensityEstimator(hidden=3, lr=0.01, max_epochs=2).fit(X).score(X)
    assert a == b
