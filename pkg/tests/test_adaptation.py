import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feddadil.adaptation import (
    ClassifierConfig,
    LinearClassifier,
    atom_classifiers,
    evaluate_accuracy,
    feddadil_e,
    feddadil_r,
    hard_labels,
    source_only,
    synthesize_target,
    train_classifier,
)
from feddadil.dictionary import Atom, ClientDataset, Dictionary


def blobs(rng, n=40, sep=6.0, n_c=2, d=2):
    y = np.arange(n) % n_c
    centers = sep * np.eye(n_c, d)
    return centers[y] + rng.normal(size=(n, d)), np.eye(n_c)[y]


def class_dictionary(rng, n=10):
    X0 = rng.normal(size=(n, 2)) + [-5.0, 0.0]
    X1 = rng.normal(size=(n, 2)) + [5.0, 0.0]
    return Dictionary([Atom(X0, np.tile([1.0, 0.0], (n, 1)), 0), Atom(X1, np.tile([0.0, 1.0], (n, 1)), 1)])


def mixed_dictionary(rng, K=3, n=12, n_c=3):
    atoms = []
    for k in range(K):
        y = np.arange(n) % n_c
        X = 4 * np.eye(n_c, 2)[y] + rng.normal(scale=0.5, size=(n, 2)) + k
        atoms.append(Atom(X, np.eye(n_c)[y], k))
    return Dictionary(atoms)


class TestClassifier:
    def test_separable_blobs_fit_perfectly(self, rng):
        X, Y = blobs(rng)
        clf = train_classifier(X, Y)
        assert evaluate_accuracy(clf.predict(X), Y.argmax(1)) == 1.0

    def test_zero_epochs_predicts_uniform(self, rng):
        X, Y = blobs(rng, n_c=3)
        clf = train_classifier(X, Y, ClassifierConfig(epochs=0))
        np.testing.assert_allclose(clf.predict_proba(X), 1 / 3)

    def test_duplication_invariance(self, rng):
        X, Y = blobs(rng)
        a = train_classifier(X, Y, ClassifierConfig(epochs=50))
        b = train_classifier(np.vstack([X, X]), np.vstack([Y, Y]), ClassifierConfig(epochs=50))
        np.testing.assert_allclose(b.weights, a.weights, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(b.bias, a.bias, rtol=1e-9, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 50.0))
    def test_loss_non_increasing(self, seed, lr):
        rng = np.random.default_rng(seed)
        X, Y = blobs(rng, n=30, sep=1.0, n_c=3)
        clf = train_classifier(X, Y, ClassifierConfig(epochs=60, lr=lr))
        assert np.all(np.diff(clf.losses) <= 1e-6)
        P = clf.predict_proba(X)
        np.testing.assert_allclose(P.sum(1), 1.0, atol=1e-6)

    def test_deterministic(self, rng):
        X, Y = blobs(rng)
        a, b = train_classifier(X, Y), train_classifier(X, Y)
        assert a.to_bytes() == b.to_bytes()

    def test_single_class_rejected(self, rng):
        X = rng.normal(size=(5, 2))
        with pytest.raises(ValueError, match="single class"):
            train_classifier(X, np.tile([1.0, 0.0], (5, 1)))

    def test_model_file_round_trip(self, rng, tmp_path):
        X, Y = blobs(rng, n_c=3, d=4)
        clf = train_classifier(X, Y, ClassifierConfig(epochs=20))
        raw = clf.to_bytes()
        assert len(raw) == 8 + 8 * (4 * 3 + 3)
        assert raw[:8] == (4).to_bytes(4, "little") + (3).to_bytes(4, "little")
        clf.save(tmp_path / "m.bin")
        back = LinearClassifier.load(tmp_path / "m.bin")
        np.testing.assert_array_equal(back.weights, clf.weights)
        np.testing.assert_array_equal(back.bias, clf.bias)
        with pytest.raises(ValueError):
            LinearClassifier.from_bytes(raw[:-1])


def test_hard_labels_tie_goes_to_lowest_index():
    np.testing.assert_array_equal(hard_labels([[0.5, 0.5, 0.0], [0.2, 0.4, 0.4], [1 / 3] * 3]), [0, 1, 0])


class TestReconstruction:
    def test_one_hot_alpha_trains_on_that_atom(self, rng):
        D = mixed_dictionary(rng)
        X, y = synthesize_target(D, [0.0, 1.0, 0.0])
        order, ref = np.lexsort(X.T), np.lexsort(D.atoms[1].features.T)
        np.testing.assert_allclose(X[order], D.atoms[1].features[ref], atol=1e-12)
        np.testing.assert_array_equal(y[order], D.atoms[1].labels.argmax(1)[ref])
        clf = feddadil_r(D, [0.0, 1.0, 0.0])
        direct = train_classifier(D.atoms[1].features, D.atoms[1].labels)
        np.testing.assert_array_equal(clf.predict(X), direct.predict(X))

    def test_two_class_atoms_give_both_classes(self, rng):
        # each atom holds a class-0 blob and a class-1 blob, at different offsets
        atoms = []
        for k, shift in enumerate(([0.0, 0.0], [0.0, 3.0])):
            X = np.vstack([rng.normal(size=(5, 2)) + [-5.0, 0.0], rng.normal(size=(5, 2)) + [5.0, 0.0]]) + shift
            atoms.append(Atom(X, np.repeat(np.eye(2), 5, axis=0), k))
        _, y = synthesize_target(Dictionary(atoms), [0.5, 0.5])
        assert set(y) == {0, 1}

    def test_single_class_atoms_tie_at_even_weights(self, rng):
        # every synthesised row is (1/2, 1/2); the tie-break sends all to class 0
        _, y = synthesize_target(class_dictionary(rng), [0.5, 0.5])
        assert set(y) == {0}

    def test_degenerate_barycenter_is_an_error(self, rng):
        D = class_dictionary(rng)
        with pytest.raises(ValueError, match="degenerate"):
            feddadil_r(D, [1.0, 0.0])

    def test_deterministic(self, rng):
        D = mixed_dictionary(rng)
        a = feddadil_r(D, [0.2, 0.3, 0.5])
        b = feddadil_r(D, [0.2, 0.3, 0.5])
        assert a.to_bytes() == b.to_bytes()


class TestEnsemble:
    def test_one_hot_alpha_equals_single_atom(self, rng):
        D = mixed_dictionary(rng)
        X = rng.normal(scale=3, size=(50, 2))
        for k in range(D.K):
            alpha = np.eye(D.K)[k]
            single = train_classifier(D.atoms[k].features, D.atoms[k].labels)
            np.testing.assert_array_equal(feddadil_e(D, alpha, X).labels, single.predict(X))

    def test_identical_atoms_give_that_classifier(self, rng):
        base = mixed_dictionary(rng, K=1)
        D = Dictionary([Atom(base.atoms[0].features, base.atoms[0].labels, k) for k in range(3)])
        X = rng.normal(scale=3, size=(30, 2))
        clf = train_classifier(D.atoms[0].features, D.atoms[0].labels)
        ens = feddadil_e(D, [0.2, 0.5, 0.3], X)
        np.testing.assert_allclose(ens.proba, clf.predict_proba(X), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_mixture_rows_on_simplex(self, seed):
        rng = np.random.default_rng(seed)
        D = mixed_dictionary(rng)
        ens = feddadil_e(D, rng.dirichlet(np.ones(3)), rng.normal(scale=4, size=(20, 2)),
                         ClassifierConfig(epochs=30))
        assert ens.proba.min() >= 0
        np.testing.assert_allclose(ens.proba.sum(1), 1.0, atol=1e-6)

    def test_single_class_atom_error_names_atom(self, rng):
        D = mixed_dictionary(rng)
        D.atoms[2].labels = np.tile([0.0, 1.0, 0.0], (D.n_atom, 1))
        with pytest.raises(ValueError, match="atom 2"):
            atom_classifiers(D)


def test_source_only_pools_labeled_clients(rng):
    X1, Y1 = blobs(rng)
    X2, Y2 = blobs(rng)
    target = ClientDataset(rng.normal(size=(5, 2)), role="target")
    clf = source_only([ClientDataset(X1, Y1), ClientDataset(X2, Y2), target])
    direct = train_classifier(np.vstack([X1, X2]), np.vstack([Y1, Y2]))
    np.testing.assert_array_equal(clf.weights, direct.weights)
    with pytest.raises(ValueError):
        source_only([target])


class TestAccuracy:
    def test_values(self):
        assert evaluate_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
        assert evaluate_accuracy([0, 0], [1, 1]) == 0.0
        assert evaluate_accuracy([0, 1, 2, 3], [0, 1, 2, 0]) == 0.75

    def test_errors(self):
        with pytest.raises(ValueError):
            evaluate_accuracy([], [])
        with pytest.raises(ValueError):
            evaluate_accuracy([1], [1, 2])
