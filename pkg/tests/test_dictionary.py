import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feddadil.barycenter import BarycenterConfig
from feddadil.dictionary import (
    Atom,
    ClientDataset,
    Dictionary,
    LossConfig,
    client_update,
    dil_loss,
    evaluate,
    init_dictionary,
    local_loss,
)
from oracles import assert_grad_close, central_difference, frozen_loss, random_problem


@pytest.mark.parametrize("seed", range(50))
def test_gradients_match_frozen_plan_differences(seed):
    rng = np.random.default_rng(seed)
    labeled = seed % 5 != 0
    D, Xq, Yq, alpha = random_problem(rng, labeled)
    cfg = LossConfig(beta=None if seed % 2 else 1.5, batch_size=Xq.shape[0])
    ev = evaluate(Xq, Yq, alpha, D, cfg)
    feats = [a.features for a in D.atoms]
    labs = [a.labels for a in D.atoms]
    maps, plan, beta = ev.barycenter.maps, ev.plan, ev.beta

    assert frozen_loss(Xq, Yq, alpha, feats, labs, plan, maps, beta) == pytest.approx(ev.loss, rel=1e-9, abs=1e-12)
    for k in range(D.K):
        def f_feat(X, k=k):
            return frozen_loss(Xq, Yq, alpha, feats[:k] + [X] + feats[k + 1:], labs, plan, maps, beta)

        def f_lab(Y, k=k):
            return frozen_loss(Xq, Yq, alpha, feats, labs[:k] + [Y] + labs[k + 1:], plan, maps, beta)

        assert_grad_close(ev.grad_features[k], central_difference(f_feat, feats[k]))
        assert_grad_close(ev.grad_labels[k], central_difference(f_lab, labs[k]))
    f_alpha = lambda a: frozen_loss(Xq, Yq, a, feats, labs, plan, maps, beta)  # noqa: E731
    assert_grad_close(ev.grad_alpha, central_difference(f_alpha, alpha))


@pytest.mark.parametrize("seed", range(10))
def test_feature_gradient_matches_true_loss(seed):
    # exact plans are locally constant, so the envelope gradient is the true one
    rng = np.random.default_rng(100 + seed)
    D, Xq, Yq, alpha = random_problem(rng)
    cfg = LossConfig(beta=1.0, batch_size=Xq.shape[0])
    ev = evaluate(Xq, Yq, alpha, D, cfg)
    k = int(rng.integers(D.K))
    direction = rng.normal(size=D.atoms[k].features.shape)

    def f(t):
        E = D.copy()
        E.atoms[k].features = E.atoms[k].features + t * direction
        return local_loss(Xq, Yq, alpha, E, cfg)

    h = 1e-6
    numeric = (f(h) - f(-h)) / (2 * h)
    analytic = np.sum(ev.grad_features[k] * direction)
    assert numeric == pytest.approx(analytic, rel=1e-4, abs=1e-7)


def test_unlabeled_batch_has_zero_label_gradient(rng):
    D, Xq, _, alpha = random_problem(rng, labeled=False)
    ev = evaluate(Xq, None, alpha, D)
    assert ev.beta == 0.0
    for g in ev.grad_labels:
        np.testing.assert_array_equal(g, 0.0)


def test_loss_zero_when_data_is_the_atom(rng):
    X = rng.normal(size=(6, 2))
    Y = np.eye(3)[[0, 1, 2, 0, 1, 2]]
    D = Dictionary([Atom(X.copy(), Y.copy(), 0)])
    assert local_loss(X, Y, [1.0], D) <= 1e-12


def test_loss_non_negative(rng):
    for _ in range(20):
        D, Xq, Yq, alpha = random_problem(rng)
        assert local_loss(Xq, Yq, alpha, D) >= 0


class TestInit:
    def test_deterministic(self):
        a = init_dictionary(2, 4, 3, 3, 1.0, 5)
        b = init_dictionary(2, 4, 3, 3, 1.0, 5)
        assert a.equals(b)

    def test_shapes_and_simplex_labels(self):
        D = init_dictionary(2, 4, 2, 3, 1.0, 0)
        assert (D.K, D.n_atom, D.dim, D.n_classes) == (2, 4, 2, 3)
        for a in D.atoms:
            assert a.labels.min() >= 0
            np.testing.assert_allclose(a.labels.sum(1), 1.0, atol=1e-12)

    def test_zero_scale_gives_zero_features(self):
        D = init_dictionary(3, 5, 2, 2, 0.0, 1)
        for a in D.atoms:
            np.testing.assert_array_equal(a.features, 0.0)

    @pytest.mark.parametrize("args", [(0, 4, 2, 3), (2, 0, 2, 3), (2, 4, 0, 3), (2, 4, 2, 0), (1.5, 4, 2, 3)])
    def test_invalid_dims(self, args):
        with pytest.raises(ValueError):
            init_dictionary(*args)


class TestSerialisation:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        D = init_dictionary(3, 7, 4, 5, 2.0, rng)
        D.version_tag = (12, "server")
        path = tmp_path / "d.bin"
        D.save(path)
        E = Dictionary.load(path)
        assert E.equals(D)
        assert E.version_tag == (12, "server")
        assert E.to_bytes() == D.to_bytes()

    def test_rejects_bad_files(self):
        raw = init_dictionary(1, 2, 2, 2, 1.0, 0).to_bytes()
        with pytest.raises(ValueError, match="magic"):
            Dictionary.from_bytes(b"XXXX" + raw[4:])
        with pytest.raises(ValueError, match="size"):
            Dictionary.from_bytes(raw[:-8])

    def test_inconsistent_atoms(self):
        with pytest.raises(ValueError):
            Dictionary([Atom(np.zeros((2, 2)), np.ones((2, 2)) / 2), Atom(np.zeros((3, 2)), np.ones((3, 2)) / 2)])


class TestClientDataset:
    def test_target_rejects_labels(self):
        with pytest.raises(ValueError):
            ClientDataset(np.zeros((2, 2)), np.eye(2), role="target")

    def test_source_needs_one_hot(self):
        with pytest.raises(ValueError):
            ClientDataset(np.zeros((2, 2)), np.full((2, 2), 0.5))
        with pytest.raises(ValueError):
            ClientDataset(np.zeros((2, 2)))


def make_client(rng, n=40, labeled=True):
    X = rng.normal(size=(n, 2))
    if labeled:
        return ClientDataset(X, np.eye(3)[rng.integers(3, size=n)])
    return ClientDataset(X, role="target")


class TestClientUpdate:
    def test_zero_lr_leaves_dictionary(self, rng):
        D = init_dictionary(2, 8, 2, 3, 1.0, rng)
        res = client_update(D, [0.5, 0.5], make_client(rng), epochs=3, lr=0.0,
                            cfg=LossConfig(batch_size=8), rng=1)
        assert res.dictionary.equals(D)
        np.testing.assert_array_equal(res.alpha, [0.5, 0.5])
        assert res.losses.shape == (3, 5)

    def test_does_not_mutate_input(self, rng):
        D = init_dictionary(2, 8, 2, 3, 1.0, rng)
        before = D.copy()
        client_update(D, [0.5, 0.5], make_client(rng), lr=1.0, cfg=LossConfig(batch_size=8), rng=1)
        assert D.equals(before)

    def test_seeded_determinism(self, rng):
        D = init_dictionary(2, 8, 2, 3, 1.0, rng)
        data = make_client(rng)
        a = client_update(D, [0.5, 0.5], data, epochs=2, lr=1.0, cfg=LossConfig(batch_size=8), rng=3)
        b = client_update(D, [0.5, 0.5], data, epochs=2, lr=1.0, cfg=LossConfig(batch_size=8), rng=3)
        assert a.dictionary.equals(b.dictionary)
        np.testing.assert_array_equal(a.alpha, b.alpha)
        np.testing.assert_array_equal(a.losses, b.losses)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_iterates_stay_feasible(self, seed, labeled):
        rng = np.random.default_rng(seed)
        D = init_dictionary(3, 6, 2, 3, 1.0, rng)
        res = client_update(D, rng.dirichlet(np.ones(3)), make_client(rng, 20, labeled), epochs=2,
                            lr=2.0, alpha_lr=0.5, cfg=LossConfig(beta=1.0, batch_size=6), rng=rng)
        assert res.alpha.min() >= 0 and res.alpha.sum() == pytest.approx(1.0, abs=1e-12)
        for a in res.dictionary.atoms:
            assert a.labels.min() >= 0
            np.testing.assert_allclose(a.labels.sum(1), 1.0, atol=1e-9)

    def test_training_reduces_full_data_loss(self, rng):
        data = make_client(rng, 32)
        D = init_dictionary(1, 32, 2, 3, 1.0, rng)
        cfg = LossConfig(beta=1.0, batch_size=32)
        before = local_loss(data.features, data.labels, [1.0], D, cfg)
        res = client_update(D, [1.0], data, epochs=30, lr=2.0, cfg=cfg, rng=0)
        after = local_loss(data.features, data.labels, [1.0], res.dictionary, cfg)
        assert after < 0.1 * before

    def test_rejects_bad_arguments(self, rng):
        D = init_dictionary(1, 4, 2, 3, 1.0, rng)
        with pytest.raises(ValueError):
            client_update(D, [1.0], make_client(rng), epochs=0)
        with pytest.raises(ValueError):
            client_update(D, [1.0], make_client(rng), lr=-1.0)


def test_dil_loss_is_mean_of_client_losses(rng):
    D = init_dictionary(2, 10, 2, 3, 1.0, rng)
    datasets = [make_client(rng, 10), make_client(rng, 10, labeled=False)]
    alphas = [np.array([0.3, 0.7]), np.array([0.6, 0.4])]
    cfg = LossConfig(barycenter=BarycenterConfig(beta=1.0), beta=1.0)
    expected = np.mean([local_loss(d.features, d.labels, a, D, cfg) for d, a in zip(datasets, alphas)])
    assert dil_loss(datasets, alphas, D, cfg) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        dil_loss(datasets, alphas[:1], D, cfg)
