import warnings

import numpy as np
import pytest

from crowdflux.codebook import (Dictionary, GroupDictionary, OnlineCodebook, TrainingParams, WordPool,
                                classify_word, classify_words, deposit_word, dumps_model, global_update,
                                gradient_step, least_squares_code, loads_model, local_update, pool_loss,
                                refine_dictionary, train_group)
from crowdflux.errors import CoverageWarning, InsufficientWords, ModelMismatch, PoolNotReady, TokenMismatch
from crowdflux.features import VisualWord


def random_dictionary(rng, T=20, d=5, id=0):
    return Dictionary(rng.standard_normal((T, d)), id)


def subspace_words(rng, basis, n, noise=0.01):
    return basis @ rng.standard_normal((basis.shape[1], n)) + noise * rng.standard_normal((basis.shape[0], n))


def test_atoms_are_normalized_and_frozen(rng):
    D = random_dictionary(rng)
    assert np.allclose(np.linalg.norm(D.atoms, axis=0), 1.0)
    with pytest.raises(ValueError):
        D.atoms[0, 0] = 1.0
    with pytest.raises(ValueError):
        Dictionary(np.ones((4, 2)) * 2.0, normalize=False)


def test_least_squares_matches_lstsq(rng):
    D = random_dictionary(rng, 30, 10)
    x = rng.standard_normal(30)
    code = least_squares_code(x, D)
    beta, *_ = np.linalg.lstsq(D.atoms, x, rcond=None)
    assert np.allclose(code.beta, beta)
    assert code.error == pytest.approx(np.linalg.norm(x - D.atoms @ beta))


def test_word_in_span_reconstructs_exactly(rng):
    D = random_dictionary(rng)
    x = D.atoms @ rng.standard_normal(D.d)
    assert least_squares_code(x, D).error < 1e-10


def test_orthogonal_word_is_abnormal(rng):
    dicts = [random_dictionary(rng, 20, 4, i) for i in range(3)]
    group = GroupDictionary(dicts, 0.1)
    # Gram-Schmidt a random vector against every atom of every dictionary
    basis = np.linalg.qr(np.hstack([D.atoms for D in dicts]))[0]
    x = rng.standard_normal(20)
    x -= basis @ (basis.T @ x)
    x *= 0.5 / np.linalg.norm(x)
    res = classify_word(x, group)
    assert not res.normal and res.label == "Abnormal"
    assert res.error == pytest.approx(0.5)
    # scaled below lambda it passes under the first dictionary
    small = classify_word(x * 0.1, group)
    assert small.normal and small.dictionary_id == 0 and small.overlap


def test_first_passing_dictionary_wins(rng):
    a = np.eye(6)[:, :2]
    b = np.eye(6)[:, 2:4]
    group = GroupDictionary([Dictionary(a, 0), Dictionary(b, 1)], 0.1)
    res = classify_words([[0, 0, 1, 1, 0, 0], [1, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 1]], group)
    assert [(r.normal, r.dictionary_id, r.overlap) for r in res] == [(True, 1, False), (True, 0, False),
                                                                     (False, None, False)]
    assert res[2].error == pytest.approx(1.0)


def test_two_subspaces_train_two_dictionaries(rng):
    basis = np.linalg.qr(rng.standard_normal((20, 10)))[0]
    X = np.hstack([subspace_words(rng, basis[:, :5], 200), subspace_words(rng, basis[:, 5:], 200)]).T
    group = train_group(X, lam=0.1, d=5, seed=3)
    assert group.s == 2
    res = classify_words(X, group)
    assert np.mean([r.normal for r in res]) >= 0.99
    # each dictionary spans one of the planted subspaces
    for D in group.dictionaries:
        energy = np.linalg.norm(basis[:, :5].T @ D.atoms, axis=0)
        assert np.all(energy > 0.99) or np.all(energy < 0.1)


def test_training_is_deterministic(rng):
    X = rng.random((60, 20))
    a = train_group(X, lam=1.0, d=3, seed=9)
    b = train_group(X, lam=1.0, d=3, seed=9)
    assert dumps_model(a) == dumps_model(b)


def test_training_guards(rng):
    with pytest.raises(InsufficientWords):
        train_group(rng.random((3, 20)), d=5)
    with pytest.raises(ValueError):
        train_group(rng.random((30, 8)), d=5)
    with pytest.raises(ValueError):
        train_group(rng.random((30, 20)), lam=0.0, d=5)


def test_coverage_warning_when_s_max_reached(rng):
    basis = np.linalg.qr(rng.standard_normal((20, 6)))[0]
    X = np.hstack([subspace_words(rng, basis[:, 2 * i:2 * i + 2], 40, 0.0) for i in range(3)]).T
    with pytest.warns(CoverageWarning):
        g = train_group(X, lam=0.01, d=2, s_max=2)
    assert g.s == 2 and g.uncovered > 0


def test_local_update_descends_and_drains(rng):
    D = random_dictionary(rng, 20, 4, id=2)
    pool = WordPool(2, 30)
    for x in rng.standard_normal((30, 20)):
        deposit_word(pool, VisualWord(x, token=2))
    X = pool.matrix()
    new = local_update(D, pool, delta=1e-3, passes=3)
    assert pool_loss(new, X) <= pool_loss(D, X)
    assert len(pool) == 0 and new.id == 2
    assert np.allclose(np.linalg.norm(new.atoms, axis=0), 1.0)


def test_gradient_step_matches_numeric_gradient(rng):
    D = random_dictionary(rng, 10, 3)
    X = rng.standard_normal((15, 10))
    beta, _ = D.code(X)
    # loss with codes held fixed, differentiated numerically in one atom entry
    def loss(A):
        return np.sum((X - beta @ A.T) ** 2)
    h = 1e-6
    A = D.atoms.copy()
    E = np.zeros_like(A)
    E[4, 1] = h
    numeric = (loss(A + E) - loss(A - E)) / (2 * h)
    analytic = (-2.0 * (X - beta @ A.T).T @ beta)[4, 1]
    assert analytic == pytest.approx(numeric, rel=1e-5)
    step = gradient_step(D, X, 1e-4)
    assert np.allclose(np.linalg.norm(step.atoms, axis=0), 1.0)


def test_refine_never_increases_loss_even_for_big_steps(rng):
    D = random_dictionary(rng, 10, 3)
    X = 50 * rng.standard_normal((40, 10))
    assert pool_loss(refine_dictionary(D, X, delta=10.0), X) <= pool_loss(D, X)


def test_pool_rules():
    pool = WordPool(1, 2)
    with pytest.raises(TokenMismatch):
        deposit_word(pool, VisualWord([1.0], token=0))
    assert not deposit_word(pool, VisualWord([1.0], token=1)).ready
    assert deposit_word(pool, VisualWord([2.0], token=1)).ready
    deposit_word(pool, VisualWord([3.0], token=1))
    assert [w.values[0] for w in pool.words] == [2.0, 3.0]
    with pytest.raises(ValueError):
        WordPool(0, 0)


def test_local_update_requires_full_pool(rng):
    D = random_dictionary(rng, 6, 2, id=0)
    with pytest.raises(PoolNotReady):
        local_update(D, WordPool(0, 5))
    with pytest.raises(TokenMismatch):
        local_update(D, WordPool(1, 5), force=True)


def test_global_update_needs_words(rng):
    group = GroupDictionary([random_dictionary(rng, 20, 5)], 0.1)
    pools = [WordPool(0, 10)]
    with pytest.raises(InsufficientWords):
        global_update(group, pools, TrainingParams(d=5))
    extra = [VisualWord(x) for x in rng.standard_normal((30, 20))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageWarning)
        new = global_update(group, pools, TrainingParams(d=5, lam=0.1), extra)
    assert new.lam == 0.1 and new.T == 20


def test_online_snapshot_swap_and_overlap_latch(rng):
    basis = np.linalg.qr(rng.standard_normal((20, 10)))[0]
    D0 = Dictionary(basis[:, :5], 0)
    D1 = Dictionary(basis[:, 3:8], 1)
    group = GroupDictionary([D0, D1], 0.1)
    online = OnlineCodebook(group, n_pool=3, params=TrainingParams(d=5, lam=0.1), min_global_words=0)
    only0 = VisualWord(basis[:, 0] * 2)
    online.absorb([only0], online.classify([only0]))
    assert not online.latched and len(online.pools[0]) == 1
    both = VisualWord(basis[:, 3])  # lies in both spans
    online.absorb([both], online.classify([both]))
    assert online.latched and online.stats.overlaps == 1
    tiny = VisualWord(basis[:, 9] * 0.01)  # passes everything trivially
    online.absorb([tiny], online.classify([tiny]))
    assert online.stats.overlaps == 1
    before = online.group
    online.maintain()
    # too few words for a global retrain: deferred, snapshot unchanged
    assert online.stats.deferred == 1 and online.group is before


def test_classify_identical_for_any_worker_count(rng):
    group = GroupDictionary([random_dictionary(rng, 20, 5, i) for i in range(4)], 1.5)
    words = [VisualWord(x) for x in rng.standard_normal((300, 20))]
    one = OnlineCodebook(group, 10, TrainingParams(d=5), workers=1).classify(words)
    many = OnlineCodebook(group, 10, TrainingParams(d=5), workers=4).classify(words)
    assert one == many


def test_model_text_roundtrip(rng):
    group = GroupDictionary([random_dictionary(rng, 8, 2, i) for i in range(3)], 0.07, {"seed": 4})
    text = dumps_model(group, {"b": 20, "T": 8})
    back, cfg = loads_model(text)
    assert cfg == {"T": "8", "b": "20"}
    assert back.lam == 0.07 and back.ids() == [0, 1, 2]
    assert all(np.array_equal(a.atoms, b.atoms) for a, b in zip(group.dictionaries, back.dictionaries))
    assert dumps_model(back, {"b": 20, "T": 8}) == text


def test_model_file_corruption():
    with pytest.raises(ModelMismatch):
        loads_model("something else\n")
    good = dumps_model(GroupDictionary([Dictionary(np.eye(4)[:, :2])], 0.1))
    with pytest.raises(ModelMismatch):
        loads_model(good.replace("end\n", ""))
