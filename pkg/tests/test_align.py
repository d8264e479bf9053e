import numpy as np
import pytest

from taxalign.align import (
    AlignError,
    AlignmentConfig,
    MappingMatrix,
    SeedDictionary,
    dictionary_from_codes,
    induce_dictionary,
    load_mapping,
    precision_at_1,
    prepare_spaces,
    procrustes_solve,
    profile_dictionary,
    refine,
    save_mapping,
    self_learn,
    vecmap_mapping,
    vecmap_transform,
)
from taxalign.embeddings import CategoryVectorSet, unit_rows

from helpers import random_orthogonal, rotated_clone


def identity_dict(n):
    return SeedDictionary(np.column_stack([np.arange(n), np.arange(n)]))


def truth_dict(truth, rows):
    rows = np.asarray(rows)
    return SeedDictionary(np.column_stack([rows, truth[rows]]))


class TestProcrustes:
    def test_identity(self):
        X = np.random.default_rng(0).normal(size=(30, 8))
        W = procrustes_solve(X, X, identity_dict(30)).W
        assert np.abs(W - np.eye(8)).max() <= 1e-10

    def test_rotation_recovery(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(100, 50))
        R = random_orthogonal(50, 12)
        m = procrustes_solve(X, X @ R.T, identity_dict(100))
        assert np.linalg.norm(m.W - R) <= 1e-6
        assert m.orthogonality_error() <= 1e-8

    def test_quarter_turn(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        Y = np.array([[0.0, 1.0], [-1.0, 0.0]])
        W = procrustes_solve(X, Y, identity_dict(2)).W
        np.testing.assert_allclose(W, [[0, -1], [1, 0]], atol=1e-12)

    def test_minimizes_among_orthogonal_maps(self):
        rng = np.random.default_rng(3)
        X, Y = rng.normal(size=(40, 5)), rng.normal(size=(40, 5))
        W = procrustes_solve(X, Y, identity_dict(40)).W
        best = np.linalg.norm(X @ W.T - Y)
        for s in range(200):
            Q = random_orthogonal(5, 100 + s)
            assert np.linalg.norm(X @ Q.T - Y) >= best - 1e-9

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        X, Y = rng.normal(size=(50, 6)), rng.normal(size=(50, 6))
        W1 = procrustes_solve(X, Y, identity_dict(50)).W
        W2 = procrustes_solve(7.5 * X, 7.5 * Y, identity_dict(50)).W
        assert np.abs(W1 - W2).max() <= 1e-8

    def test_weights(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(20, 4))
        R = random_orthogonal(4, 6)
        Y = X @ R.T
        Y[10:] = rng.normal(size=(10, 4))  # garbage pairs
        w = np.r_[np.ones(10), np.zeros(10)]
        d = SeedDictionary(identity_dict(20).pairs, weights=w)
        assert np.abs(procrustes_solve(X, Y, d).W - R).max() <= 1e-10

    def test_errors(self):
        X = np.eye(3)
        with pytest.raises(AlignError, match="empty"):
            procrustes_solve(X, X, SeedDictionary(np.zeros((0, 2))))
        with pytest.raises(AlignError, match="zero row"):
            procrustes_solve(np.zeros((3, 3)), X, identity_dict(3))
        with pytest.raises(AlignError, match="out of range"):
            procrustes_solve(X, X, SeedDictionary([[0, 5]]))


class TestVecmap:
    def test_identity_preserves_gram(self):
        X = np.random.default_rng(0).normal(size=(25, 6))
        Xp, Yp = vecmap_transform(X, X, identity_dict(25))
        G = lambda A: unit_rows(A) @ unit_rows(A).T  # noqa: E731
        assert np.abs(G(Xp) - G(X)).max() <= 1e-8
        assert np.abs(G(Xp) - G(Yp)).max() <= 1e-8

    def test_rotated_clone_improves_pair_cosine(self):
        X, Y, _, truth = rotated_clone(300, 20, 0.01, seed=2)
        d = truth_dict(truth, np.arange(300))
        before = np.mean(np.sum(unit_rows(X) * unit_rows(Y[truth]), axis=1))
        Xp, Yp = vecmap_transform(X, Y, d)
        after = np.mean(np.sum(unit_rows(Xp) * unit_rows(Yp[truth]), axis=1))
        assert after >= before
        assert after > 0.99

    def test_single_pair_rank_one(self):
        rng = np.random.default_rng(8)
        X, Y = rng.normal(size=(10, 5)), rng.normal(size=(12, 5))
        Xp, Yp = vecmap_transform(X, Y, SeedDictionary([[3, 7]]))
        x, y = Xp[3], Yp[7]
        assert x @ y / np.linalg.norm(x) / np.linalg.norm(y) == pytest.approx(1.0, abs=1e-8)

    def test_equivalent_single_mapping(self):
        X, Y, _, truth = rotated_clone(100, 8, 0.05, seed=3)
        d = truth_dict(truth, np.arange(0, 100, 3))
        Xp, Yp = vecmap_transform(X, Y, d)
        W = vecmap_mapping(X, Y, d)
        assert W.orthogonality_error() <= 1e-8
        # inner products agree: <X U, Y V> = <W x, y>
        np.testing.assert_allclose(Xp @ Yp.T, W.apply(X) @ Y.T, atol=1e-9)


class TestInduce:
    def test_identity_mutual(self):
        X = np.random.default_rng(0).normal(size=(40, 6))
        d = induce_dictionary(X, X, "cosine", "mutual")
        np.testing.assert_array_equal(d.pairs, identity_dict(40).pairs)

    def test_tie_lowest_target(self):
        Y = np.zeros((8, 2))
        Y[:] = [0.0, -1.0]
        Y[3] = [1.0, 1.0]
        Y[7] = [1.0, 1.0]
        d = induce_dictionary(np.array([[1.0, 1.0]]), Y, "cosine", "forward")
        assert d.pairs.tolist() == [[0, 3]]

    def test_zero_rows_excluded(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0]])
        Y = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.1]])
        d = induce_dictionary(X, Y, "cosine", "forward", k=1)
        assert d.pairs.tolist() == [[1, 2]]

    def test_no_usable_rows(self):
        with pytest.raises(AlignError):
            induce_dictionary(np.zeros((3, 2)), np.ones((3, 2)))

    def test_csls_after_procrustes(self):
        X, Y, _, truth = rotated_clone(500, 30, 0.01, seed=5)
        W = procrustes_solve(X, Y, truth_dict(truth, np.arange(500))).W
        d = induce_dictionary(X @ W.T, Y, "csls", "forward")
        assert np.mean(d.tgt == truth[d.src]) >= 0.99

    def test_mutual_subset_of_forward(self):
        rng = np.random.default_rng(9)
        X, Y = rng.normal(size=(60, 5)), rng.normal(size=(50, 5))
        fwd = {tuple(p) for p in induce_dictionary(X, Y, "csls", "forward", k=5).pairs}
        mut = {tuple(p) for p in induce_dictionary(X, Y, "csls", "mutual", k=5).pairs}
        assert mut <= fwd and len(mut) < len(fwd)


class TestRefine:
    def test_fixed_point(self):
        X = np.random.default_rng(1).normal(size=(200, 10))
        seed = identity_dict(20)
        m = refine(X, X, seed, AlignmentConfig())
        assert np.abs(m.W - np.eye(10)).max() <= 1e-6
        assert m.iterations == 2  # second round brings no improvement
        assert m.meta["best_round"] == "1"

    def test_one_iteration(self):
        X, Y, _, truth = rotated_clone(200, 10, 0.01, seed=2)
        m = refine(X, Y, truth_dict(truth, np.arange(20)), AlignmentConfig(refinement_iterations=1))
        assert m.iterations == 1 and len(m.history) == 1

    def test_ten_percent_seed(self):
        X, Y, _, truth = rotated_clone(2000, 50, 0.01, seed=0)
        seed_rows = np.arange(0, 2000, 10)
        m = refine(X, Y, truth_dict(truth, seed_rows), AlignmentConfig())
        held = np.setdiff1d(np.arange(2000), seed_rows)
        assert precision_at_1(m.apply(X), Y, truth, rows=held) >= 0.95
        assert m.orthogonality_error() <= 1e-8

    def test_full_dictionary_never_degrades(self):
        X, Y, _, truth = rotated_clone(400, 20, 0.05, seed=7)
        full = truth_dict(truth, np.arange(400))
        p_round1 = precision_at_1(procrustes_solve(X, Y, full).apply(X), Y, truth)
        p_refined = precision_at_1(refine(X, Y, full).apply(X), Y, truth)
        assert p_refined >= p_round1

    def test_config_validation(self):
        with pytest.raises(AlignError):
            AlignmentConfig(refinement_iterations=0)
        with pytest.raises(AlignError):
            AlignmentConfig(csls_k=0)


class TestSelfLearn:
    def test_identical_spaces(self):
        X = np.random.default_rng(3).normal(size=(300, 20))
        cfg = AlignmentConfig()
        Xp, Yp = prepare_spaces(X, X, cfg)
        m = self_learn(Xp, Yp, cfg)
        assert precision_at_1(m.apply(Xp), Yp, np.arange(300)) == 1.0

    def test_noisy_clone(self):
        X, Y, _, truth = rotated_clone(600, 30, 0.01, seed=4)
        cfg = AlignmentConfig()
        Xp, Yp = prepare_spaces(X, Y, cfg)
        m = self_learn(Xp, Yp, cfg)
        assert precision_at_1(m.apply(Xp), Yp, truth) >= 0.9
        assert m.method == "self-learn"
        assert m.orthogonality_error() <= 1e-8

    def test_profile_dictionary_on_clone(self):
        X, Y, _, truth = rotated_clone(300, 10, 0.01, seed=6)
        d = profile_dictionary(X, Y)
        assert np.mean(d.tgt == truth[d.src]) > 0.9

    def test_too_few_rows(self):
        X = np.random.default_rng(0).normal(size=(15, 4))
        with pytest.raises(AlignError, match="at least 20"):
            self_learn(X, X, AlignmentConfig())

    def test_deterministic(self):
        X, Y, _, _ = rotated_clone(200, 10, 0.2, seed=9)
        cfg = AlignmentConfig(seed=5)
        a, b = self_learn(X, Y, cfg), self_learn(X, Y, cfg)
        assert np.array_equal(a.W, b.W) and a.history == b.history

    def test_workers_do_not_change_results(self):
        X, Y, _, _ = rotated_clone(1200, 10, 0.2, seed=9)
        a = self_learn(X, Y, AlignmentConfig(workers=1))
        b = self_learn(X, Y, AlignmentConfig(workers=4))
        assert np.array_equal(a.W, b.W)


class TestMappingIO:
    def test_round_trip(self, tmp_path):
        m = MappingMatrix(random_orthogonal(4, 0), "refine", 3, [0.1, 0.25, 0.3], {"best_round": "3"})
        save_mapping(m, tmp_path / "w.tsv")
        back = load_mapping(tmp_path / "w.tsv")
        assert np.array_equal(back.W, m.W)
        assert back.method == "refine" and back.iterations == 3
        assert back.history == m.history and back.meta["best_round"] == "3"

    def test_dictionary_from_codes(self):
        xs = CategoryVectorSet("a", ["1", "2", "3"], np.array([[1.0, 0], [0, 1], [0, 0]]),
                               [True, True, False])
        yt = CategoryVectorSet("b", ["x", "y"], np.eye(2), [True, True])
        d = dictionary_from_codes([("1", "y"), ("3", "x"), ("9", "x"), ("2", "x")], xs, yt)
        assert d.pairs.tolist() == [[0, 1], [1, 0]]
        with pytest.raises(AlignError):
            dictionary_from_codes([("9", "x")], xs, yt)
