import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ifkit.data import Dataset, read_csv
from ifkit.errors import EmptyData, GridEmpty, KTooLarge, LearnerSpecError, UnknownVariable
from ifkit.nuisance import (
    LearnerSpec,
    clamp,
    fit_density,
    fit_histogram,
    fit_kernel_regression,
    fit_knn,
    fold_ids,
    parse_learner,
    select_tuning_cv,
    silverman,
)
from ifkit.simlab import get_dgp


def brute_knn(X, y, Q, k):
    """Reference k-NN on standardized features with ties to the lowest row."""
    X = np.atleast_2d(np.asarray(X, float).T).T
    Q = np.atleast_2d(np.asarray(Q, float).T).T
    mean, sd = X.mean(axis=0), X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Xs, Qs = (X - mean) / sd, (Q - mean) / sd
    out = []
    for q in Qs:
        d = [(float(np.sum((q - xi) ** 2)), i) for i, xi in enumerate(Xs)]
        d.sort()
        out.append(np.mean([y[i] for _, i in d[:k]]))
    return np.array(out)


class TestKNN:
    def test_global_mean_when_k_is_n(self):
        fit = fit_knn((np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 1.0])), k=3)
        np.testing.assert_allclose(fit([-5.0, 0.3, 9.0]), 2 / 3, rtol=0, atol=1e-15)

    def test_k1_at_training_point(self, rng):
        X = rng.normal(size=(50, 2))
        y = rng.normal(size=50)
        fit = fit_knn((X, y), k=1)
        assert np.array_equal(fit(X), y)

    @given(st.floats(-100, 100), st.integers(1, 20), st.floats(-10, 10))
    def test_constant_targets(self, c, k, q):
        X = np.linspace(0, 1, 20)
        assert np.all(fit_knn((X, np.full(20, c)), k=k)([q]) == c)

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            fit_knn((np.zeros(3), np.zeros(3)), k=4)
        with pytest.raises(KTooLarge):
            fit_knn((np.zeros(3), np.zeros(3)), k=0)

    def test_empty(self):
        with pytest.raises(EmptyData):
            fit_knn((np.zeros((0, 1)), np.zeros(0)), k=1)

    def test_dataset_roles(self):
        d = Dataset(x=np.array([0.0, 1.0, 2.0, 3.0]), a=[0, 1, 0, 1], y=[1.0, 2.0, 3.0, 4.0])
        fit = fit_knn(d, target="y", features=("x", "a"), k=1)
        assert fit([[2.0, 0.0]])[0] == 3.0

    @given(
        arrays(np.float64, st.integers(2, 40), elements=st.integers(-5, 5).map(float)),
        st.data(),
    )
    def test_matches_brute_force_with_ties(self, X, data):
        n = X.shape[0]
        y = np.arange(n, dtype=float) ** 1.5
        k = data.draw(st.integers(1, n))
        Q = np.linspace(-6, 6, 25)
        np.testing.assert_allclose(fit_knn((X, y), k=k)(Q), brute_knn(X, y, Q, k), rtol=0, atol=1e-9)

    def test_matches_brute_force_distinct_1d(self, rng):
        X = rng.uniform(size=300)
        y = rng.normal(size=300)
        Q = rng.uniform(-0.2, 1.2, size=100)
        for k in (1, 7, 64, 300):
            np.testing.assert_allclose(fit_knn((X, y), k=k)(Q), brute_knn(X, y, Q, k), rtol=0, atol=1e-12)

    def test_matches_brute_force_2d(self, rng):
        X = rng.normal(size=(120, 2)) * [1.0, 30.0]
        y = rng.normal(size=120)
        Q = rng.normal(size=(40, 2)) * [1.0, 30.0]
        np.testing.assert_allclose(fit_knn((X, y), k=9)(Q), brute_knn(X, y, Q, 9), rtol=0, atol=1e-12)

    @given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)), st.data())
    def test_convex_combination(self, y, data):
        n = y.shape[0]
        X = np.arange(n, dtype=float)
        k = data.draw(st.integers(1, n))
        pred = fit_knn((X, y), k=k)(np.linspace(-3, n + 3, 17))
        assert np.all(pred >= y.min()) and np.all(pred <= y.max())

    def test_deterministic(self, rng):
        X, y = rng.normal(size=200), rng.normal(size=200)
        Q = rng.normal(size=50)
        a = fit_knn((X, y), k=11)(Q)
        b = fit_knn((X.copy(), y.copy()), k=11)(Q)
        assert a.tobytes() == b.tobytes()


class TestKernelRegression:
    def test_constant_targets(self, rng):
        fit = fit_kernel_regression((rng.normal(size=30), np.full(30, 2.5)), bandwidth=0.3)
        np.testing.assert_allclose(fit(rng.normal(size=10)), 2.5, rtol=0, atol=1e-14)

    def test_flat_weights_limit(self, rng):
        X, y = rng.normal(size=40), rng.normal(size=40)
        np.testing.assert_allclose(fit_kernel_regression((X, y), bandwidth=1e6)([-3.0, 0.0, 3.0]), y.mean(), atol=1e-6)

    def test_single_point(self):
        fit = fit_kernel_regression((np.array([0.4]), np.array([7.0])), bandwidth=0.1)
        assert np.all(fit([-100.0, 0.4, 55.0]) == 7.0)

    def test_underflow_falls_back_to_nearest(self):
        X = np.array([0.0, 1.0, 2.0])
        y = np.array([5.0, 6.0, 7.0])
        # far outside the data every gaussian weight underflows
        assert fit_kernel_regression((X, y), bandwidth=1e-3)([1e4])[0] == 7.0

    def test_matches_direct_formula(self, rng):
        X, y = rng.uniform(size=25), rng.normal(size=25)
        h = 0.2
        mean, sd = X.mean(), X.std()
        q = 0.37
        w = np.exp(-0.5 * (((q - mean) / sd - (X - mean) / sd) / h) ** 2)
        assert fit_kernel_regression((X, y), bandwidth=h)([q])[0] == pytest.approx(np.sum(w * y) / np.sum(w), abs=1e-12)


class TestHistogram:
    def test_cell_means_and_empty_cell(self):
        X = np.array([0.05, 0.07, 0.15, 0.95])
        y = np.array([1.0, 3.0, 10.0, 4.0])
        fit = fit_histogram((X, y), width=0.1)
        np.testing.assert_allclose(fit([0.01, 0.12, 0.99, 0.55]), [2.0, 10.0, 4.0, y.mean()], atol=1e-14)


class TestDensity:
    def test_single_bump(self):
        assert fit_density(np.array([0.0]), bandwidth=1.0)([0.0])[0] == pytest.approx(1 / np.sqrt(2 * np.pi), abs=1e-15)

    def test_integrates_to_one(self, rng):
        fit = fit_density(rng.normal(size=300))
        assert abs(fit.total_mass() - 1.0) <= 0.02
        assert len(fit.grid()) == 2048
        assert fit.lo == pytest.approx(fit.points.min() - 4 * fit.bandwidth)

    def test_symmetric_pair(self):
        fit = fit_density(np.array([-1.0, 1.0]), bandwidth=1.0)
        t = np.linspace(0, 5, 51)
        np.testing.assert_allclose(fit(t), fit(-t), rtol=0, atol=1e-12)

    def test_nonnegative(self, rng):
        fit = fit_density(rng.standard_cauchy(size=50), bandwidth=0.2)
        assert np.all(fit(np.linspace(-50, 50, 500)) >= 0)

    def test_silverman(self, rng):
        z = rng.normal(size=100)
        assert silverman(z) == pytest.approx(1.06 * np.std(z, ddof=1) * 100 ** -0.2)

    def test_errors(self):
        with pytest.raises(EmptyData):
            fit_density(np.zeros(0), bandwidth=1.0)
        with pytest.raises(ValueError):
            fit_density(np.zeros(3), bandwidth=-1.0)


class TestClamp:
    def test_examples(self):
        fit = clamp(fit_knn((np.array([0.0, 1.0, 2.0]), np.array([0.001, 0.5, 1.2])), k=1), 0.01, 0.99)
        np.testing.assert_array_equal(fit([0.0, 1.0, 2.0]), [0.01, 0.5, 0.99])
        assert fit.clamp_events == 2

    def test_bad_range(self):
        with pytest.raises(ValueError):
            clamp(fit_knn((np.zeros(2), np.zeros(2)), k=1), 0.5, 0.5)


class TestTuning:
    def test_constant_targets_pick_smoothest(self, rng):
        X = rng.uniform(size=100)
        assert select_tuning_cv((X, np.ones(100)), "knn", [1, 5, 25], folds=5, seed=0) == 25
        assert select_tuning_cv((X, np.ones(100)), "nw", [0.01, 0.1, 1.0], folds=5, seed=0) == 1.0

    def test_single_value_grid(self, rng):
        X, y = rng.uniform(size=50), rng.normal(size=50)
        assert select_tuning_cv((X, y), "hist", [0.3], folds=5, seed=1) == 0.3

    def test_noiseless_line_prefers_k1(self):
        n = 200
        X = np.linspace(0, 1, n)
        y = X.copy()
        train_size = n - n // 5
        ids = fold_ids(n, 5, 3)
        mse = {}
        for k in (1, train_size):
            sse = 0.0
            for f in range(5):
                tr, te = ids != f, ids == f
                sse += np.sum((brute_knn(X[tr], y[tr], X[te], k) - y[te]) ** 2)
            mse[k] = sse / n
        assert mse[1] < mse[train_size]
        assert select_tuning_cv((X, y), "knn", [1, train_size], folds=5, seed=3) == 1
        # k = n is infeasible on a training split, leaving k = 1
        assert select_tuning_cv((X, y), "knn", [1, n], folds=5, seed=3) == 1

    def test_grid_empty(self, rng):
        X, y = rng.uniform(size=20), rng.normal(size=20)
        with pytest.raises(GridEmpty):
            select_tuning_cv((X, y), "knn", [], folds=5, seed=0)
        with pytest.raises(GridEmpty):
            select_tuning_cv((X, y), "knn", [100], folds=5, seed=0)

    def test_fold_ids_balanced(self):
        ids = fold_ids(103, 5, 9)
        counts = np.bincount(ids)
        assert counts.max() - counts.min() <= 1

    def test_consistency_on_smooth_dgp(self):
        dgp = get_dgp("ate-smooth-1d")
        fresh = dgp.sample(20000, 999).x[:, 0]
        spec = parse_learner("knn(cv=5, grid=[5, 10, 25, 50, 100, 200])")
        errors = []
        for n in (500, 2000, 8000):
            # Monte Carlo average over replications; single draws are too noisy to order
            reps = []
            for seed in range(10):
                d = dgp.sample(n, seed)
                treated = d.a == 1
                fit = spec.fit(d.x[treated], d.y[treated], seed=0)
                reps.append(float(np.sqrt(np.mean((fit(fresh) - fresh ** 2) ** 2))))
            errors.append(np.mean(reps))
        assert errors[0] > errors[1] > errors[2]


class TestLearnerSpec:
    @pytest.mark.parametrize(
        "text, canonical",
        [
            ("knn(k=5)", "knn(k=5)"),
            ("knn(grid=[5, 10], cv=5)", "knn(cv=5, grid=[5, 10])"),
            ("nw(h=0.1)", "nw(h=0.1)"),
            ("hist(w=0.25)", "hist(w=0.25)"),
            ("kde()", "kde(h=silverman)"),
            ("const(0.5)", "const(0.5)"),
            ("oracle", "oracle"),
        ],
    )
    def test_canonical_text(self, text, canonical):
        spec = parse_learner(text)
        assert str(spec) == canonical
        assert parse_learner(str(spec)) == spec

    @pytest.mark.parametrize(
        "text",
        ["forest(n=3)", "knn(k=2.5)", "knn(k=3, cv=5, grid=[1])", "knn(cv=5)", "nw()", "knn(5)", "knn(k=", "const()"],
    )
    def test_rejected(self, text):
        with pytest.raises(LearnerSpecError):
            parse_learner(text)

    def test_empty_grid(self):
        with pytest.raises(GridEmpty):
            parse_learner("knn(cv=5, grid=[])")

    def test_fit_dispatch(self, rng):
        X, y = rng.uniform(size=60), rng.normal(size=60)
        assert parse_learner("knn(k=3)").fit(X, y).tuning == 3
        assert parse_learner("const(0.2)").fit(X, y)(X[:3]).tolist() == [0.2] * 3
        with pytest.raises(LearnerSpecError):
            LearnerSpec("oracle").fit(X, y)


class TestDataset:
    def test_csv_round_trip(self, tmp_path, rng):
        d = Dataset(x=rng.normal(size=(7, 2)), a=rng.integers(0, 2, 7), y=rng.normal(size=7))
        path = tmp_path / "d.csv"
        d.to_csv(path)
        assert read_csv(path) == d
        assert d.to_csv().splitlines()[0] == "x1,x2,a,y"

    def test_second_stage_columns(self):
        d = Dataset(x=[0.0, 1.0], a=[1, 1], x2=[1.0, 0.0], a2=[0, 1], y=[0.0, 1.0])
        assert read_csv(io.StringIO(d.to_csv())) == d

    def test_errors(self):
        with pytest.raises(EmptyData):
            read_csv(io.StringIO("x1,y\n"))
        with pytest.raises(ValueError):
            Dataset(x=[0.0, np.nan])
        with pytest.raises(ValueError):
            Dataset(x=[0.0, 1.0], y=[1.0])
        with pytest.raises(ValueError):
            read_csv(io.StringIO("x1,a\n0.5,0.5\n"))
        with pytest.raises(UnknownVariable):
            Dataset(x=[0.0]).role("y")
