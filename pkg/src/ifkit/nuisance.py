"""Nonparametric nuisance learners: k-NN, Nadaraya-Watson, histogram, gaussian KDE.

Distance-based learners work on standardized features (training mean and
standard deviation; constant features are left unscaled).  Every learner is
deterministic given its inputs.

Learners are described by short specification strings::

    knn(k=25)            knn(cv=5, grid=[5, 10, 25, 50, 100])
    nw(h=0.1)            nw(cv=5, grid=[0.05, 0.1, 0.2])
    hist(w=0.5)          kde(h=silverman)      kde(h=0.3)
    const(0.5)           oracle
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import Dataset
from .errors import EmptyData, GridEmpty, KTooLarge, LearnerSpecError

KDE_GRID_POINTS = 2048
NW_UNDERFLOW = 1e-300
_CHUNK = 256


def _standardizer(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _sqdist(Q, X):
    """Exact squared Euclidean distances, accumulated per feature."""
    D = np.zeros((Q.shape[0], X.shape[0]))
    for j in range(X.shape[1]):
        diff = Q[:, j, None] - X[None, :, j]
        D += diff * diff
    return D


class _KNN:
    """k-NN regression with ties on distance broken by lowest training row."""

    def __init__(self, X, y):
        X, y = _as_2d(X), np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise EmptyData("no training rows")
        self.mean, self.scale = _standardizer(X)
        self.X = (X - self.mean) / self.scale
        self.y = y
        self.n = X.shape[0]
        self.sorted = None
        if X.shape[1] == 1:
            order = np.argsort(self.X[:, 0], kind="stable")
            xs = self.X[order, 0]
            if np.all(np.diff(xs) > 0):
                self.sorted = (xs, y[order], order)

    def _check(self, k):
        if not 1 <= k <= self.n:
            raise KTooLarge(f"k={k} needs 1 <= k <= {self.n} training rows")

    def predict_many(self, Q, ks) -> np.ndarray:
        """Predictions for several k at once; rows follow ``ks``."""
        ks = [int(k) for k in ks]
        for k in ks:
            self._check(k)
        Q = (_as_2d(Q) - self.mean) / self.scale
        out = np.empty((len(ks), Q.shape[0]))
        if self.sorted is not None:
            self._window(Q[:, 0], ks, out)
        else:
            self._brute(Q, ks, out)
        return out

    def predict(self, Q, k) -> np.ndarray:
        return self.predict_many(Q, [k])[0]

    def _window(self, q, ks, out):
        # the k nearest neighbours of a 1-d query are a contiguous run of the sorted
        # training set; binary-search its left edge, then average with prefix sums
        xs, ys, ids = self.sorted
        n = len(xs)
        offset = ys[0]  # keeps constant targets exact
        csum = np.concatenate([[0.0], np.cumsum(ys - offset)])
        pos = np.searchsorted(xs, q, side="left")
        for i, k in enumerate(ks):
            lo = np.maximum(pos - k, 0)
            hi = np.minimum(pos, n - k)
            while np.any(lo < hi):
                mid = (lo + hi) // 2
                dl = q - xs[mid]
                dr = xs[np.minimum(mid + k, n - 1)] - q
                # move right when the element past the window beats the leftmost one
                right = (dr < dl) | ((dr == dl) & (ids[np.minimum(mid + k, n - 1)] < ids[mid]))
                active = lo < hi
                lo = np.where(active & right, mid + 1, lo)
                hi = np.where(active & ~right, mid, hi)
            pred = offset + (csum[lo + k] - csum[lo]) / k
            out[i] = np.clip(pred, ys.min(), ys.max())

    def _brute(self, Q, ks, out):
        kmax = max(ks)
        for s in range(0, Q.shape[0], _CHUNK):
            D = _sqdist(Q[s:s + _CHUNK], self.X)
            if len(ks) == 1:
                k = ks[0]
                kth = np.partition(D, k - 1, axis=1)[:, k - 1, None]
                less = D < kth
                tied = D == kth
                need = k - less.sum(axis=1, keepdims=True)
                take = less | (tied & (np.cumsum(tied, axis=1) <= need))
                out[0, s:s + _CHUNK] = (take * self.y).sum(axis=1) / k
            else:
                order = np.argsort(D, axis=1, kind="stable")[:, :kmax]
                cum = np.cumsum(self.y[order], axis=1)
                for i, k in enumerate(ks):
                    out[i, s:s + _CHUNK] = cum[:, k - 1] / k


class _NW:
    """Nadaraya-Watson regression with a gaussian kernel."""

    def __init__(self, X, y, h):
        if h <= 0:
            raise ValueError("bandwidth must be positive")
        X, y = _as_2d(X), np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise EmptyData("no training rows")
        self.mean, self.scale = _standardizer(X)
        self.X = (X - self.mean) / self.scale
        self.y = y
        self.h = float(h)
        self._raw = X
        self._knn = None

    def predict(self, Q) -> np.ndarray:
        Qs = (_as_2d(Q) - self.mean) / self.scale
        out = np.empty(Qs.shape[0])
        for s in range(0, Qs.shape[0], _CHUNK):
            W = np.exp(-_sqdist(Qs[s:s + _CHUNK], self.X) / (2.0 * self.h * self.h))
            den = W.sum(axis=1)
            num = W @ self.y
            ok = den >= NW_UNDERFLOW
            out[s:s + _CHUNK] = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
            if not np.all(ok):
                if self._knn is None:
                    self._knn = _KNN(self._raw, self.y)
                bad = np.flatnonzero(~ok) + s
                out[bad] = self._knn.predict(_as_2d(Q)[bad], 1)
        return out


class _Hist:
    """Cell means on a regular partition of width ``w`` in the raw feature scale."""

    def __init__(self, X, y, w):
        if w <= 0:
            raise ValueError("partition width must be positive")
        X, y = _as_2d(X), np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise EmptyData("no training rows")
        self.w = float(w)
        cells, inv = np.unique(np.floor(X / self.w).astype(np.int64), axis=0, return_inverse=True)
        inv = inv.ravel()
        self.cells = {tuple(c): i for i, c in enumerate(cells)}
        self.means = np.bincount(inv, weights=y) / np.bincount(inv)
        self.fallback = float(y.mean())

    def predict(self, Q) -> np.ndarray:
        keys = np.floor(_as_2d(Q) / self.w).astype(np.int64)
        idx = np.array([self.cells.get(tuple(k), -1) for k in keys], dtype=int)
        return np.where(idx >= 0, self.means[np.maximum(idx, 0)], self.fallback)


@dataclass(eq=False)
class RegressionFit:
    """A fitted regression, optionally clamped to ``[lo, hi]``.

    ``clamp_events`` counts predictions that fell outside the clamp range.
    """

    method: str
    tuning: object
    train_ids: np.ndarray
    model: object = field(repr=False)
    lo: Optional[float] = None
    hi: Optional[float] = None
    clamp_events: int = 0

    def raw(self, X) -> np.ndarray:
        X = _as_2d(X)
        if self.method == "knn":
            return self.model.predict(X, self.tuning)
        return self.model.predict(X)

    def predict(self, X) -> np.ndarray:
        v = self.raw(X)
        if self.lo is None and self.hi is None:
            return v
        lo = -np.inf if self.lo is None else self.lo
        hi = np.inf if self.hi is None else self.hi
        self.clamp_events += int(np.count_nonzero((v < lo) | (v > hi)))
        return np.clip(v, lo, hi)

    __call__ = predict


class _Const:
    def __init__(self, c):
        self.c = float(c)

    def predict(self, X):
        return np.full(_as_2d(X).shape[0], self.c)


class _Func:
    def __init__(self, fn):
        self.fn = fn

    def predict(self, X):
        return np.asarray(self.fn(_as_2d(X)), dtype=float)


def clamp(fit: RegressionFit, lo: float, hi: float) -> RegressionFit:
    """Same fit with predictions truncated to ``[lo, hi]`` (events are counted)."""
    if not lo < hi:
        raise ValueError("clamp needs lo < hi")
    return RegressionFit(fit.method, fit.tuning, fit.train_ids, fit.model, lo, hi)


def _xy(data, target, features):
    if isinstance(data, Dataset):
        return data.features(features), np.asarray(data.role(target), dtype=float)
    X, y = data
    return _as_2d(X), np.asarray(y, dtype=float)


def fit_knn(data, target="y", features=("x",), k: int = 1) -> RegressionFit:
    """k-NN regression of ``target`` on ``features``.

    ``data`` is a :class:`Dataset` (with role names) or an ``(X, y)`` pair.
    """
    X, y = _xy(data, target, features)
    model = _KNN(X, y)
    model._check(int(k))
    return RegressionFit("knn", int(k), np.arange(len(y)), model)


def fit_kernel_regression(data, target="y", features=("x",), bandwidth: float = 0.1) -> RegressionFit:
    X, y = _xy(data, target, features)
    return RegressionFit("nw", float(bandwidth), np.arange(len(y)), _NW(X, y, bandwidth))


def fit_histogram(data, target="y", features=("x",), width: float = 0.1) -> RegressionFit:
    X, y = _xy(data, target, features)
    return RegressionFit("hist", float(width), np.arange(len(y)), _Hist(X, y, width))


def constant_fit(c: float) -> RegressionFit:
    return RegressionFit("const", float(c), np.arange(0), _Const(c))


def function_fit(fn: Callable, name: str = "oracle") -> RegressionFit:
    return RegressionFit(name, None, np.arange(0), _Func(fn))


# density estimation
@dataclass(eq=False)
class DensityFit:
    """Gaussian KDE on a univariate sample.

    The support grid spans ``[min - 4h, max + 4h]`` with 2048 points and is
    used for trapezoid integrals.
    """

    points: np.ndarray = field(repr=False)
    bandwidth: float
    lo: float
    hi: float
    grid_size: int = KDE_GRID_POINTS

    def predict(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float).ravel()
        out = np.empty(t.shape[0])
        h = self.bandwidth
        c = 1.0 / (len(self.points) * h * np.sqrt(2.0 * np.pi))
        for s in range(0, t.shape[0], _CHUNK):
            u = (t[s:s + _CHUNK, None] - self.points[None, :]) / h
            out[s:s + _CHUNK] = c * np.exp(-0.5 * u * u).sum(axis=1)
        return out

    __call__ = predict

    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.grid_size)

    def total_mass(self) -> float:
        g = self.grid()
        return float(np.trapezoid(self.predict(g), g))

    def square_integral(self) -> float:
        """Trapezoid approximation of the integral of the squared density."""
        g = self.grid()
        return float(np.trapezoid(self.predict(g) ** 2, g))


def silverman(z) -> float:
    z = np.asarray(z, dtype=float).ravel()
    return 1.06 * float(np.std(z, ddof=1)) * len(z) ** (-0.2)


def fit_density(data, feature="x", bandwidth="silverman") -> DensityFit:
    """Gaussian KDE of a univariate feature (a role name or a raw array)."""
    z = data.features((feature,)) if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.ndim == 2:
        if z.shape[1] != 1:
            raise ValueError("density estimation needs a univariate feature")
        z = z[:, 0]
    if z.size == 0:
        raise EmptyData("no points for density estimation")
    h = silverman(z) if bandwidth == "silverman" else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    return DensityFit(z.copy(), h, float(z.min() - 4 * h), float(z.max() + 4 * h))


# tuning
def fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


def _cv_errors(X, y, kind, grid, folds, seed):
    ids = fold_ids(len(y), folds, seed)
    sse = np.zeros(len(grid))
    for f in range(folds):
        tr, te = ids != f, ids == f
        if not te.any():
            continue
        if kind == "knn":
            pred = _KNN(X[tr], y[tr]).predict_many(X[te], grid)
            sse += ((pred - y[te]) ** 2).sum(axis=1)
        else:
            for i, v in enumerate(grid):
                model = _NW(X[tr], y[tr], v) if kind == "nw" else _Hist(X[tr], y[tr], v)
                sse[i] += float(((model.predict(X[te]) - y[te]) ** 2).sum())
    return sse / len(y)


def select_tuning_cv(data, learner="knn", grid=(), folds: int = 5, seed: int = 0,
                     target="y", features=("x",)):
    """Grid value with the smallest cross-validated squared error.

    Ties (within 1e-12 of the larger of the best error and the mean squared
    target) go to the smoother setting, i.e. the larger value.
    For k-NN, values larger than the smallest training split are dropped.
    """
    kind = learner.kind if isinstance(learner, LearnerSpec) else str(learner)
    if kind not in ("knn", "nw", "hist"):
        raise LearnerSpecError(f"cross-validation is not available for {kind!r}")
    grid = sorted({int(g) if kind == "knn" else float(g) for g in grid})
    if not grid:
        raise GridEmpty("tuning grid is empty")
    if folds < 2:
        raise ValueError("need at least two folds")
    X, y = _xy(data, target, features)
    if len(y) < folds:
        raise EmptyData(f"{len(y)} rows cannot be split into {folds} folds")
    if kind == "knn":
        smallest = len(y) - int(np.ceil(len(y) / folds))
        grid = [k for k in grid if k <= smallest]
        if not grid:
            raise GridEmpty(f"every k exceeds the {smallest} rows available for training")
    if len(grid) == 1:
        return grid[0]
    mse = _cv_errors(X, y, kind, grid, folds, seed)
    best = mse.min()
    tol = 1e-12 * max(best, float(np.mean(y * y)))
    ok = [g for g, m in zip(grid, mse) if m <= best + tol]
    return max(ok)


# specification grammar
@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    params: tuple = ()

    @property
    def args(self) -> dict:
        return dict(self.params)

    def __str__(self):
        if self.kind == "oracle":
            return "oracle"
        if self.kind == "const":
            return f"const({_fmt_arg(self.args['c'])})"
        inner = ", ".join(f"{k}={_fmt_arg(v)}" for k, v in self.params)
        return f"{self.kind}({inner})"

    def fit(self, X, y, seed: int = 0, oracle: Optional[Callable] = None) -> RegressionFit:
        """Fit to arrays; ``oracle`` supplies the analytic function for ``oracle`` specs."""
        a = self.args
        X = _as_2d(X)
        y = np.asarray(y, dtype=float)
        if self.kind == "const":
            return constant_fit(a["c"])
        if self.kind == "oracle":
            if oracle is None:
                raise LearnerSpecError("an oracle learner needs analytic nuisances (a DGP)")
            return function_fit(oracle)
        if self.kind == "kde":
            raise LearnerSpecError("kde is a density learner")
        key = {"knn": "k", "nw": "h", "hist": "w"}[self.kind]
        value = a.get(key)
        if value is None:
            value = select_tuning_cv((X, y), self.kind, a["grid"], int(a["cv"]), seed)
        if self.kind == "knn":
            return fit_knn((X, y), k=int(value))
        if self.kind == "nw":
            return fit_kernel_regression((X, y), bandwidth=float(value))
        return fit_histogram((X, y), width=float(value))

    def fit_density(self, z, oracle=None):
        if self.kind == "oracle":
            if oracle is None:
                raise LearnerSpecError("an oracle learner needs analytic nuisances (a DGP)")
            return oracle
        if self.kind != "kde":
            raise LearnerSpecError(f"{self.kind!r} cannot estimate a density")
        return fit_density(z, bandwidth=self.args.get("h", "silverman"))


def _fmt_arg(v):
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_arg(u) for u in v) + "]"
    if isinstance(v, float) and v.is_integer():
        return str(v)
    return str(v)


_ALLOWED = {
    "knn": {"k", "cv", "grid"},
    "nw": {"h", "cv", "grid"},
    "hist": {"w", "cv", "grid"},
    "kde": {"h"},
    "const": {"c"},
}


def parse_learner(text) -> LearnerSpec:
    """Parse a learner specification string (see module docstring)."""
    if isinstance(text, LearnerSpec):
        return text
    src = str(text).strip()
    if src == "oracle":
        return LearnerSpec("oracle")
    try:
        node = ast.parse(src, mode="eval").body
    except SyntaxError as exc:
        raise LearnerSpecError(f"cannot parse learner {src!r}: {exc.msg}") from None
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED:
        raise LearnerSpecError(f"unknown learner {src!r}; expected one of {sorted(_ALLOWED)} or oracle")
    kind = node.func.id
    params = {}
    if node.args:
        if kind != "const" or len(node.args) != 1:
            raise LearnerSpecError(f"{kind} takes keyword arguments only")
        params["c"] = _literal(node.args[0], src)
    for kw in node.keywords:
        if kw.arg not in _ALLOWED[kind]:
            raise LearnerSpecError(f"{kind} does not accept {kw.arg!r}")
        if kind == "kde" and isinstance(kw.value, ast.Name) and kw.value.id == "silverman":
            params[kw.arg] = "silverman"
        else:
            params[kw.arg] = _literal(kw.value, src)
    key = {"knn": "k", "nw": "h", "hist": "w", "kde": "h", "const": "c"}[kind]
    if kind in ("knn", "nw", "hist"):
        has_cv = "cv" in params or "grid" in params
        if has_cv and key in params:
            raise LearnerSpecError(f"{kind}: give either {key}= or cv=/grid=, not both")
        if has_cv and not ("cv" in params and "grid" in params):
            raise LearnerSpecError(f"{kind}: cross-validation needs both cv= and grid=")
        if not has_cv and key not in params:
            raise LearnerSpecError(f"{kind} needs {key}= or cv=/grid=")
        if has_cv:
            if not params["grid"]:
                raise GridEmpty("tuning grid is empty")
            params["grid"] = tuple(params["grid"])
            if int(params["cv"]) < 2:
                raise LearnerSpecError("cv needs at least 2 folds")
        if kind == "knn" and key in params and (int(params["k"]) != params["k"] or params["k"] < 1):
            raise LearnerSpecError("k must be a positive integer")
    if kind == "const" and "c" not in params:
        raise LearnerSpecError("const needs a value")
    if kind == "kde":
        params.setdefault("h", "silverman")
    order = {"k": 0, "h": 0, "w": 0, "c": 0, "cv": 1, "grid": 2}
    return LearnerSpec(kind, tuple(sorted(params.items(), key=lambda kv: order[kv[0]])))


def _literal(node, src):
    try:
        v = ast.literal_eval(node)
    except ValueError:
        raise LearnerSpecError(f"bad value in learner {src!r}") from None
    if isinstance(v, (list, tuple)):
        if not all(isinstance(u, (int, float)) for u in v):
            raise LearnerSpecError(f"grid values must be numbers in {src!r}")
        return list(v)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise LearnerSpecError(f"bad value in learner {src!r}")
    return v


LEARNER_GRAMMAR = {
    "knn": "knn(k=INT) | knn(cv=INT, grid=[INT, ...])",
    "nw": "nw(h=REAL) | nw(cv=INT, grid=[REAL, ...])",
    "hist": "hist(w=REAL) | hist(cv=INT, grid=[REAL, ...])",
    "kde": "kde(h=REAL) | kde(h=silverman)",
    "const": "const(REAL)",
    "oracle": "oracle",
}
