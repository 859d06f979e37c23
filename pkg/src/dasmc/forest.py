"""Regression random forest (CART trees on bootstrap samples) compiled with numba.

Trees are stored flattened: per node a split feature (-1 for leaves), a
threshold, left/right child offsets and a value.  The rule ``x[j] <= s``
routes left.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace

import numba
import numpy as np

MAGIC = b"DAPF"
FORMAT_VERSION = 1


class ForestError(ValueError):
    pass


class ForestFormatError(ForestError):
    pass


@dataclass
class ForestConfig:
    """Hyperparameters.  ``max_depth`` 0 means unlimited; ``mtry`` 0 means
    ceil(n_features / 3).  ``per_kind`` asks callers that train surrogates
    for one forest per value of the last (categorical) column."""

    n_trees: int = 300
    max_depth: int = 0
    min_leaf_size: int = 5
    mtry: int = 0
    bootstrap: bool = True
    seed: int = 0
    per_kind: bool = False

    def __post_init__(self):
        if self.n_trees < 1:
            raise ForestError("n_trees must be at least 1")
        if self.max_depth < 0 or self.min_leaf_size < 1 or self.mtry < 0:
            raise ForestError("invalid forest configuration")

    def resolved_mtry(self, n_features: int) -> int:
        m = self.mtry if self.mtry > 0 else math.ceil(n_features / 3)
        if not 1 <= m <= n_features:
            raise ForestError(f"mtry={m} outside [1, {n_features}]")
        return m


@numba.njit(cache=True)
def _grow(X, y, rows, mtry, min_leaf, max_depth, seed):
    np.random.seed(seed)
    n = rows.shape[0]
    p = X.shape[1]
    cap = 2 * n + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    importance = np.zeros(p)
    idx = rows.copy()
    buf = np.empty(n, dtype=np.int64)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    xs = np.empty(n)
    ys = np.empty(n)
    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        m = end - start
        total = 0.0
        for i in range(start, end):
            total += y[idx[i]]
        mean = total / m
        value[node] = mean
        if m < 2 * min_leaf or (max_depth > 0 and depth >= max_depth):
            continue
        sse = 0.0
        for i in range(start, end):
            d = y[idx[i]] - mean
            sse += d * d
        if sse <= 0.0:
            continue

        best_gain = 0.0
        best_f = -1
        best_t = 0.0
        order = np.random.permutation(p)
        visited = 0
        for oi in range(p):
            if visited >= mtry:
                break
            f = order[oi]
            for i in range(m):
                xs[i] = X[idx[start + i], f]
            srt = np.argsort(xs[:m], kind="mergesort")
            if xs[srt[0]] == xs[srt[m - 1]]:
                continue
            visited += 1
            for i in range(m):
                ys[i] = y[idx[start + srt[i]]] - mean
            s_left = 0.0
            for i in range(1, m):
                s_left += ys[i - 1]
                nl = i
                nr = m - i
                if nl < min_leaf or nr < min_leaf:
                    continue
                a = xs[srt[i - 1]]
                b = xs[srt[i]]
                if a == b:
                    continue
                s_right = -s_left
                gain = s_left * s_left / nl + s_right * s_right / nr
                if gain > best_gain or (gain == best_gain and best_f >= 0 and f < best_f):
                    t = 0.5 * (a + b)
                    if t >= b:
                        t = a
                    best_gain = gain
                    best_f = f
                    best_t = t
        if best_f < 0 or best_gain <= 1e-12 * sse:
            continue

        nl = 0
        nr = 0
        for i in range(start, end):
            r = idx[i]
            if X[r, best_f] <= best_t:
                idx[start + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for i in range(nr):
            idx[start + nl + i] = buf[i]

        feat[node] = best_f
        thr[node] = best_t
        importance[best_f] += best_gain
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        st_node[top] = rnode
        st_start[top] = start + nl
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lnode
        st_start[top] = start
        st_end[top] = start + nl
        st_depth[top] = depth + 1
        top += 1

    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes], importance


@numba.njit(cache=True)
def _predict(X, feat, thr, left, right, value, offsets):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feat[base + node] >= 0:
                if X[i, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[i] = acc / n_trees
    return out


@numba.njit(cache=True)
def _predict_per_tree(X, feat, thr, left, right, value, offsets):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros((n, n_trees))
    for i in range(n):
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feat[base + node] >= 0:
                if X[i, feat[base + node]] <= thr[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i, t] = value[base + node]
    return out


def _tree_seeds(seed: int, b: int) -> tuple[np.random.Generator, int]:
    ss = np.random.SeedSequence([seed, b])
    return np.random.default_rng(ss), int(ss.generate_state(1)[0] & 0x7FFFFFFF)


@dataclass
class RegressionForest:
    """Flattened ensemble of regression trees."""

    feature_names: tuple
    config: ForestConfig
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    offsets: np.ndarray
    raw_importance: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        if X.shape[1] != self.n_features:
            raise ForestError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict(self, X) -> np.ndarray:
        """Mean of per-tree predictions for each row of ``X``."""
        X = self._check(X)
        return _predict(X, self.feat, self.thr, self.left, self.right, self.value, self.offsets)

    def predict_one(self, x) -> float:
        return float(self.predict(np.asarray(x)[None, :])[0])

    def predict_trees(self, X) -> np.ndarray:
        X = self._check(X)
        return _predict_per_tree(X, self.feat, self.thr, self.left, self.right, self.value, self.offsets)

    def feature_importance(self) -> np.ndarray:
        """Impurity-decrease importance normalized to sum to one (zeros if no split)."""
        tot = self.raw_importance.sum()
        if tot <= 0:
            return np.zeros_like(self.raw_importance)
        return self.raw_importance / tot

    def importance_table(self) -> list[tuple[str, float]]:
        imp = self.feature_importance()
        order = sorted(range(len(imp)), key=lambda j: (-imp[j], j))
        return [(self.feature_names[j], float(imp[j])) for j in order]

    @property
    def n_splits(self) -> int:
        return int((self.feat >= 0).sum())


@dataclass
class KindForests:
    """Separate forests keyed by the integer value of one categorical column."""

    forests: dict
    column: int = -1

    @property
    def feature_names(self) -> tuple:
        return next(iter(self.forests.values())).feature_names

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        keys = X[:, self.column].astype(np.int64)
        out = np.empty(len(X))
        for key in np.unique(keys):
            if int(key) not in self.forests:
                raise ForestError(f"no forest for category {int(key)}")
            rows = keys == key
            out[rows] = self.forests[int(key)].predict(X[rows])
        return out

    def predict_one(self, x) -> float:
        return float(self.predict(np.asarray(x)[None, :])[0])


def fit_kind_forests(X, y, config: ForestConfig, feature_names=None, column: int = -1) -> KindForests:
    X = np.asarray(X, dtype=np.float64)
    keys = X[:, column].astype(np.int64)
    forests = {}
    for key in np.unique(keys):
        rows = keys == key
        cfg = replace(config, seed=int(np.random.SeedSequence([config.seed, 1000 + int(key)]).generate_state(1)[0]))
        forests[int(key)] = fit_forest(X[rows], np.asarray(y)[rows], cfg, feature_names)
    return KindForests(forests, column)


def fit_forest(X, y, config: ForestConfig | None = None, feature_names=None) -> RegressionForest:
    """Grow ``config.n_trees`` CART regression trees on bootstrap resamples.

    Parameters
    ----------
    X : array, shape (n, p)
    y : array, shape (n,)
    config : ForestConfig
    feature_names : sequence of str, optional
    """
    config = config or ForestConfig()
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    if X.ndim != 2 or X.shape[0] == 0:
        raise ForestError("empty training set")
    if y.shape != (X.shape[0],):
        raise ForestError("X and y have inconsistent shapes")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ForestError("training data contain non-finite values")
    n, p = X.shape
    if feature_names is None:
        feature_names = tuple(f"x{j}" for j in range(p))
    feature_names = tuple(feature_names)
    if len(feature_names) != p:
        raise ForestError("feature_names length does not match X")
    mtry = config.resolved_mtry(p)
    parts = []
    imp = np.zeros(p)
    for b in range(config.n_trees):
        rng, tseed = _tree_seeds(config.seed, b)
        rows = rng.integers(0, n, n) if config.bootstrap else np.arange(n)
        out = _grow(X, y, rows.astype(np.int64), mtry, config.min_leaf_size, config.max_depth, tseed)
        parts.append(out[:5])
        imp += out[5]
    sizes = [len(pt[0]) for pt in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    cat = [np.concatenate([pt[k] for pt in parts]) for k in range(5)]
    return RegressionForest(feature_names, config, *cat, offsets, imp,
                            meta={"n_train": n, "y_min": float(y.min()), "y_max": float(y.max())})


def forest_from_leaves(values, feature_names) -> RegressionForest:
    """Forest of single-leaf trees (useful as a constant predictor)."""
    values = np.asarray(values, dtype=float)
    k = len(values)
    return RegressionForest(
        tuple(feature_names), ForestConfig(n_trees=k), np.full(k, -1, dtype=np.int64), np.zeros(k),
        np.full(k, -1, dtype=np.int64), np.full(k, -1, dtype=np.int64), values.copy(),
        np.arange(k + 1, dtype=np.int64), np.zeros(len(feature_names)),
    )


# ---------------------------------------------------------------------------
# Metrics and studies
# ---------------------------------------------------------------------------

def r_squared(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(((y - np.asarray(pred)) ** 2).sum())
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


def train_test_split(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng([seed, 7]).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def holdout_metrics(forest: RegressionForest, X, y) -> dict:
    pred = forest.predict(X)
    mse = float(np.mean((np.asarray(y) - pred) ** 2))
    return {"mse": mse, "rmse": math.sqrt(mse), "r2": r_squared(y, pred)}


def prune_features_study(X, y, config: ForestConfig, feature_names=None, test_fraction=0.1,
                         ks=None, seed: int = 0) -> list[dict]:
    """Retrain on the top-k most important features for decreasing k.

    Returns rows ``{"k", "features", "rmse", "r2"}``; the first row uses all
    features and equals the baseline fit.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 30:
        raise ForestError("feature pruning study needs at least 30 rows")
    p = X.shape[1]
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(p))
    tr, te = train_test_split(len(y), test_fraction, seed)
    base = fit_forest(X[tr], y[tr], config, names)
    imp = base.feature_importance()
    ranking = sorted(range(p), key=lambda j: (-imp[j], j))
    ks = list(range(p, 0, -1)) if ks is None else sorted(set(ks), reverse=True)
    rows = []
    for k in ks:
        cols = sorted(ranking[:k])
        if k == p:
            f = base
        else:
            sub = ForestConfig(**{**asdict(config), "mtry": min(config.resolved_mtry(p), k) if config.mtry else 0})
            f = fit_forest(X[tr][:, cols], y[tr], sub, [names[j] for j in cols])
        m = holdout_metrics(f, X[te][:, cols], y[te])
        rows.append({"k": k, "features": [names[j] for j in ranking[:k]], "rmse": m["rmse"], "r2": m["r2"]})
    return rows


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_ARRAYS = (("feat", "<i8"), ("thr", "<f8"), ("left", "<i8"), ("right", "<i8"),
           ("value", "<f8"), ("offsets", "<i8"), ("raw_importance", "<f8"))


def _forest_bytes(forest: RegressionForest) -> bytes:
    header = {
        "feature_names": list(forest.feature_names),
        "config": asdict(forest.config),
        "meta": forest.meta,
        "lengths": {name: int(len(getattr(forest, name))) for name, _ in _ARRAYS},
    }
    return _pack(header, b"".join(np.ascontiguousarray(getattr(forest, name), dtype=dt).tobytes()
                                  for name, dt in _ARRAYS))


def _pack(header: dict, body: bytes) -> bytes:
    hb = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(hb)) + hb + body


def save_forest(forest, path) -> None:
    """Write a forest, or a per-kind bundle of forests, in the DAPF format."""
    if isinstance(forest, KindForests):
        keys = sorted(forest.forests)
        blobs = [_forest_bytes(forest.forests[k]) for k in keys]
        header = {"bundle": {"column": forest.column, "keys": keys, "sizes": [len(b) for b in blobs]}}
        data = _pack(header, b"".join(blobs))
    else:
        data = _forest_bytes(forest)
    with open(path, "wb") as fh:
        fh.write(data)


def load_forest(path, feature_names=None):
    """Read a forest file; optionally require a specific feature schema."""
    with open(path, "rb") as fh:
        data = fh.read()
    forest = _parse(data)
    if feature_names is not None and tuple(feature_names) != tuple(forest.feature_names):
        raise ForestFormatError("forest feature schema does not match")
    return forest


def _parse(data: bytes):
    if len(data) < 12 or data[:4] != MAGIC:
        raise ForestFormatError("not a forest file (bad magic bytes)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise ForestFormatError(f"unsupported forest format version {version}")
    if len(data) < 12 + hlen:
        raise ForestFormatError("corrupt forest file: truncated header")
    try:
        header = json.loads(data[12:12 + hlen])
    except ValueError as exc:
        raise ForestFormatError("corrupt forest file: unreadable header") from exc
    pos = 12 + hlen
    if "bundle" in header:
        b = header["bundle"]
        forests = {}
        for key, size in zip(b["keys"], b["sizes"]):
            if pos + size > len(data):
                raise ForestFormatError("corrupt forest file: truncated data")
            forests[int(key)] = _parse(data[pos:pos + size])
            pos += size
        if pos != len(data) or not forests:
            raise ForestFormatError("corrupt forest file: bad bundle")
        return KindForests(forests, int(b["column"]))
    try:
        lengths = header["lengths"]
        arrays = {}
        for name, dt in _ARRAYS:
            count = lengths[name]
            nbytes = count * 8
            if pos + nbytes > len(data):
                raise ForestFormatError("corrupt forest file: truncated data")
            native = np.int64 if dt.endswith("i8") else np.float64
            arrays[name] = np.frombuffer(data, dtype=dt, count=count, offset=pos).astype(native)
            pos += nbytes
        names = tuple(header["feature_names"])
        config = ForestConfig(**header["config"])
    except (KeyError, TypeError) as exc:
        raise ForestFormatError(f"corrupt forest file: bad header ({exc})") from None
    if pos != len(data):
        raise ForestFormatError("corrupt forest file: trailing bytes")
    return RegressionForest(names, config, meta=header.get("meta", {}), **arrays)
