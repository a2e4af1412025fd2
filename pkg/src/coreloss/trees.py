"""Random forest and second-order gradient-boosted regression trees.

Both ensembles share one exact-greedy builder. A node holding gradient sum G
and hessian sum H has leaf value -G/(H + lambda), and a split is scored by

    gain = 1/2 [GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda)] - gamma.

With g = -y, h = 1 and lambda = 0 that is half the squared-error reduction,
which is exactly the variance criterion of a regression forest.

Trees grow level by level. Each feature keeps its rows presorted; at every
level the rows are regrouped by node with a stable sort, so one pass of
cumulative sums over a (features x rows) block scores every candidate split.
Thresholds are taken from training values (``x <= threshold`` goes left),
which keeps predictions invariant under strictly increasing feature transforms.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)


@dataclass
class DecisionTree:
    """Flattened binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            at = node[active]
            go_left = X[active, self.feature[at]] <= self.threshold[at]
            node[active] = np.where(go_left, self.left[at], self.right[at])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_arrays(cls, d) -> DecisionTree:
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


def presort(X: np.ndarray) -> np.ndarray:
    """Row order of each feature column, shape (n_features, n_rows)."""
    return np.argsort(X, axis=0, kind="stable").T.copy()


def _rank_dtype(n: int):
    # Small integer keys let numpy use radix sort for the stable regrouping.
    return np.int16 if n < np.iinfo(np.int16).max else np.int64


def grow_tree(
    X: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    *,
    counts: np.ndarray | None = None,
    order: np.ndarray | None = None,
    max_depth: int | None = None,
    min_samples_split: int = 2,
    min_samples_leaf: int = 1,
    reg_lambda: float = 0.0,
    gamma: float = 0.0,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[DecisionTree, np.ndarray]:
    """Grow one tree on per-row gradient statistics.

    ``counts`` weights rows for the sample-count limits (bootstrap
    multiplicities); rows with zero count are ignored. ``order`` is the output
    of ``presort(X)`` and may be shared across calls. When ``max_features`` is
    set, each node draws that many candidate features; if none of them admits
    a split the node falls back to all features.

    Returns the tree and the leaf index of every row (-1 for ignored rows).
    """
    n, n_feat = X.shape
    grad = np.asarray(grad, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    counts = np.ones(n) if counts is None else np.asarray(counts, dtype=np.float64)
    if order is None:
        order = presort(X)
    if max_features is not None and max_features < n_feat and rng is None:
        raise ValueError("feature subsampling needs an rng")
    max_depth = np.inf if max_depth is None else max_depth

    active = counts > 0
    unit_weights = bool(np.all(hess == 1.0) and np.all(counts == 1.0))
    R = order[active[order]].reshape(n_feat, -1)
    node_of = np.full(n, -1, dtype=np.int64)
    node_of[active] = 0
    leaf_of = np.full(n, -1, dtype=np.int64)

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    g2h = np.zeros(n)
    g2h[active] = grad[active] ** 2 / np.where(hess[active] > 0, hess[active], 1.0)
    frontier = [0]
    stats = {0: (grad[active].sum(), hess[active].sum(), counts[active].sum(), g2h.sum())}
    feat_idx = np.arange(n_feat)[:, None]
    depth = 0

    def make_leaf(node):
        G, H, _, _ = stats[node]
        value[node] = -G / (H + reg_lambda) if H + reg_lambda > 0 else 0.0

    while frontier:
        m = R.shape[1]
        rows0 = R[0]
        # Segment layout along the (node-grouped) row axis is the same for every feature.
        rank_of_node = np.full(len(feature), -1, dtype=np.int64)
        rank_of_node[frontier] = np.arange(len(frontier))
        seg_of_pos = rank_of_node[node_of[rows0]]
        sizes = np.bincount(seg_of_pos, minlength=len(frontier))
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        ends = starts + sizes

        Gt = np.array([stats[v][0] for v in frontier])
        Ht = np.array([stats[v][1] for v in frontier])
        Ct = np.array([stats[v][2] for v in frontier])
        S2 = np.array([stats[v][3] for v in frontier])
        splittable = (depth < max_depth) & (Ct >= min_samples_split) & (Ct >= 2 * min_samples_leaf)

        best_gain = np.full(len(frontier), -np.inf)
        best_feat = np.zeros(len(frontier), dtype=np.int64)
        best_pos = np.zeros(len(frontier), dtype=np.int64)
        if splittable.any() and m > 1:
            xs = X[R, feat_idx]
            pad = np.zeros((n_feat, 1))
            GL = np.cumsum(grad[R], axis=1)
            GL -= np.concatenate([pad, GL], axis=1)[:, starts][:, seg_of_pos]
            if unit_weights:
                # Every row weighs 1, so left sums are just in-segment positions.
                HL = (np.arange(1, m + 1) - starts[seg_of_pos]).astype(np.float64)[None, :]
                CL = HL
            else:
                HL = np.cumsum(hess[R], axis=1)
                CL = np.cumsum(counts[R], axis=1)
                for arr in (HL, CL):
                    arr -= np.concatenate([pad, arr], axis=1)[:, starts][:, seg_of_pos]
            G = Gt[seg_of_pos]
            H = Ht[seg_of_pos]
            C = Ct[seg_of_pos]
            GR, HR, CR = G - GL, H - HL, C - CL
            last_in_seg = np.zeros(m, dtype=bool)
            last_in_seg[ends[sizes > 0] - 1] = True
            valid = np.zeros((n_feat, m), dtype=bool)
            valid[:, :-1] = xs[:, :-1] < xs[:, 1:]
            valid &= ~last_in_seg
            valid &= splittable[seg_of_pos]
            valid &= (CL >= min_samples_leaf) & (CR >= min_samples_leaf)
            valid &= (HL + reg_lambda > 0) & (HR + reg_lambda > 0)
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = 0.5 * (GL**2 / (HL + reg_lambda) + GR**2 / (HR + reg_lambda)
                              - G**2 / (H + reg_lambda)) - gamma
            gain = np.where(valid, gain, -np.inf)

            if max_features is not None and max_features < n_feat:
                # Features constant within a node are skipped rather than counted,
                # so each node draws max_features candidates that can actually split.
                differs = np.zeros((n_feat, m + 1), dtype=np.int64)
                differs[:, 1:m] = np.cumsum((xs[:, :-1] < xs[:, 1:]) & ~last_in_seg[None, :-1], axis=1)
                differs[:, m] = differs[:, m - 1]
                varies = (differs[:, ends] > differs[:, starts]).T
                keys = np.where(varies, rng.random((len(frontier), n_feat)), np.inf)
                picked = np.argsort(keys, axis=1)[:, :max_features]
                allowed = np.zeros((len(frontier), n_feat), dtype=bool)
                np.put_along_axis(allowed, picked, True, axis=1)
                allowed &= varies
                masked = np.where(allowed.T[:, seg_of_pos], gain, -np.inf)
                seg_best = _segment_max(masked.max(axis=0), starts, sizes)
                fallback = ~np.isfinite(seg_best)
                gain = np.where(fallback[seg_of_pos][None, :], gain, masked)

            col_feat = np.argmax(gain, axis=0)
            col_gain = gain[col_feat, np.arange(m)]
            seg_best = _segment_max(col_gain, starts, sizes)
            hit = np.flatnonzero((col_gain == seg_best[seg_of_pos]) & np.isfinite(col_gain))
            segs, first = np.unique(seg_of_pos[hit], return_index=True)
            pos = hit[first]
            best_gain[segs] = col_gain[pos]
            best_feat[segs] = col_feat[pos]
            best_pos[segs] = pos

        accept = np.isfinite(best_gain) & (best_gain > 1e-12 * S2) & (best_gain > 0)

        # Route rows of accepted nodes; children are numbered in frontier order.
        next_frontier = []
        child_rank = np.full(len(feature) + 2 * int(accept.sum()), -1, dtype=np.int64)
        seg_feat = np.zeros(len(frontier), dtype=np.int64)
        seg_thr = np.zeros(len(frontier))
        seg_left = np.full(len(frontier), -1, dtype=np.int64)
        for s, node in enumerate(frontier):
            if not accept[s]:
                make_leaf(node)
                continue
            f, p = best_feat[s], best_pos[s]
            in_left = R[f, starts[s] : p + 1]
            gl, hl, cl = grad[in_left].sum(), hess[in_left].sum(), counts[in_left].sum()
            G, H, C, S = stats[node]
            q2 = g2h[in_left].sum()
            lc, rc = len(feature), len(feature) + 1
            for _ in range(2):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            feature[node], threshold[node], left[node], right[node] = int(f), float(X[R[f, p], f]), lc, rc
            stats[lc] = (gl, hl, cl, q2)
            stats[rc] = (G - gl, H - hl, C - cl, S - q2)
            child_rank[lc] = len(next_frontier)
            child_rank[rc] = len(next_frontier) + 1
            next_frontier += [lc, rc]
            seg_feat[s], seg_thr[s], seg_left[s] = f, threshold[node], lc

        seg_rows = seg_of_pos
        closed = ~accept[seg_rows]
        leaf_of[rows0[closed]] = np.asarray(frontier, dtype=np.int64)[seg_rows[closed]]
        open_pos = np.flatnonzero(~closed)
        if open_pos.size == 0:
            break
        r_open = rows0[open_pos]
        s_open = seg_rows[open_pos]
        goes_left = X[r_open, seg_feat[s_open]] <= seg_thr[s_open]
        node_of[rows0[closed]] = -1
        node_of[r_open] = np.where(goes_left, seg_left[s_open], seg_left[s_open] + 1)

        still_open = node_of >= 0
        R = R[still_open[R]].reshape(n_feat, -1)
        rank = child_rank[node_of[R]].astype(_rank_dtype(len(next_frontier)))
        R = np.take_along_axis(R, np.argsort(rank, axis=1, kind="stable"), axis=1)
        frontier = next_frontier
        depth += 1

    tree = DecisionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )
    return tree, leaf_of


def _segment_max(values, starts, sizes):
    out = np.full(starts.size, -np.inf)
    nonempty = sizes > 0
    if nonempty.any():
        out[nonempty] = np.maximum.reduceat(values, starts[nonempty])
    return out


def _check_xy(X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise DataError("empty training data")
    if y is not None:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise DataError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
    return X, y


# -- random forest ---------------------------------------------------------------------


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: int | None = None  # None -> max(1, n_features // 3)
    max_depth: int | None = None
    bootstrap: bool = True


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    n_features: int
    seed: int
    params: ForestParams = field(default_factory=ForestParams)

    def predict(self, X) -> np.ndarray:
        return rf_predict(self, X)


def rf_train(X, y, params: ForestParams = ForestParams(), seed: int = 0) -> ForestModel:
    """Bagged variance-reduction trees; per-tree seeds are spawned from ``seed``."""
    X, y = _check_xy(X, y)
    n, n_feat = X.shape
    max_features = params.max_features or max(1, n_feat // 3)
    order = presort(X)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(params.n_estimators):
        rng = np.random.default_rng(child)
        if params.bootstrap:
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
        else:
            counts = np.ones(n)
        tree, _ = grow_tree(
            X, -y * counts, counts,
            counts=counts,
            order=order,
            max_depth=params.max_depth,
            min_samples_split=params.min_samples_split,
            min_samples_leaf=params.min_samples_leaf,
            max_features=max_features,
            rng=rng,
        )  # fmt: skip
        trees.append(tree)
    return ForestModel(trees, n_feat, seed, params)


def _check_features(X, n_features):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != n_features:
        raise DataError(f"model expects {n_features} features, got {X.shape[1]}")
    return X


def rf_predict(m: ForestModel, X) -> np.ndarray:
    """Unweighted mean of the tree outputs."""
    X = _check_features(X, m.n_features)
    out = np.zeros(X.shape[0])
    for tree in m.trees:
        out += tree.predict(X)
    return out / len(m.trees)


# -- gradient boosting -----------------------------------------------------------------


@dataclass(frozen=True)
class GbtParams:
    num_boost_round: int = 10000
    early_stopping_rounds: int = 50
    max_depth: int = 6
    learning_rate: float = 0.01
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_samples_leaf: int = 1


@dataclass
class GbtModel:
    base_score: float
    trees: list[DecisionTree]
    learning_rate: float
    best_iteration: int
    n_features: int
    params: GbtParams = field(default_factory=GbtParams)
    train_mse: list[float] = field(default_factory=list)
    valid_mse: list[float] = field(default_factory=list)

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        return gbt_predict(self, X, n_trees)


def gbt_train(X, y, X_val, y_val, params: GbtParams = GbtParams(), seed: int = 0) -> GbtModel:
    """Squared-error boosting with validation early stopping.

    ``train_mse``/``valid_mse`` hold the MSE after 0, 1, 2, ... trees.
    ``best_iteration`` is the tree count with the lowest validation MSE (first
    on ties); trees past it are kept but ignored by ``gbt_predict``. ``seed``
    is accepted for interface symmetry; no row or column sampling is done.
    """
    X, y = _check_xy(X, y)
    X_val, y_val = np.asarray(X_val, dtype=np.float64), np.asarray(y_val, dtype=np.float64).reshape(-1)
    if X_val.ndim != 2 or X_val.shape[0] == 0:
        raise DataError("gradient boosting needs a non-empty validation set for early stopping")
    X_val = _check_features(X_val, X.shape[1])
    if X_val.shape[0] != y_val.shape[0]:
        raise DataError("validation features and targets differ in length")

    base = float(np.mean(y))
    pred = np.full(y.shape, base)
    pred_val = np.full(y_val.shape, base)
    order = presort(X)
    hess = np.ones_like(y)
    lr = params.learning_rate
    train_hist = [float(np.mean((y - pred) ** 2))]
    valid_hist = [float(np.mean((y_val - pred_val) ** 2))]
    best, best_iter = valid_hist[0], 0
    patience = max(params.early_stopping_rounds, 1)
    trees = []
    for it in range(1, params.num_boost_round + 1):
        tree, leaf_of = grow_tree(
            X, pred - y, hess,
            order=order,
            max_depth=params.max_depth,
            min_samples_leaf=params.min_samples_leaf,
            reg_lambda=params.reg_lambda,
            gamma=params.gamma,
        )  # fmt: skip
        trees.append(tree)
        pred = pred + lr * tree.value[leaf_of]
        pred_val = pred_val + lr * tree.predict(X_val)
        train_hist.append(float(np.mean((y - pred) ** 2)))
        valid_hist.append(float(np.mean((y_val - pred_val) ** 2)))
        if valid_hist[-1] < best:
            best, best_iter = valid_hist[-1], it
        elif it - best_iter >= patience:
            log.debug("early stop at round %d, best %d", it, best_iter)
            break
    return GbtModel(base, trees, lr, best_iter, X.shape[1], params, train_hist, valid_hist)


def gbt_predict(m: GbtModel, X, n_trees: int | None = None) -> np.ndarray:
    """Base score plus learning-rate-scaled tree outputs up to the best iteration."""
    X = _check_features(X, m.n_features)
    n_trees = m.best_iteration if n_trees is None else n_trees
    out = np.full(X.shape[0], m.base_score)
    for tree in m.trees[:n_trees]:
        out += m.learning_rate * tree.predict(X)
    return out
