"""Similarity kernels, adjacency normalization, dataset containers, and splits.

Entities (drugs, in the motivating application) are nodes; every view is a
symmetric similarity matrix over the same node roster, optionally with a
node-feature matrix.  Link labels live in a LabelMatrix, either one column
per partner node (binary links) or node*type columns (multilabel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .autodiff import NonFiniteError, rng_from_seed

SYMMETRY_TOL = 1e-9

BINARY_LINKS = "binary_links"
MULTILABEL = "multilabel"


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


def tanimoto_similarity(features: np.ndarray) -> np.ndarray:
    """Intersection-over-union similarity between binary feature rows.

    A pair involving an all-zero row gets similarity 0 (including the zero
    row's self-similarity); the self-loop added during normalization restores
    a unit diagonal downstream.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"tanimoto_similarity: features must be 2-D, got shape {f.shape}")
    if not np.all((f == 0.0) | (f == 1.0)):
        raise ValueError("tanimoto_similarity: features must be binary (0/1 entries)")
    inter = f @ f.T
    sums = f.sum(axis=1)
    union = sums[:, None] + sums[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(union > 0.0, inter / np.maximum(union, 1.0), 0.0)
    return sim


def rbf_similarity(features: np.ndarray, sigma: float = 30.0) -> np.ndarray:
    """Gaussian kernel exp(-||x_i - x_j||^2 / (2 sigma^2)) with unit diagonal."""
    if sigma <= 0:
        raise ValueError(f"rbf_similarity: sigma must be positive, got {sigma}")
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"rbf_similarity: features must be 2-D, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise NonFiniteError("rbf_similarity: features contain NaN or Inf")
    d2 = cdist(f, f, metric="sqeuclidean")
    sim = np.exp(-d2 / (2.0 * sigma * sigma))
    np.fill_diagonal(sim, 1.0)
    return sim


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Self-loop-augmented symmetric normalization D^{-1/2} (A + I) D^{-1/2}.

    The result is symmetric with spectral radius at most 1, which is what
    keeps repeated propagation (and label-propagation iterations) stable.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"normalize_adjacency: matrix must be square, got shape {a.shape}")
    if np.any(a < 0.0):
        raise ValueError("normalize_adjacency: negative entries are not allowed")
    if not np.allclose(a, a.T, atol=SYMMETRY_TOL, rtol=0.0):
        raise ValueError("normalize_adjacency: matrix is not symmetric")
    a_tilde = a + np.eye(a.shape[0])
    d = a_tilde.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(d)
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


def one_hot_features(n: int) -> np.ndarray:
    """Identity feature matrix, for parity experiments on featureless views."""
    return np.eye(int(n))


@dataclass(frozen=True)
class ViewGraph:
    """One view: a similarity matrix plus an optional node-feature matrix."""

    name: str
    similarity: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        sim = np.asarray(self.similarity, dtype=np.float64)
        if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
            raise ValueError(f"view '{self.name}': similarity must be square, got {sim.shape}")
        if not np.allclose(sim, sim.T, atol=SYMMETRY_TOL, rtol=0.0):
            raise ValueError(f"view '{self.name}': similarity is not symmetric")
        if sim.min() < 0.0 or sim.max() > 1.0:
            raise ValueError(
                f"view '{self.name}': similarity entries must lie in [0, 1], "
                f"found range [{sim.min():.6g}, {sim.max():.6g}]")
        object.__setattr__(self, "similarity", _frozen(sim))
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] != sim.shape[0]:
                raise ValueError(
                    f"view '{self.name}': features must have one row per node "
                    f"({sim.shape[0]}), got shape {feats.shape}")
            object.__setattr__(self, "features", _frozen(feats))

    @property
    def n_nodes(self) -> int:
        return self.similarity.shape[0]

    def normalized(self) -> np.ndarray:
        return normalize_adjacency(self.similarity)


@dataclass(frozen=True)
class LabelMatrix:
    """Link labels: N x N for binary links, N x (N * n_types) for multilabel.

    Multilabel columns are node-major: column ``j * n_types + t`` holds the
    label of pair (row, node j) for interaction type t.
    """

    values: np.ndarray
    kind: str = BINARY_LINKS
    n_types: int = 1

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if self.kind not in (BINARY_LINKS, MULTILABEL):
            raise ValueError(f"unknown label kind '{self.kind}'")
        if self.kind == BINARY_LINKS and self.n_types != 1:
            raise ValueError("binary_links labels must have n_types == 1")
        n = vals.shape[0]
        if vals.ndim != 2 or vals.shape[1] != n * self.n_types:
            raise ValueError(
                f"label matrix shape {vals.shape} does not match "
                f"{n} nodes x {self.n_types} types")
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def ground_truth(cls, values: np.ndarray, kind: str = BINARY_LINKS,
                     n_types: int = 1) -> "LabelMatrix":
        """Validated 0/1 labels: symmetric per type, zero self-pairs."""
        vals = np.asarray(values, dtype=np.float64)
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise ValueError("ground-truth labels must be 0/1")
        lm = cls(vals, kind=kind, n_types=n_types)
        n = lm.n_nodes
        for t in range(lm.n_types):
            block = lm.type_block(t)
            if not np.array_equal(block, block.T):
                raise ValueError(f"ground-truth labels (type {t}) are not symmetric")
            if np.any(np.diag(block) != 0.0):
                raise ValueError(f"ground-truth labels (type {t}) have nonzero diagonal")
        return lm

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def type_block(self, t: int) -> np.ndarray:
        """The N x N slice for interaction type t."""
        return self.values[:, t::self.n_types] if self.n_types > 1 else self.values


@dataclass(frozen=True)
class MultiViewDataset:
    """Aligned node roster, one or more views, and the link labels."""

    node_ids: tuple[str, ...]
    views: tuple[ViewGraph, ...]
    labels: LabelMatrix

    def __post_init__(self):
        object.__setattr__(self, "node_ids", tuple(str(x) for x in self.node_ids))
        object.__setattr__(self, "views", tuple(self.views))
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise ValueError("node roster contains duplicate identifiers")
        if not self.views:
            raise ValueError("dataset needs at least one view")
        for v in self.views:
            if v.n_nodes != n:
                raise ValueError(
                    f"view '{v.name}' has {v.n_nodes} nodes but the roster has {n}")
        if self.labels.n_nodes != n:
            raise ValueError(
                f"label matrix has {self.labels.n_nodes} rows but the roster has {n}")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_views(self) -> int:
        return len(self.views)

    def view(self, name: str) -> ViewGraph:
        for v in self.views:
            if v.name == name:
                return v
        raise KeyError(f"no view named '{name}'; have {[v.name for v in self.views]}")

    def subset_views(self, names: list[str]) -> "MultiViewDataset":
        return MultiViewDataset(self.node_ids, tuple(self.view(n) for n in names), self.labels)

    def feature_matrix(self) -> np.ndarray:
        """Concatenated features of every view that has them (view order)."""
        blocks = [v.features for v in self.views if v.features is not None]
        if not blocks:
            raise ValueError(
                "no view provides node features; feature-based models need them "
                "(the transductive variants work from labels alone)")
        return np.concatenate(blocks, axis=1)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Split:
    """Disjoint train/validation/test node index sets covering [0, N)."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    fraction: float
    seed: int

    def __post_init__(self):
        for name in ("train", "val", "test"):
            idx = np.asarray(getattr(self, name), dtype=np.intp)
            object.__setattr__(self, name, idx)
        n = self.n_nodes
        merged = np.concatenate([self.train, self.val, self.test])
        if len(np.unique(merged)) != len(merged) or set(merged.tolist()) != set(range(n)):
            raise ValueError("split index sets must partition [0, N)")

    @property
    def n_nodes(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


def drug_holdout_split(n_nodes: int, fraction: float, val_fraction: float = 0.10,
                       seed: int = 0) -> Split:
    """Hold out a fraction of nodes (with every incident link) for testing.

    The test set is drawn uniformly without replacement; the remaining nodes
    are split into train/validation.  Sizes use round-half-up on
    fraction * count.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"test fraction must be in (0, 1), got {fraction}")
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"validation fraction must be in [0, 1), got {val_fraction}")
    rng = rng_from_seed(seed)
    perm = rng.permutation(n_nodes)
    n_test = _round_half_up(fraction * n_nodes)
    rest = perm[n_test:]
    n_val = _round_half_up(val_fraction * len(rest))
    return Split(
        train=np.sort(rest[n_val:]),
        val=np.sort(rest[:n_val]),
        test=np.sort(perm[:n_test]),
        fraction=fraction,
        seed=seed,
    )


def _role_vector(split: Split) -> np.ndarray:
    """0 = train, 1 = val, 2 = test, indexed by node."""
    roles = np.zeros(split.n_nodes, dtype=np.intp)
    roles[split.val] = 1
    roles[split.test] = 2
    return roles


def pair_masks(split: Split) -> tuple[np.ndarray, np.ndarray]:
    """0/1 masks over node pairs: (train cells, validation cells).

    Train cells join two train nodes; validation cells touch at least one
    validation node and no test node.  Nothing touching a test node appears
    in either mask, and self-pairs are excluded everywhere.
    """
    roles = _role_vector(split)
    is_train = roles == 0
    is_val = roles == 1
    is_test = roles == 2
    train_mask = np.outer(is_train, is_train).astype(np.float64)
    no_test = ~np.outer(is_test, np.ones_like(is_test)) & ~np.outer(np.ones_like(is_test), is_test)
    touches_val = np.outer(is_val, np.ones_like(is_val)) | np.outer(np.ones_like(is_val), is_val)
    val_mask = (touches_val & no_test).astype(np.float64)
    np.fill_diagonal(train_mask, 0.0)
    np.fill_diagonal(val_mask, 0.0)
    return train_mask, val_mask


def cell_masks(split: Split, labels: LabelMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Pair masks expanded to the label-matrix column layout."""
    train_pairs, val_pairs = pair_masks(split)
    if labels.n_types == 1:
        return train_pairs, val_pairs
    return (np.repeat(train_pairs, labels.n_types, axis=1),
            np.repeat(val_pairs, labels.n_types, axis=1))


def masked_labels(split: Split, labels: LabelMatrix) -> np.ndarray:
    """Label matrix with every cell touching a validation or test node zeroed.

    This is the only label information a model may consume during training.
    """
    train_pairs, _ = pair_masks(split)
    if labels.n_types == 1:
        return labels.values * train_pairs
    return labels.values * np.repeat(train_pairs, labels.n_types, axis=1)


def test_pair_index(split: Split) -> tuple[np.ndarray, np.ndarray]:
    """Unordered pairs (i < j) with at least one test endpoint.

    These are the cells scored during evaluation; self-pairs and pairs between
    two non-test nodes are never scored.
    """
    roles = _role_vector(split)
    is_test = roles == 2
    touches = np.outer(is_test, np.ones_like(is_test)) | np.outer(np.ones_like(is_test), is_test)
    iu, ju = np.triu_indices(split.n_nodes, k=1)
    keep = touches[iu, ju]
    return iu[keep], ju[keep]
