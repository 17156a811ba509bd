"""Datasets: CSV ingestion, seeded splits, target standardisation and toy generators."""

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateSplit, EmptyFile, InvalidLabels, ParseError
from .numerics import make_rng

logger = logging.getLogger(__name__)

MISSING = {"", "na", "nan", "?", "null", "none"}


@dataclass
class Dataset:
    """Inputs, targets and (once split) the train/val/test partition.

    ``y`` holds raw targets for regression and 0-based class indices for
    classification. Standardisation statistics come from the training split.
    """

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    name: str = "data"
    y_mean: float = 0.0
    y_std: float = 1.0
    train_idx: np.ndarray = None
    val_idx: np.ndarray = None
    test_idx: np.ndarray = None
    seed: int = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def num_classes(self):
        return int(self.y.max()) + 1 if self.task == "classification" else 0

    @property
    def is_split(self):
        return self.train_idx is not None

    def standardized(self, y=None):
        y = self.y if y is None else y
        if self.task == "classification":
            return np.asarray(y)
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def destandardize(self, y_std_values):
        return self.y_mean + self.y_std * np.asarray(y_std_values, dtype=np.float64)

    def part(self, which):
        """``(X, y)`` for ``train``/``val``/``test``/``all``; regression targets standardized."""
        if which == "all":
            idx = np.arange(self.n)
        else:
            if not self.is_split:
                raise ValueError("dataset has not been split")
            idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[which]
        return self.X[idx], self.standardized(self.y[idx])


def _parse_float(cell, row, col):
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"non-numeric cell {cell!r}", row=row, column=col) from None


def load_csv(path, target=-1, task="regression", name=None):
    """Read a numeric comma-separated file.

    A first row containing any non-numeric cell is taken as a header. Rows with
    missing cells are dropped and counted in ``meta["rejected_rows"]``. For
    classification the target column holds 1-based labels.

    Parameters
    ----------
    target : int or str
        Column index (negative allowed) or header name of the target.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise EmptyFile(f"{path} is empty")
    header = None
    first = [c.strip() for c in rows[0]]
    if any(c.lower() not in MISSING and not _is_number(c) for c in first):
        header = first
        rows = rows[1:]
    if not rows:
        raise EmptyFile(f"{path} has a header but no data")
    width = len(header) if header else len(rows[0])
    if isinstance(target, str):
        if not header or target not in header:
            raise ParseError(f"target column {target!r} not found in header")
        tcol = header.index(target)
    else:
        tcol = int(target) % width
    values, rejected = [], 0
    for i, raw in enumerate(rows, start=2 if header else 1):
        cells = [c.strip() for c in raw]
        if len(cells) != width:
            raise ParseError(f"expected {width} columns, found {len(cells)}", row=i)
        if any(c.lower() in MISSING for c in cells):
            rejected += 1
            continue
        values.append([_parse_float(c, i, j + 1) for j, c in enumerate(cells)])
    if not values:
        raise EmptyFile(f"{path} has no complete rows")
    if rejected:
        logger.warning("%s: rejected %d rows with missing values", path, rejected)
    data = np.asarray(values, dtype=np.float64)
    y = data[:, tcol]
    X = np.delete(data, tcol, axis=1)
    if task == "classification":
        if np.any(y != np.round(y)) or y.min() < 1:
            raise InvalidLabels("class labels must be positive integers (1-based)")
        y = y.astype(int) - 1
    return Dataset(
        X, y, task=task, name=name or str(path),
        meta={"rejected_rows": rejected, "header": header, "target_column": tcol},
    )


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def split_standardize(dataset, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seeded train/val/test split; regression targets standardized on train only.

    Inputs are left untouched.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise DegenerateSplit(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = dataset.n
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DegenerateSplit(f"split sizes {n_train}/{n_val}/{n_test} leave an empty part")
    perm = make_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    val_idx = np.sort(perm[n_train:n_train + n_val])
    test_idx = np.sort(perm[n_train + n_val:])
    y_mean, y_std = 0.0, 1.0
    if dataset.task == "regression":
        y_train = dataset.y[train_idx]
        y_mean = float(np.mean(y_train))
        y_std = float(np.std(y_train))
        if not y_std > 0:
            raise DegenerateSplit("training targets are constant")
    elif len(np.unique(dataset.y[train_idx])) < 2:
        raise InvalidLabels("training split needs at least two classes")
    return replace(
        dataset, y_mean=y_mean, y_std=y_std, train_idx=train_idx, val_idx=val_idx,
        test_idx=test_idx, seed=seed, meta=dict(dataset.meta),
    )


def uci_fractions():
    """90/10 outer train/test with 1/9 of the outer train held out for validation."""
    test = 0.1
    val = (1.0 - test) / 9.0
    return (1.0 - test - val, val, test)


def batch_iter(indices, n_b, rng):
    """Reshuffle ``indices`` and cut them into batches of at most ``n_b``."""
    if n_b < 1:
        raise ValueError("batch size must be >= 1")
    perm = rng.permutation(np.asarray(indices))
    return [perm[i:i + n_b] for i in range(0, perm.size, n_b)]


# ------------------------------------------------------------------ toy data

TOY_FUNCTIONS = {
    "sin": lambda x: np.sin(x) + 0.3 * np.sin(3.0 * x),
    "cubic": lambda x: 0.05 * x ** 3 - 0.5 * x,
    "wave": lambda x: np.sin(2.0 * x) * np.exp(-0.05 * x * x) * 2.0,
}
TOY_RANGE = (-5.0, 5.0)


def make_toy_1d(kind="sin", N=1000, noise=0.5, seed=0):
    """``N`` equidistant inputs on ``[-5, 5]`` with Gaussian noise of std ``noise``."""
    if N < 2:
        raise ValueError("need at least two points")
    if kind not in TOY_FUNCTIONS:
        raise ValueError(f"unknown toy function {kind!r}; choose from {sorted(TOY_FUNCTIONS)}")
    x = np.linspace(*TOY_RANGE, N)
    f = TOY_FUNCTIONS[kind](x)
    y = f + noise * make_rng(seed).standard_normal(N)
    return Dataset(x[:, None], y, name=f"toy1d:{kind}", meta={"f": f, "noise": noise, "kind": kind})


def make_toy_2d_clusters(seed=0, n_per_cluster=100, lengthscale=0.3, separation_factor=10.0,
                         spread=0.15, noise=0.05):
    """Two Gaussian input clusters on the first axis, ``separation_factor`` lengthscales apart.

    The target ``sin(x1 / l) + cos(x2 / l)`` varies on the nominal lengthscale
    ``l`` so that a fitted prior sees short correlations. ``meta`` holds the
    centres and :func:`cluster_segment` traces the straight line through them.
    """
    rng = make_rng(seed)
    half = 0.5 * separation_factor * lengthscale
    c1 = np.array([-half, 0.0])
    c2 = np.array([half, 0.0])
    X = np.vstack([
        c1 + spread * rng.standard_normal((n_per_cluster, 2)),
        c2 + spread * rng.standard_normal((n_per_cluster, 2)),
    ])
    f = np.sin(X[:, 0] / lengthscale) + np.cos(X[:, 1] / lengthscale)
    y = f + noise * rng.standard_normal(X.shape[0])
    return Dataset(
        X, y, name="toy2d:clusters",
        meta={"centers": np.vstack([c1, c2]), "lengthscale": lengthscale, "spread": spread},
    )


def cluster_segment(dataset, lam):
    """Points ``midpoint + lam * (c2 - c1) / 2``; ``lam = -1, 1`` hit the centres."""
    c1, c2 = dataset.meta["centers"]
    lam = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    return 0.5 * (c1 + c2) + lam[:, None] * 0.5 * (c2 - c1)


def make_blobs(num_classes=3, n_per_class=500, seed=0, radius=3.0, spread=0.5):
    """Isotropic 2-D Gaussian blobs with centres evenly spaced on a circle."""
    rng = make_rng(seed)
    angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
    centers = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    X = np.vstack([c + spread * rng.standard_normal((n_per_class, 2)) for c in centers])
    y = np.repeat(np.arange(num_classes), n_per_class)
    return Dataset(X, y, task="classification", name=f"blobs:{num_classes}", meta={"centers": centers})


def make_ood_cluster(n=500, seed=1, center=(0.0, 9.0), spread=0.5):
    """A shifted cluster, far from every blob centre, used as out-of-distribution input."""
    rng = make_rng(seed)
    return np.asarray(center) + spread * rng.standard_normal((n, 2))


def make_dataset(source, seed=0):
    """Build a dataset from a generator name (``toy1d:<kind>``, ``toy2d``, ``blobs``) or CSV path."""
    if source.startswith("toy1d:"):
        return make_toy_1d(source.split(":", 1)[1], seed=seed)
    if source in ("toy2d", "toy2d:clusters"):
        return make_toy_2d_clusters(seed=seed)
    if source.startswith("blobs"):
        J = int(source.split(":", 1)[1]) if ":" in source else 3
        return make_blobs(J, seed=seed)
    raise ValueError(f"unknown generator {source!r}")
