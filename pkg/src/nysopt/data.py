"""Dataset ingest: LIBSVM text parsing, splits and reproducible sampling."""

import gzip
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ParseError

WITH_REPLACEMENT = "with_replacement"
WITHOUT_REPLACEMENT = "without_replacement_per_epoch"
SAMPLING_MODES = (WITH_REPLACEMENT, WITHOUT_REPLACEMENT)

# one independent generator per concern, spawned in this fixed order
STREAM_NAMES = ("columns", "batches", "init", "outer", "hessian_sample")

_LABEL_MAP = {0.0: -1.0, 1.0: 1.0, -1.0: -1.0}


@dataclass(frozen=True)
class Dataset:
    """n samples as a CSR matrix plus labels in {-1, +1}."""

    X: sp.csr_matrix
    y: np.ndarray

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y disagree on the number of samples")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx].copy())

    def with_dim(self, d):
        if d < self.d:
            raise ConfigError(f"cannot shrink feature dimension {self.d} to {d}")
        X = sp.csr_matrix((self.X.data, self.X.indices, self.X.indptr), shape=(self.n, d))
        return Dataset(X, self.y)

    def equals(self, other):
        a, b = self.X, other.X
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.y, other.y)
        )


def _parse_float(tok, lineno, what):
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(lineno, f"non-numeric {what} {tok!r}") from None
    if not math.isfinite(val):
        raise ParseError(lineno, f"non-finite {what} {tok!r}")
    return val


def parse_libsvm(stream, n_features=None):
    """Parse LIBSVM text into a Dataset.

    Each nonempty line is a label followed by ``index:value`` pairs with
    strictly increasing 1-based indices; ``#`` starts a comment.  Labels in
    {0, 1} are mapped to {-1, +1}.  The feature dimension is the largest
    index seen unless ``n_features`` is given.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels, indptr, indices, values = [], [0], [], []
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        label = _parse_float(tokens[0], lineno, "label")
        if label not in _LABEL_MAP:
            raise ParseError(lineno, f"label {tokens[0]!r} not in {{0, 1, -1, +1}}")
        labels.append(_LABEL_MAP[label])
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(lineno, f"expected index:value, got {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise ParseError(lineno, f"non-integer feature index {idx_s!r}") from None
            if idx < 1:
                raise ParseError(lineno, f"feature index {idx} must be >= 1")
            if idx <= prev:
                raise ParseError(lineno, f"feature indices not strictly increasing at {idx}")
            prev = idx
            indices.append(idx - 1)
            values.append(_parse_float(val_s, lineno, "value"))
        indptr.append(len(indices))

    max_index = max(indices) + 1 if indices else 0
    d = max_index if n_features is None else int(n_features)
    if d < max_index:
        raise ConfigError(f"n_features={d} smaller than largest index {max_index}")
    X = sp.csr_matrix(
        (np.asarray(values, dtype=float), np.asarray(indices, dtype=np.int32), np.asarray(indptr)),
        shape=(len(labels), d),
    )
    return Dataset(X, np.asarray(labels, dtype=float))


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def load_libsvm(path, n_features=None):
    with _open_text(path) as fh:
        return parse_libsvm(fh, n_features=n_features)


def load_train_test(train_path, test_path=None, n_features=None):
    """Load a split; without an override, d is the max over train and test."""
    train = load_libsvm(train_path)
    test = load_libsvm(test_path) if test_path else None
    d = n_features
    if d is None:
        d = max(train.d, test.d if test is not None else 0)
    train = train.with_dim(d)
    if test is not None:
        test = test.with_dim(d)
    return train, test


def dump_libsvm(data, stream):
    """Write a Dataset as LIBSVM text; ``repr`` floats make the round trip exact."""
    X = data.X
    for i in range(data.n):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        pairs = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
        label = "+1" if data.y[i] > 0 else "-1"
        stream.write(f"{label} {pairs}\n" if pairs else f"{label}\n")


def max_abs_scale(train, test=None):
    """Scale every feature by its max-abs value on the training split."""
    scale = np.asarray(abs(train.X).max(axis=0).todense()).ravel()
    scale[scale == 0] = 1.0
    D = sp.diags(1.0 / scale)
    out_train = Dataset(sp.csr_matrix(train.X @ D), train.y)
    out_test = Dataset(sp.csr_matrix(test.X @ D), test.y) if test is not None else None
    return out_train, out_test


def train_test_split(data, test_fraction, seed):
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(data.n)
    n_test = int(round(test_fraction * data.n))
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def subsample(data, n, seed):
    if n > data.n:
        raise ConfigError(f"cannot subsample {n} rows from {data.n}")
    idx = np.random.default_rng(seed).choice(data.n, size=n, replace=False)
    return data.subset(np.sort(idx))


def make_streams(seed):
    """Independent PCG64 generators, one per concern, derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(STREAM_NAMES, children)}


@dataclass
class BatchSampler:
    """Reproducible mini-batch index generator.

    In ``with_replacement`` mode each batch holds i.i.d. uniform draws.  In
    ``without_replacement_per_epoch`` mode the indices are reshuffled every
    epoch and emitted in consecutive chunks (the last chunk may be short).
    """

    seed: int
    batch_size: int
    mode: str = WITH_REPLACEMENT
    rng: np.random.Generator = None
    _perm: np.ndarray = field(default=None, repr=False)
    _pos: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.mode not in SAMPLING_MODES:
            raise ConfigError(f"unknown sampling mode {self.mode!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.rng is None:
            self.rng = np.random.Generator(np.random.PCG64(self.seed))

    def next_batch(self, n):
        if self.batch_size > n:
            raise ConfigError(f"batch_size {self.batch_size} exceeds n={n}")
        if self.mode == WITH_REPLACEMENT:
            return self.rng.integers(0, n, size=self.batch_size)
        if self._perm is None or self._pos >= n or self._perm.shape[0] != n:
            self._perm = self.rng.permutation(n)
            self._pos = 0
        batch = self._perm[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return batch


def synthetic_adult(n, seed=0, n_test=0):
    """Binary one-hot data shaped like the LIBSVM ``adult`` (a9a) set.

    123 binary features split into 14 categorical groups, one active feature
    per group, labels from a sparse logistic teacher.  Used where the real
    file is not available; same d, sparsity and collinear group structure.
    """
    group_sizes = [9, 16, 7, 15, 6, 5, 2, 14, 10, 8, 5, 8, 12, 6]
    assert sum(group_sizes) == 123
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(group_sizes)[:-1]])
    # skewed category frequencies, like the real census attributes
    probs = [rng.dirichlet(np.full(g, 0.7)) for g in group_sizes]
    teacher = rng.standard_normal(123) * (rng.random(123) < 0.4) * 1.5
    total = n + n_test
    cols = np.empty((total, len(group_sizes)), dtype=np.int32)
    for g, (off, p) in enumerate(zip(offsets, probs)):
        cols[:, g] = off + rng.choice(len(p), size=total, p=p)
    indptr = np.arange(0, total * len(group_sizes) + 1, len(group_sizes))
    X = sp.csr_matrix((np.ones(cols.size), cols.ravel(), indptr), shape=(total, 123))
    z = X @ teacher - 0.8
    y = np.where(rng.random(total) < 1.0 / (1.0 + np.exp(-z)), 1.0, -1.0)
    train = Dataset(sp.csr_matrix(X[:n]), y[:n])
    if not n_test:
        return train
    return train, Dataset(sp.csr_matrix(X[n:]), y[n:])
