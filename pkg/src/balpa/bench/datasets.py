"""LIBSVM sparse format reading/writing and a synthetic stand-in dataset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse


class LibsvmFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    samples: sparse.csr_matrix
    labels: np.ndarray

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def n_features(self):
        return self.samples.shape[1]


def parse_libsvm(path, n_features=None):
    """
    Read ``label idx:val idx:val ...`` lines with 1-based indices.

    Blank lines and ``#`` comments are skipped. The feature count is the
    largest index seen unless `n_features` is larger.

    Raises
    ------
    LibsvmFormatError
        On non-numeric tokens or indices below 1, naming the line number.
    """
    labels, rows, cols, vals = [], [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                labels.append(float(tokens[0]))
            except ValueError:
                raise LibsvmFormatError(f"{path}:{lineno}: bad label {tokens[0]!r}") from None
            r = len(labels) - 1
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    j, v = int(idx), float(val)
                except ValueError:
                    raise LibsvmFormatError(f"{path}:{lineno}: bad feature token {tok!r}") from None
                if not sep:
                    raise LibsvmFormatError(f"{path}:{lineno}: bad feature token {tok!r}")
                if j < 1:
                    raise LibsvmFormatError(f"{path}:{lineno}: feature index must be >= 1, got {j}")
                rows.append(r)
                cols.append(j - 1)
                vals.append(v)
    width = max(cols, default=-1) + 1
    if n_features is not None:
        width = max(width, int(n_features))
    X = sparse.csr_matrix((vals, (rows, cols)), shape=(len(labels), width))
    X.sum_duplicates()
    return Dataset(samples=X, labels=np.array(labels))


def write_libsvm(path, dataset):
    X = dataset.samples.tocsr()
    with open(path, "w") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            lab = dataset.labels[i]
            lab = f"{int(lab):+d}" if float(lab).is_integer() else repr(float(lab))
            fh.write(f"{lab} {feats}".rstrip() + "\n")


def synthetic_classification(n_samples=500, n_features=20, density=0.3, positive=0.25, seed=0):
    """
    Binary-feature classification data shaped like the LIBSVM ``a*a`` sets.

    Column 0 is a constant bias feature; the others are 0/1 with the given
    `density`. Labels come from a noisy planted linear score, thresholded so
    that a fraction `positive` of them is ``+1``.
    """
    if not 0 < positive < 1:
        raise ValueError("positive must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    X = (rng.random((n_samples, n_features)) < density).astype(float)
    X[:, 0] = 1.0
    score = X @ rng.standard_normal(n_features) + 0.5 * rng.standard_normal(n_samples)
    y = np.where(score >= np.quantile(score, 1.0 - positive), 1.0, -1.0)
    return Dataset(samples=sparse.csr_matrix(X), labels=y)
