"""Problem data: ratings files, Matrix Market input and synthetic generators."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .linalg import sparse_from_triplets

__all__ = [
    "ingest_ratings",
    "write_ratings",
    "read_matrix_market",
    "write_matrix_market",
    "load_sparse",
    "gen_exp_grid",
    "random_sparse",
    "planted_low_rank",
    "sample_entries",
]


def ingest_ratings(path, take=None, shape=None):
    """Read a whitespace-separated ``user item rating`` file.

    Ids are 1-based; columns after the third (timestamps, say) are ignored
    and blank lines are skipped.

    Parameters
    ----------
    path : str or Path
    take : int, optional
        Keep only the first ``take`` entries of the file.
    shape : tuple of int, optional
        Matrix shape. Defaults to ``(max user id, max item id)`` over the
        entries that were kept.

    Returns
    -------
    scipy.sparse.csr_matrix

    Raises
    ------
    ValueError
        On a malformed line (the line number is reported), a repeated
        ``(user, item)`` pair, an empty file or a non-positive ``take``.
    """
    if take is not None and take < 1:
        raise ValueError(f"take must be positive, got {take}")
    rows, cols, vals = [], [], []
    seen = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < 3:
                raise ValueError(f"{path}:{lineno}: expected 'user item rating', got {line.strip()!r}")
            try:
                u, i, v = int(fields[0]), int(fields[1]), float(fields[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from None
            if u < 1 or i < 1:
                raise ValueError(f"{path}:{lineno}: ids are 1-based, got ({u}, {i})")
            if not np.isfinite(v):
                raise ValueError(f"{path}:{lineno}: non-finite rating {fields[2]!r}")
            if (u, i) in seen:
                raise ValueError(f"{path}:{lineno}: duplicate entry ({u}, {i}), first seen on line {seen[u, i]}")
            seen[u, i] = lineno
            rows.append(u - 1)
            cols.append(i - 1)
            vals.append(v)
            if take is not None and len(vals) == take:
                break
    if not vals:
        raise ValueError(f"{path}: no entries")
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if shape is None:
        shape = (int(rows.max()) + 1, int(cols.max()) + 1)
    return sparse_from_triplets(rows, cols, np.asarray(vals), shape)


def write_ratings(path, B):
    """Write the stored entries of ``B`` as a ratings file (row-major order).

    Values are written with ``repr`` so that :func:`ingest_ratings` reads
    back the same doubles.
    """
    B = sp.coo_matrix(B)
    order = np.lexsort((B.col, B.row))
    with open(path, "w") as fh:
        for k in order:
            fh.write(f"{B.row[k] + 1} {B.col[k] + 1} {float(B.data[k])!r}\n")


def read_matrix_market(path):
    """Sparse matrix from a Matrix Market coordinate file, as CSR."""
    M = scipy.io.mmread(str(path))
    if not sp.issparse(M):
        raise ValueError(f"{path}: expected coordinate format, got a dense array")
    return sp.csr_matrix(M, dtype=float)


def write_matrix_market(path, B):
    scipy.io.mmwrite(str(path), sp.coo_matrix(B), precision=17)


def load_sparse(path, take=None):
    """Dispatch on the file suffix: ``.mtx`` is Matrix Market, anything else ratings."""
    path = Path(path)
    if path.suffix == ".mtx":
        B = read_matrix_market(path)
        if take is not None:
            C = B.tocoo()
            C = sp.coo_matrix((C.data[:take], (C.row[:take], C.col[:take])), shape=C.shape)
            B = C.tocsr()
        return B
    return ingest_ratings(path, take=take)


def gen_exp_grid(N):
    """Samples of ``exp(-x^2 - y^2)`` on the uniform ``N x N`` grid of ``[-1, 1]^2``.

    Endpoints are included (spacing ``2/(N-1)``). The matrix is the outer
    product of ``exp(-x_i^2)`` with itself and has rank one.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    a = np.exp(-np.linspace(-1.0, 1.0, N) ** 2)
    return np.outer(a, a)


def random_sparse(n, m, nnz, rng):
    """``n x m`` CSR matrix with ``nnz`` distinct uniformly placed Gaussian entries."""
    if not 0 <= nnz <= n * m:
        raise ValueError(f"nnz must lie in [0, {n * m}]")
    flat = rng.choice(n * m, size=nnz, replace=False)
    rows, cols = np.divmod(flat, m)
    return sparse_from_triplets(rows, cols, rng.standard_normal(nnz), (n, m))


def planted_low_rank(n, m, r, rng):
    """Dense ``n x m`` matrix ``G1 G2^T`` with Gaussian factors of width ``r``."""
    return rng.standard_normal((n, r)) @ rng.standard_normal((m, r)).T


def sample_entries(M, fraction, rng):
    """Observe each entry of ``M`` independently with probability ``fraction``.

    Returns ``(rows, cols, values)``.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    mask = rng.random(M.shape) < fraction
    rows, cols = np.nonzero(mask)
    return rows, cols, M[rows, cols]
