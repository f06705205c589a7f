"""Sparse symmetric Cholesky factorisation for posterior precisions.

The numba backend runs a fill-reducing minimum-degree ordering, an
elimination-tree symbolic analysis, an up-looking numeric factorisation
and Takahashi selected inversion for marginal variances. The numpy
backend factors a dense copy instead; it is exact but O(n^3).

The symbolic analysis depends only on the sparsity pattern, so a model
analyses once and refactors for every (x, theta) pair.
"""

from __future__ import annotations

import heapq
import math

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import _accel
from ._accel import njit
from .errors import NumericalError


def minimum_degree(pattern) -> np.ndarray:
    """Greedy minimum-degree elimination order of a symmetric pattern.

    Ties are broken by index so the ordering is deterministic.
    """
    A = sp.csr_array(pattern)
    n = A.shape[0]
    indptr, indices = A.indptr, A.indices
    adj = [set(indices[indptr[i]:indptr[i + 1]].tolist()) for i in range(n)]
    for i in range(n):
        adj[i].discard(i)
    # symmetrise defensively
    for i in range(n):
        for j in adj[i]:
            adj[j].add(i)
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, i = heapq.heappop(heap)
        if done[i] or deg != len(adj[i]):
            continue
        done[i] = True
        order.append(i)
        nbrs = adj[i]
        for a in nbrs:
            s = adj[a]
            s.discard(i)
            s |= nbrs
            s.discard(a)
            heapq.heappush(heap, (len(s), a))
        adj[i] = set()
    return np.asarray(order, dtype=np.int64)


@njit(cache=True)
def _etree(Ap, Ai, n):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i != -1 and i < k:
                nxt = ancestor[i]
                ancestor[i] = k
                if nxt == -1:
                    parent[i] = k
                i = nxt
    return parent


@njit(cache=True)
def _symbolic(Ap, Ai, parent, n):
    """Row patterns of L (topologically ordered) and column layout Lp/Li."""
    mark = np.full(n, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    counts = np.ones(n, dtype=np.int64)
    # first pass: sizes
    total = 0
    for k in range(n):
        mark[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            while i < k and mark[i] != k:
                mark[i] = k
                counts[i] += 1
                total += 1
                i = parent[i]
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    row_idx = np.empty(total, dtype=np.int64)
    mark[:] = -1
    pos = 0
    for k in range(n):
        top = n
        mark[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i > k:
                continue
            length = 0
            while mark[i] != k:
                stack[length] = i
                length += 1
                mark[i] = k
                i = parent[i]
            while length > 0:
                top -= 1
                length -= 1
                stack[top] = stack[length]
        # stack[top:n] is topologically ordered; copy out
        for q in range(top, n):
            row_idx[pos] = stack[q]
            pos += 1
        row_ptr[k + 1] = pos
    Lp = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + counts[j]
    Li = np.empty(Lp[n], dtype=np.int64)
    c = Lp[:-1].copy()
    for k in range(n):
        Li[c[k]] = k
        c[k] += 1
        for q in range(row_ptr[k], row_ptr[k + 1]):
            j = row_idx[q]
            Li[c[j]] = k
            c[j] += 1
    return row_ptr, row_idx, Lp, Li


@njit(cache=True, nogil=True)
def _numeric(Ap, Ai, Ax, row_ptr, row_idx, Lp, Li, n, Lx):
    x = np.zeros(n)
    c = Lp[:-1].copy()
    for k in range(n):
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i <= k:
                x[i] = Ax[p]
        d = x[k]
        x[k] = 0.0
        for q in range(row_ptr[k], row_ptr[k + 1]):
            j = row_idx[q]
            lki = x[j] / Lx[Lp[j]]
            x[j] = 0.0
            for p in range(Lp[j] + 1, c[j]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            Lx[c[j]] = lki
            c[j] += 1
        if not d > 0.0:
            return k + 1
        Lx[Lp[k]] = math.sqrt(d)
        c[k] += 1
    return 0


@njit(cache=True, nogil=True)
def _forward(Lp, Li, Lx, b):
    n = Lp.shape[0] - 1
    for j in range(n):
        b[j] /= Lx[Lp[j]]
        bj = b[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            b[Li[p]] -= Lx[p] * bj


@njit(cache=True, nogil=True)
def _backward(Lp, Li, Lx, b):
    n = Lp.shape[0] - 1
    for j in range(n - 1, -1, -1):
        s = b[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * b[Li[p]]
        b[j] = s / Lx[Lp[j]]


@njit(cache=True, nogil=True)
def _lookup(Lp, Li, S, r, c):
    # S[r, c] with r >= c; rows within a column are sorted
    lo = Lp[c]
    hi = Lp[c + 1] - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        v = Li[mid]
        if v == r:
            return S[mid]
        if v < r:
            lo = mid + 1
        else:
            hi = mid - 1
    return np.nan


@njit(cache=True, nogil=True)
def _takahashi(Lp, Li, Lx):
    """Entries of (L L')^-1 on the pattern of L."""
    n = Lp.shape[0] - 1
    S = np.zeros(Lx.shape[0])
    for j in range(n - 1, -1, -1):
        ljj = Lx[Lp[j]]
        for pp in range(Lp[j + 1] - 1, Lp[j] - 1, -1):
            i = Li[pp]
            s = 0.0
            for q in range(Lp[j] + 1, Lp[j + 1]):
                k = Li[q]
                if k >= i:
                    s += Lx[q] * _lookup(Lp, Li, S, k, i)
                else:
                    s += Lx[q] * _lookup(Lp, Li, S, i, k)
            if i == j:
                S[pp] = 1.0 / (ljj * ljj) - s / ljj
            else:
                S[pp] = -s / ljj
    return S


class SparseFactor:
    """L L' = P H P' with L in compressed-column form."""

    def __init__(self, analysis, Lx):
        self.analysis = analysis
        self.Lx = Lx

    @property
    def n(self):
        return self.analysis.n

    def logdet(self) -> float:
        a = self.analysis
        return 2.0 * float(np.sum(np.log(self.Lx[a.Lp[:-1]])))

    def solve(self, b):
        a = self.analysis
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            return np.column_stack([self.solve(b[:, k]) for k in range(b.shape[1])])
        y = np.ascontiguousarray(b[a.perm])
        _forward(a.Lp, a.Li, self.Lx, y)
        _backward(a.Lp, a.Li, self.Lx, y)
        out = np.empty_like(y)
        out[a.perm] = y
        return out

    def diag_inverse(self):
        a = self.analysis
        S = _takahashi(a.Lp, a.Li, self.Lx)
        out = np.empty(a.n)
        out[a.perm] = S[a.Lp[:-1]]
        return out


class DenseFactor:
    def __init__(self, H):
        Hd = H.toarray() if sp.issparse(H) else np.asarray(H, dtype=float)
        try:
            self.L = np.linalg.cholesky(Hd)
        except np.linalg.LinAlgError:
            raise NumericalError("posterior precision is not positive definite") from None
        self.n = Hd.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def solve(self, b):
        return sla.cho_solve((self.L, True), np.asarray(b, dtype=float))

    def diag_inverse(self):
        Linv = sla.solve_triangular(self.L, np.eye(self.n), lower=True)
        return np.einsum("ij,ij->j", Linv, Linv)


class CholeskyAnalysis:
    """Symbolic analysis of a fixed sparsity pattern.

    Matrices passed to :meth:`factorize` must have their nonzeros inside
    the analysed pattern.
    """

    def __init__(self, pattern):
        P = sp.csr_array(pattern)
        P = sp.csr_array((P + P.T) != 0)
        self.n = P.shape[0]
        self._pattern = P
        self._symbolic_done = False

    def _analyse(self):
        P = self._pattern
        self.perm = minimum_degree(P)
        Pp = sp.csc_array(P[self.perm][:, self.perm])
        U = sp.csc_array(sp.triu(Pp, format="csc"))
        U.sort_indices()
        Ap, Ai = U.indptr.astype(np.int64), U.indices.astype(np.int64)
        self.Ap, self.Ai = Ap, Ai
        self.iperm = np.empty(self.n, dtype=np.int64)
        self.iperm[self.perm] = np.arange(self.n)
        cols = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(Ap))
        self._keys = cols * self.n + Ai
        self.parent = _etree(Ap, Ai, self.n)
        self.row_ptr, self.row_idx, self.Lp, self.Li = _symbolic(Ap, Ai, self.parent, self.n)
        self._symbolic_done = True

    @property
    def nnz_factor(self) -> int:
        if not self._symbolic_done:
            self._analyse()
        return int(self.Lp[-1])

    @property
    def nnz_upper(self) -> int:
        if not self._symbolic_done:
            self._analyse()
        return int(self.Ap[-1])

    def positions(self, rows, cols):
        """Slots of entries (rows[k], cols[k]) in the permuted upper-triangular
        storage used by :meth:`factorize_upper`. Either triangle may be given."""
        if not self._symbolic_done:
            self._analyse()
        pr = self.iperm[np.asarray(rows, dtype=np.int64)]
        pc = self.iperm[np.asarray(cols, dtype=np.int64)]
        keys = np.maximum(pr, pc) * self.n + np.minimum(pr, pc)
        pos = np.searchsorted(self._keys, keys)
        if keys.size and (pos.max(initial=0) >= self._keys.size or np.any(self._keys[pos] != keys)):
            raise ValueError("entry outside the analysed sparsity pattern")
        return pos

    def factorize_upper(self, data):
        """Factor the matrix whose permuted upper triangle holds ``data``."""
        Lx = np.zeros(self.Lp[-1])
        status = _numeric(self.Ap, self.Ai, np.ascontiguousarray(data, dtype=float),
                          self.row_ptr, self.row_idx, self.Lp, self.Li, self.n, Lx)
        if status:
            raise NumericalError(f"posterior precision is not positive definite (pivot {status - 1})")
        return SparseFactor(self, Lx)

    def factorize(self, H):
        if not _accel.use_numba():
            return DenseFactor(H)
        if not self._symbolic_done:
            self._analyse()
        Hp = sp.csc_array(sp.csc_array(H)[self.perm][:, self.perm])
        U = sp.csc_array(sp.triu(Hp, format="csc"))
        U.sort_indices()
        Lx = np.zeros(self.Lp[-1])
        status = _numeric(
            U.indptr.astype(np.int64), U.indices.astype(np.int64), U.data.astype(float),
            self.row_ptr, self.row_idx, self.Lp, self.Li, self.n, Lx,
        )
        if status:
            raise NumericalError(f"posterior precision is not positive definite (pivot {status - 1})")
        return SparseFactor(self, Lx)


def cholesky(H):
    """One-shot factorisation (analysis + numeric) of a sparse SPD matrix."""
    return CholeskyAnalysis(H).factorize(H)
