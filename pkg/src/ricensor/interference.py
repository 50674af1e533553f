"""Interference structures and treatment exposures.

An interference matrix ``A`` is stored as compressed sparse rows: row ``i``
lists the individuals ``j`` that may interfere with ``i`` (``A_ij = 1``).
Dense storage is never materialised, since trial-scale populations make an
``n x n`` array infeasible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class InterferenceError(ValueError):
    """Raised for malformed interference structures or exposure inputs."""


@dataclass(frozen=True, eq=False)
class InterferenceMatrix:
    """Fixed 0/1 interference matrix in CSR form.

    Attributes
    ----------
    n : int
        Number of individuals.
    indptr, indices : ndarray
        CSR row pointers and column indices. Row ``i`` is
        ``indices[indptr[i]:indptr[i + 1]]``, sorted and duplicate free.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    _csr: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int32)
        _validate_csr(self.n, indptr, indices)
        indptr.setflags(write=False)
        indices.setflags(write=False)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        data = np.ones(indices.shape[0], dtype=np.float64)
        csr = sp.csr_matrix((data, indices, indptr), shape=(self.n, self.n))
        object.__setattr__(self, "_csr", csr)

    @property
    def row_sums(self) -> np.ndarray:
        """Interference set sizes ``A_i``."""
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return int(self.indices.shape[0])

    @property
    def rows(self) -> list[np.ndarray]:
        return [self.row(i) for i in range(self.n)]

    def row(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edges(self) -> np.ndarray:
        """All ``(i, j)`` pairs with ``A_ij = 1`` as an ``(E, 2)`` array."""
        src = np.repeat(np.arange(self.n, dtype=np.int64), self.row_sums)
        return np.column_stack([src, self.indices.astype(np.int64)])

    def is_symmetric(self) -> bool:
        diff = self._csr - self._csr.T
        return diff.count_nonzero() == 0

    def symmetrized(self) -> "InterferenceMatrix":
        e = self.edges()
        return build_from_edges(e, self.n, symmetric=True)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Return ``A @ x``; ``x`` may be ``(n,)`` or ``(n, k)``."""
        return self._csr @ x

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InterferenceMatrix):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    __hash__ = None  # type: ignore[assignment]


def _validate_csr(n: int, indptr: np.ndarray, indices: np.ndarray) -> None:
    if n < 0:
        raise InterferenceError(f"n must be nonnegative, got {n}")
    if indptr.shape != (n + 1,) or indptr[0] != 0 or indptr[-1] != indices.shape[0]:
        raise InterferenceError("inconsistent CSR row pointers")
    if np.any(np.diff(indptr) < 0):
        raise InterferenceError("row pointers must be nondecreasing")
    if indices.size == 0:
        return
    if indices.min() < 0 or indices.max() >= n:
        raise InterferenceError("neighbor index out of range")
    rows = np.repeat(np.arange(n), np.diff(indptr))
    if np.any(rows == indices):
        i = int(rows[rows == indices][0])
        raise InterferenceError(f"self-edge ({i}, {i}) is not allowed")
    # strictly increasing within each row
    same_row = rows[1:] == rows[:-1]
    if np.any(same_row & (indices[1:] <= indices[:-1])):
        raise InterferenceError("row indices must be strictly increasing")


def build_from_edges(
    edges: Iterable[Sequence[int]] | np.ndarray, n: int, symmetric: bool = False
) -> InterferenceMatrix:
    """Build an interference matrix from ``(i, j)`` pairs meaning ``A_ij = 1``.

    Duplicate pairs are collapsed. With ``symmetric=True`` every pair is also
    inserted as ``(j, i)``.
    """
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges)
    if e.size == 0:
        e = np.empty((0, 2), dtype=np.int64)
    if e.ndim != 2 or e.shape[1] != 2:
        raise InterferenceError("edges must be pairs (i, j)")
    if not np.issubdtype(e.dtype, np.integer):
        if not np.all(np.equal(np.mod(e, 1), 0)):
            raise InterferenceError("edge indices must be integers")
    e = e.astype(np.int64)
    bad = (e < 0) | (e >= n)
    if np.any(bad):
        i, j = e[np.argmax(bad.any(axis=1))]
        raise InterferenceError(f"edge ({i}, {j}) has an index outside [0, {n})")
    loops = e[:, 0] == e[:, 1]
    if np.any(loops):
        i = int(e[np.argmax(loops), 0])
        raise InterferenceError(f"self-edge ({i}, {i}) is not allowed")
    if symmetric:
        e = np.vstack([e, e[:, ::-1]])
    if e.shape[0]:
        e = np.unique(e, axis=0)
    counts = np.bincount(e[:, 0], minlength=n) if e.shape[0] else np.zeros(n, np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return InterferenceMatrix(n, indptr, e[:, 1])


def empty(n: int) -> InterferenceMatrix:
    return InterferenceMatrix(n, np.zeros(n + 1, dtype=np.int64), np.empty(0, np.int32))


@dataclass(frozen=True)
class ExposureVector:
    """Treated-neighbor counts ``T``, proportions ``G`` and optionally ``G*``."""

    T: np.ndarray
    G: np.ndarray
    G_star: np.ndarray | None = None


def _proportion(T: np.ndarray, denom: np.ndarray) -> np.ndarray:
    denom = np.asarray(denom, dtype=np.float64)
    out = np.zeros(np.broadcast(T, denom).shape, dtype=np.float64)
    np.divide(T, denom, out=out, where=np.broadcast_to(denom > 0, out.shape))
    return out


def check_denominators(A: InterferenceMatrix, B: np.ndarray) -> np.ndarray:
    B = np.asarray(B, dtype=np.float64)
    if B.shape != (A.n,):
        raise InterferenceError(f"B has length {B.shape[0]}, expected {A.n}")
    short = B < A.row_sums
    if np.any(short):
        i = int(np.argmax(short))
        raise InterferenceError(
            f"B[{i}] = {B[i]:g} is smaller than the interference set size {A.row_sums[i]}"
        )
    return B


def exposure(A: InterferenceMatrix, z: np.ndarray, B: np.ndarray | None = None) -> ExposureVector:
    """Exposures of every individual to the treatment vector ``z``.

    ``T_i = sum_j A_ij z_j``; ``G_i = T_i / A_i`` (0 when ``A_i = 0``); and
    ``G*_i = T_i / B_i`` when participation denominators ``B`` are given.
    """
    z = np.asarray(z)
    if z.shape != (A.n,):
        raise InterferenceError(f"z has shape {z.shape}, expected ({A.n},)")
    if not np.all((z == 0) | (z == 1)):
        raise InterferenceError("z must be a 0/1 vector")
    T = np.rint(A.matvec(z.astype(np.float64))).astype(np.int64)
    G = _proportion(T, A.row_sums)
    G_star = None
    if B is not None:
        G_star = _proportion(T, check_denominators(A, B))
    return ExposureVector(T=T, G=G, G_star=G_star)


def treated_counts(A: InterferenceMatrix, Z: np.ndarray) -> np.ndarray:
    """Batched ``T`` for assignments stacked as rows of ``Z`` (shape ``(k, n)``)."""
    Z = np.asarray(Z, dtype=np.float64)
    return np.asarray(A.matvec(Z.T)).T


# --------------------------------------------------------------------------
# generators


def gen_poisson_neighbors(
    n: int, mean: float, rng: np.random.Generator, symmetrize: bool = False
) -> InterferenceMatrix:
    """Random interference sets with Poisson(``mean``) sizes, truncated at ``n - 1``.

    Each individual's set is a uniform draw without replacement from the other
    ``n - 1`` individuals, so the result is generally asymmetric.
    """
    if n < 2:
        raise InterferenceError("need n >= 2")
    if not mean > 0:
        raise InterferenceError("mean must be positive")
    sizes = np.minimum(rng.poisson(mean, size=n), n - 1)
    indptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    indices = np.empty(indptr[-1], dtype=np.int32)
    for i in range(n):
        k = int(sizes[i])
        if k == 0:
            continue
        js = rng.choice(n - 1, size=k, replace=False)
        js[js >= i] += 1
        indices[indptr[i] : indptr[i + 1]] = np.sort(js)
    A = InterferenceMatrix(n, indptr, indices)
    return A.symmetrized() if symmetrize else A


def gen_preferential_attachment(n: int, m_edges: int, rng: np.random.Generator) -> InterferenceMatrix:
    """Linear preferential attachment network (symmetric).

    Nodes arrive one at a time; node ``j`` links to ``min(j, m_edges)``
    distinct earlier nodes chosen with probability proportional to
    ``degree + 1``.
    """
    if n < 2:
        raise InterferenceError("need n >= 2")
    if not 1 <= m_edges < n:
        raise InterferenceError("need 1 <= m_edges < n")
    degree = np.zeros(n, dtype=np.float64)
    src: list[np.ndarray] = []
    dst: list[np.ndarray] = []
    for j in range(1, n):
        k = min(j, m_edges)
        w = degree[:j] + 1.0
        targets = rng.choice(j, size=k, replace=False, p=w / w.sum())
        degree[targets] += 1
        degree[j] += k
        src.append(np.full(k, j))
        dst.append(targets)
    edges = np.column_stack([np.concatenate(src), np.concatenate(dst)])
    return build_from_edges(edges, n, symmetric=True)


# --------------------------------------------------------------------------
# edge-list files


def write_edge_list(A: InterferenceMatrix, path: str | Path) -> None:
    """Write ``i j`` lines (0-based), preceded by a ``# n=`` header comment."""
    e = A.edges()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={A.n}\n")
        for i, j in e:
            fh.write(f"{i} {j}\n")


def read_edge_list(path: str | Path, n: int | None = None, symmetric: bool = False) -> InterferenceMatrix:
    """Read an edge list written by :func:`write_edge_list` or by hand.

    ``n`` defaults to the ``# n=`` header; if both are present they must agree.
    Blank lines and ``#`` comments are ignored.
    """
    header_n = None
    pairs: list[tuple[int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("n="):
                    header_n = int(body[2:])
                continue
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InterferenceError(f"{path}:{lineno}: expected 'i j', got {raw.rstrip()!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise InterferenceError(f"{path}:{lineno}: non-integer index in {raw.rstrip()!r}") from None
    if n is None:
        if header_n is None:
            n = 1 + max((max(p) for p in pairs), default=-1)
        else:
            n = header_n
    elif header_n is not None and header_n != n:
        raise InterferenceError(f"{path}: header says n={header_n} but {n} individuals expected")
    return build_from_edges(np.array(pairs, dtype=np.int64).reshape(-1, 2), n, symmetric=symmetric)


def degree_summary(A: InterferenceMatrix) -> dict:
    """Row-sum summary (min, mean, quartiles, max) for parity checks."""
    rs = A.row_sums.astype(np.float64)
    if rs.size == 0:
        return {"n": 0, "edges": 0}
    q1, med, q3 = np.percentile(rs, [25, 50, 75])
    return {
        "n": A.n,
        "edges": A.n_edges,
        "symmetric": A.is_symmetric(),
        "min": float(rs.min()),
        "mean": float(rs.mean()),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "max": float(rs.max()),
    }


def write_degree_summary(A: InterferenceMatrix, path: str | Path) -> None:
    Path(path).write_text(json.dumps(degree_summary(A), indent=2) + "\n", encoding="utf-8")
