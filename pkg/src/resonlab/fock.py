"""Truncated bosonic Fock space over a radial momentum grid.

Provides the mode grid with quadrature weights, enumeration of
occupation-number states capped by a total boson number, and the standard
second-quantized operators (ladder, free field energy, field displacement,
powers of the dispersion) as sparse complex matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ValidationError

DROP_TOL = 1e-14
DIM_CAP = 200_000


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ModeGrid:
    """Radial momentum nodes k_n > 0 with quadrature weights w_n.

    Nodes are midpoints of a partition of [k_min, k_max]; weights are the
    subinterval widths, so constants are integrated exactly.  The geometric
    family has constant edge ratio, which makes k -> k/ratio**p an exact
    node relabeling (used by the scaling transform).
    """

    nodes: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    kind: str  # "geometric" | "linear"

    def __post_init__(self):
        object.__setattr__(self, "nodes", _readonly(np.asarray(self.nodes, dtype=float)))
        object.__setattr__(self, "weights", _readonly(np.asarray(self.weights, dtype=float)))
        object.__setattr__(self, "edges", _readonly(np.asarray(self.edges, dtype=float)))
        if self.nodes.ndim != 1 or len(self.nodes) == 0:
            raise ValidationError("grid must have at least one node")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValidationError("grid nodes must be strictly increasing")
        if np.any(self.nodes <= 0):
            raise ValidationError("grid excludes k = 0; all nodes must be positive")
        if np.any(self.weights <= 0):
            raise ValidationError("all quadrature weights must be positive")

    @classmethod
    def geometric(cls, k_min: float, k_max: float, count: int) -> "ModeGrid":
        if not (0 < k_min < k_max) or count < 1:
            raise ValidationError("need 0 < k_min < k_max and count >= 1")
        edges = k_min * (k_max / k_min) ** (np.arange(count + 1) / count)
        nodes = 0.5 * (edges[:-1] + edges[1:])
        return cls(nodes=nodes, weights=np.diff(edges), edges=edges, kind="geometric")

    @classmethod
    def linear(cls, k_min: float, k_max: float, count: int) -> "ModeGrid":
        if not (0 < k_min < k_max) or count < 1:
            raise ValidationError("need 0 < k_min < k_max and count >= 1")
        edges = np.linspace(k_min, k_max, count + 1)
        nodes = 0.5 * (edges[:-1] + edges[1:])
        return cls(nodes=nodes, weights=np.diff(edges), edges=edges, kind="linear")

    @property
    def count(self) -> int:
        return len(self.nodes)

    @property
    def k_min(self) -> float:
        return float(self.edges[0])

    @property
    def k_max(self) -> float:
        return float(self.edges[-1])

    @property
    def omega(self) -> np.ndarray:
        """Dispersion at the nodes, omega(k) = |k|."""
        return self.nodes

    @property
    def ratio(self) -> float:
        """Edge ratio of a geometric grid."""
        if self.kind != "geometric":
            raise ValidationError("ratio is defined for geometric grids only")
        return float(self.edges[1] / self.edges[0])

    def snap_sigma(self, sigma: float) -> float:
        """Snap an IR cutoff to the nearest subinterval edge.

        Keeps the sharp indicator 1_{k >= sigma} from splitting a node's
        weight: every node is strictly on one side of the returned value.
        """
        if not (self.k_min < sigma < self.k_max):
            raise ValidationError(
                f"sigma={sigma} outside grid range ({self.k_min}, {self.k_max})")
        return float(self.edges[np.argmin(np.abs(self.edges - sigma))])

    def restrict(self, lo: float, hi: float) -> "ModeGrid":
        """Sub-grid of nodes with lo <= k < hi (same family)."""
        mask = (self.nodes >= lo) & (self.nodes < hi)
        if not mask.any():
            raise ValidationError("restriction window contains no nodes")
        idx = np.nonzero(mask)[0]
        edges = self.edges[idx[0]:idx[-1] + 2]
        return ModeGrid(nodes=self.nodes[mask], weights=self.weights[mask],
                        edges=edges, kind=self.kind)

    def scaled(self, factor: float) -> "ModeGrid":
        return ModeGrid(nodes=self.nodes * factor, weights=self.weights * factor,
                        edges=self.edges * factor, kind=self.kind)


@dataclass(frozen=True)
class FockBasis:
    """Occupation-number states with total boson number <= n_max.

    Ordering is graded lexicographic: by total number, then lexicographic
    within each total.  State 0 is the vacuum.
    """

    grid: ModeGrid
    n_max: int
    states: tuple
    index: dict = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def modes(self) -> int:
        return self.grid.count

    def state_vector(self, occupations) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index[tuple(occupations)]] = 1.0
        return v

    def totals(self) -> np.ndarray:
        return np.array([sum(s) for s in self.states])

    def field_energies(self) -> np.ndarray:
        occ = np.array(self.states, dtype=float)
        return occ @ self.grid.omega


def _compositions(total: int, parts: int):
    """All compositions of `total` into `parts` non-negative ints, lex order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_basis(grid: ModeGrid, n_max: int, dim_cap: int = DIM_CAP) -> FockBasis:
    if n_max < 0:
        raise ValidationError("n_max must be >= 0")
    m = grid.count
    dim = math.comb(m + n_max, n_max)
    if dim > dim_cap:
        raise CapacityError(
            f"Fock dimension C({m}+{n_max},{n_max}) = {dim} exceeds cap {dim_cap}")
    states = []
    for total in range(n_max + 1):
        states.extend(_compositions(total, m))
    index = {s: i for i, s in enumerate(states)}
    return FockBasis(grid=grid, n_max=n_max, states=tuple(states), index=index)


@dataclass(frozen=True)
class SparseOperator:
    """Complex sparse matrix carrier; entries below DROP_TOL are not stored."""

    mat: sp.csr_matrix
    hermitian_hint: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.mat, dtype=complex)
        if m.shape[0] != m.shape[1]:
            raise ValidationError("SparseOperator must be square")
        m.data[np.abs(m.data) <= DROP_TOL] = 0.0
        m.eliminate_zeros()
        m.sort_indices()
        object.__setattr__(self, "mat", m)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @property
    def nnz(self) -> int:
        return self.mat.nnz

    def toarray(self) -> np.ndarray:
        return self.mat.toarray()

    def dagger(self) -> "SparseOperator":
        return SparseOperator(self.mat.conj().T.tocsr(), hermitian_hint=self.hermitian_hint)

    def scaled(self, factor: complex) -> "SparseOperator":
        herm = self.hermitian_hint and abs(complex(factor).imag) == 0.0
        return SparseOperator(self.mat * factor, hermitian_hint=herm)

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.mat + other.mat)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.mat - other.mat)

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self.mat @ other.mat)
        return self.mat @ other

    def entry(self, row: int, col: int) -> complex:
        return complex(self.mat[row, col])

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        d = self.mat - self.mat.conj().T
        if d.nnz == 0:
            return True
        scale = max(np.abs(self.mat.data).max(), 1.0) if self.mat.nnz else 1.0
        return np.abs(d.data).max() <= tol * scale

    @classmethod
    def identity(cls, dim: int) -> "SparseOperator":
        return cls(sp.identity(dim, dtype=complex, format="csr"), hermitian_hint=True)

    @classmethod
    def from_dense(cls, a: np.ndarray, hermitian_hint: bool = False) -> "SparseOperator":
        return cls(sp.csr_matrix(np.asarray(a, dtype=complex)), hermitian_hint=hermitian_hint)

    @classmethod
    def diagonal(cls, values: np.ndarray) -> "SparseOperator":
        vals = np.asarray(values, dtype=complex)
        herm = bool(np.all(vals.imag == 0.0))
        return cls(sp.diags(vals, format="csr"), hermitian_hint=herm)


def kron(a: SparseOperator, b: SparseOperator) -> SparseOperator:
    return SparseOperator(sp.kron(a.mat, b.mat, format="csr"),
                          hermitian_hint=a.hermitian_hint and b.hermitian_hint)


def ladder(basis: FockBasis, mode: int, kind: str) -> SparseOperator:
    """Annihilation or creation operator for one mode.

    Creation out of the top total-number shell maps to zero (truncation).
    """
    if not 0 <= mode < basis.modes:
        raise ValidationError(f"mode {mode} out of range")
    if kind not in ("annihilate", "create"):
        raise ValidationError("kind must be 'annihilate' or 'create'")
    rows, cols, vals = [], [], []
    for i, s in enumerate(basis.states):
        if kind == "annihilate":
            if s[mode] > 0:
                t = list(s)
                t[mode] -= 1
                rows.append(basis.index[tuple(t)])
                cols.append(i)
                vals.append(math.sqrt(s[mode]))
        else:
            if sum(s) < basis.n_max:
                t = list(s)
                t[mode] += 1
                rows.append(basis.index[tuple(t)])
                cols.append(i)
                vals.append(math.sqrt(s[mode] + 1))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=complex)
    return SparseOperator(mat.tocsr())


def field_energy(basis: FockBasis, scale: complex = 1.0) -> SparseOperator:
    """scale * sum_n omega_n a^dag_n a_n, diagonal in the occupation basis."""
    return SparseOperator.diagonal(scale * basis.field_energies())


def number_operator(basis: FockBasis) -> SparseOperator:
    return SparseOperator.diagonal(basis.totals().astype(complex))


def dgamma_power(basis: FockBasis, exponent: float) -> SparseOperator:
    """Second quantization of omega^exponent: diag sum_n omega_n^exponent m_n."""
    wpow = basis.grid.omega ** exponent
    occ = np.array(basis.states, dtype=float)
    return SparseOperator.diagonal(occ @ wpow)


def field_phi(basis: FockBasis, couplings: np.ndarray,
              conjugate_on_create: bool = True) -> SparseOperator:
    """Displacement-type field operator from per-mode couplings g_n.

    conjugate_on_create=True gives sum_n (conj(g_n) a^dag_n + g_n a_n),
    hermitian for any couplings.  False gives sum_n g_n (a^dag_n + a_n),
    the analytic continuation used for complex-deformed couplings.
    """
    g = np.asarray(couplings, dtype=complex)
    if len(g) != basis.modes:
        raise ValidationError(f"need {basis.modes} couplings, got {len(g)}")
    gc = np.conj(g) if conjugate_on_create else g
    rows, cols, vals = [], [], []
    for i, s in enumerate(basis.states):
        total = sum(s)
        for n in range(basis.modes):
            if g[n] == 0 and gc[n] == 0:
                continue
            if s[n] > 0:  # annihilation amplitude into column i
                t = list(s)
                t[n] -= 1
                rows.append(basis.index[tuple(t)])
                cols.append(i)
                vals.append(g[n] * math.sqrt(s[n]))
            if total < basis.n_max:  # creation
                t = list(s)
                t[n] += 1
                rows.append(basis.index[tuple(t)])
                cols.append(i)
                vals.append(gc[n] * math.sqrt(s[n] + 1))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=complex)
    herm = conjugate_on_create or bool(np.all(g.imag == 0.0))
    return SparseOperator(mat.tocsr(), hermitian_hint=herm)
