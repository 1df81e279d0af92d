"""Feshbach-Schur reduction, the scalar root function b(z), and the
second-order (Fermi Golden Rule) width coefficients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, SingularBlockError, ValidationError
from .fock import SparseOperator
from .model import ModelSpec, build_hamiltonian, radial_amplitude, unperturbed_state
from .spectral import ResonanceEstimate

COND_MAX = 1e12
NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50
G2_OVER_SIGMA_MAX = 0.05
PV_NODES = 400


@dataclass
class FeshbachResult:
    matrix: np.ndarray        # reduced operator on an orthonormal basis of Ran P
    basis: np.ndarray         # the orthonormal columns spanning Ran P
    cond: float               # condition estimate of the decimated block


def _range_basis(P: np.ndarray) -> np.ndarray:
    u, s, _ = np.linalg.svd(P)
    rank = int(np.sum(s > 0.5))
    if rank == 0:
        raise ValidationError("projector has rank 0")
    return u[:, :rank]


def feshbach_map(H: SparseOperator | np.ndarray, P: SparseOperator | np.ndarray | None = None,
                 basis: np.ndarray | None = None) -> FeshbachResult:
    """F_P(H) = PHP - P H Pbar [Pbar H Pbar]^{-1} Pbar H P on Ran P.

    Accepts either an idempotent projector P (possibly oblique) or an
    explicit orthonormal basis of Ran P (then P is taken orthogonal).
    """
    Hd = H.toarray() if isinstance(H, SparseOperator) else np.asarray(H, dtype=complex)
    n = Hd.shape[0]
    if basis is not None:
        U = np.asarray(basis, dtype=complex)
        if U.ndim == 1:
            U = U[:, None]
        gram = U.conj().T @ U
        if not np.allclose(gram, np.eye(U.shape[1]), atol=1e-10):
            raise ValidationError("basis columns must be orthonormal")
        Pd = U @ U.conj().T
    else:
        Pd = P.toarray() if isinstance(P, SparseOperator) else np.asarray(P, dtype=complex)
        if np.abs(Pd @ Pd - Pd).max() > 1e-8:
            raise ValidationError("P is not idempotent to 1e-8")
        U = _range_basis(Pd)
    W = la.null_space(Pd)  # orthonormal basis of Ran(1-P) = ker P
    if W.shape[1] == 0:
        raise ValidationError("projector has full rank; nothing to decimate")
    Qd = np.eye(n) - Pd
    B = W.conj().T @ (Qd @ Hd @ Qd) @ W
    cond = float(np.linalg.cond(B))
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SingularBlockError(f"decimated block condition {cond:.3e} exceeds {COND_MAX:.0e}")
    rhs = W.conj().T @ (Qd @ (Hd @ (Pd @ U)))
    X = la.solve(B, rhs)
    PHP = U.conj().T @ (Pd @ (Hd @ (Pd @ U)))
    cross = U.conj().T @ (Pd @ (Hd @ (Qd @ (W @ X))))
    return FeshbachResult(matrix=PHP - cross, basis=U, cond=cond)


@dataclass
class SchurReduction:
    P: SparseOperator
    ran_dim: int
    map_of: Callable[[complex], FeshbachResult]
    b_of: Callable[[complex], complex] | None  # rank-one case only


def schur_reduction(H: SparseOperator, P: SparseOperator) -> SchurReduction:
    Pd = P.toarray()
    if np.abs(Pd @ Pd - Pd).max() > 1e-10:
        raise ValidationError("P is not idempotent to 1e-10")
    rank = int(round(np.trace(Pd).real))
    ident = sp.identity(H.dim, dtype=complex, format="csr")

    def map_of(z: complex) -> FeshbachResult:
        return feshbach_map(SparseOperator(H.mat - z * ident), P)

    b_of = None
    if rank == 1:
        def b_of(z: complex) -> complex:
            return complex(map_of(z).matrix[0, 0])

    return SchurReduction(P=P, ran_dim=rank, map_of=map_of, b_of=b_of)


def _rank_one_b(H: SparseOperator, i0: int):
    """Scalar reduction onto basis vector i0: closures for b(z) and b'(z).

    b(z) = (H[i0,i0] - z) - r (D - z)^{-1} c with D the decimated block.
    """
    n = H.dim
    keep = np.arange(n) != i0
    csc = H.mat.tocsc()
    D = csc[keep][:, keep]
    c = csc[keep][:, [i0]].toarray().ravel()
    r = csc[[i0]][:, keep].toarray().ravel()
    h00 = complex(csc[i0, i0])
    ident = sp.identity(n - 1, dtype=complex, format="csc")

    def b_and_db(z: complex):
        try:
            lu = spla.splu((D - z * ident).tocsc())
        except RuntimeError as exc:
            raise SingularBlockError(f"decimated block singular at z={z}: {exc}") from exc
        x = lu.solve(c)
        b = h00 - z - r @ x
        db = -1.0 - r @ lu.solve(x)
        return b, db

    return b_and_db


def schur_resonance(spec: ModelSpec, theta: complex, g: float, j: int,
                    sigma: float) -> ResonanceEstimate:
    """Newton root of b(z) = lambda_j - z + a(z) for the cutoff resonance.

    The projection is (level j) (x) vacuum; validity gates g^2/sigma <= 0.05
    and sigma < d_j sin|Im theta| are enforced.
    """
    theta = complex(theta)
    if theta.imag == 0 and g > 0:
        raise ValidationError("schur_resonance requires Im theta != 0")
    d_j = spec.particle.gap(j)
    if not sigma < d_j * abs(np.sin(theta.imag)):
        raise ValidationError(
            f"need sigma < d_j sin|Im theta| = {d_j * abs(np.sin(theta.imag)):.4f}")
    if g > 0 and g * g / sigma > G2_OVER_SIGMA_MAX:
        raise ValidationError(
            f"g^2/sigma = {g * g / sigma:.4f} violates the gate {G2_OVER_SIGMA_MAX}")

    H = build_hamiltonian(spec, theta, g, sigma, "cutoff").matrix
    lam_j = complex(spec.particle.levels[j])
    i0 = j * spec.basis().dim  # (level j, vacuum) basis index
    if g == 0:
        psi = unperturbed_state(spec, j)
        return ResonanceEstimate(value=lam_j, right_vec=psi, left_vec=psi.copy(),
                                 method="feshbach", theta=theta, sigma=sigma,
                                 residual=0.0, overlap=1.0)

    b_and_db = _rank_one_b(H, i0)
    z = lam_j
    b, db = b_and_db(z)
    for _ in range(NEWTON_MAXIT):
        if abs(b) < NEWTON_TOL:
            break
        step = -b / db
        z_new = z + step
        b_new, db_new = b_and_db(z_new)
        if abs(b_new) > abs(b):  # damped retry
            z_new = z + 0.5 * step
            b_new, db_new = b_and_db(z_new)
        z, b, db = z_new, b_new, db_new
    else:
        raise NumericalError(f"Newton on b(z) did not converge; |b| = {abs(b):.3e}")
    if abs(z - lam_j) > d_j * abs(np.sin(theta.imag)):
        raise NumericalError(
            f"Newton left the invertibility region around lambda_j: z = {z}")

    # assemble the eigenvector from the Schur complement
    n = H.dim
    keep = np.arange(n) != i0
    csc = H.mat.tocsc()
    ident = sp.identity(n - 1, dtype=complex, format="csc")
    lu = spla.splu((csc[keep][:, keep] - z * ident).tocsc())
    v = np.zeros(n, dtype=complex)
    v[i0] = 1.0
    v[keep] = -lu.solve(csc[keep][:, [i0]].toarray().ravel())
    v /= np.linalg.norm(v)
    w = np.zeros(n, dtype=complex)
    w[i0] = 1.0
    w[keep] = -lu.solve(csc[[i0]][:, keep].conj().toarray().ravel(), trans="H")
    w /= np.linalg.norm(w)
    res = float(np.linalg.norm(H.mat @ v - z * v))
    psi_j = unperturbed_state(spec, j)
    return ResonanceEstimate(value=z, right_vec=v, left_vec=w, method="feshbach",
                             theta=theta, sigma=sigma, residual=res,
                             overlap=float(abs(np.vdot(psi_j, v))))


# --- Fermi Golden Rule coefficients -------------------------------------

@dataclass
class Channel:
    level: int
    k_star: float | None
    width_contribution: float


@dataclass
class FGRCoefficients:
    z_od: complex
    z_d: float
    channels: list
    stable: bool

    @property
    def z(self) -> complex:
        return self.z_od + self.z_d

    def width(self, g: float) -> float:
        """Predicted half-width Gamma_FGR = g^2 Im Z_od."""
        return g * g * self.z_od.imag

    def rows(self) -> list:
        return [{"level_m": c.level,
                 "k_star": c.k_star if c.k_star is not None else float("nan"),
                 "channel_width": c.width_contribution,
                 "Z_od_re": self.z_od.real, "Z_od_im": self.z_od.imag,
                 "Z_d": self.z_d} for c in self.channels]


def midpoint_quad(f, a: float, b: float, n: int) -> float:
    xs = a + (np.arange(n) + 0.5) * (b - a) / n
    return float(np.sum(f(xs)) * (b - a) / n)


def pv_integral(f, a: float, b: float, x0: float, n: int = PV_NODES,
                richardson: bool = True) -> float:
    """Principal value of int_a^b f(x)/(x - x0) dx for x0 inside (a, b).

    Symmetric midpoint nodes around x0 cancel the odd singular part exactly;
    the leftover edge strip is regular and handled by plain midpoint rule.
    Richardson extrapolation removes the O(h^2) error of the composite rule.
    """
    if not a < x0 < b:
        raise ValidationError("x0 must lie inside (a, b)")

    def once(m: int) -> float:
        half = min(x0 - a, b - x0)
        step = half / m
        xs = x0 + (np.arange(m) + 0.5) * step
        sym = float(np.sum((f(xs) - f(2 * x0 - xs)) / (xs - x0)) * step)
        lo, hi = x0 - half, x0 + half
        rest = 0.0
        if lo > a:
            rest += midpoint_quad(lambda x: f(x) / (x - x0), a, lo, m)
        if hi < b:
            rest += midpoint_quad(lambda x: f(x) / (x - x0), hi, b, m)
        return sym + rest

    m = max(n // 2, 8)
    if not richardson:
        return once(m)
    return (4.0 * once(2 * m) - once(m)) / 3.0


def fgr(spec: ModelSpec, j: int, pv_nodes: int = PV_NODES) -> FGRCoefficients:
    """Second-order coefficients Z_od and Z_d from quadrature.

    Im Z_od = pi sum_{m: lambda_m < lambda_j} |C_jm|^2 |h(k*)|^2 at the
    resonant momenta k* solving omega(k) = lambda_j - lambda_m; the real
    part is a principal-value integral over the grid support.
    """
    if not 0 <= j < spec.particle.n_levels:
        raise ValidationError(f"level index {j} out of range")
    if spec.kind == "nelson" and spec.form.mu <= 0:
        raise ValidationError("fgr requires mu > 0 or an integrable IR combination")
    a, b = spec.grid.k_min, spec.grid.k_max
    levels = spec.particle.levels
    C = spec.particle.coupling

    def h2(k):
        return np.abs(radial_amplitude(spec, 0.0, k)) ** 2

    z_re, z_im = 0.0, 0.0
    channels = []
    for m in range(spec.particle.n_levels):
        if m == j:
            continue
        w_jm = float(abs(C[j, m]) ** 2)
        if w_jm == 0.0:
            channels.append(Channel(level=m, k_star=None, width_contribution=0.0))
            continue
        delta = float(levels[j] - levels[m])
        if delta > 0 and a < delta < b:
            k_star = delta
            width = np.pi * w_jm * float(h2(k_star))
            z_im += width
            z_re += w_jm * pv_integral(h2, a, b, k_star, n=pv_nodes)
            channels.append(Channel(level=m, k_star=k_star, width_contribution=width))
        else:
            # closed channel (or resonant momentum outside the grid support)
            z_re += w_jm * midpoint_quad(lambda k: h2(k) / (k - delta), a, b, 4 * pv_nodes)
            channels.append(Channel(level=m, k_star=None, width_contribution=0.0))

    z_d = 0.0
    for m in range(spec.particle.n_levels):
        if m == j:
            continue
        w_jm = float(abs(C[j, m]) ** 2)
        if w_jm:
            z_d += w_jm * midpoint_quad(lambda k: h2(k) / k, a, b, 4 * pv_nodes)

    return FGRCoefficients(z_od=complex(z_re, z_im), z_d=z_d, channels=channels,
                           stable=(z_im == 0.0))
