"""Infrared-cutoff comparison experiments, the scaling transformation, and a
single Feshbach decimation step (the first renormalization iterate)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fock
from .errors import NumericalError, SingularBlockError, ValidationError
from .fock import ModeGrid, SparseOperator
from .model import ModelSpec, build_hamiltonian
from .spectral import DENSE_CAP, ResonanceEstimate, track_resonance

COND_MAX = 1e12
EXPERIMENT_COLUMNS = ("sigma", "lambda_full_re", "lambda_full_im", "lambda_cut_re",
                      "lambda_cut_im", "diff_abs", "gap_over_sigma", "slope_running")


def _above_sector_indices(spec: ModelSpec, sigma: float) -> np.ndarray:
    """Indices of product-basis states with no boson below sigma."""
    basis = spec.basis()
    below = spec.grid.nodes < sigma
    keep_fock = np.array([not any(s[m] for m in np.nonzero(below)[0])
                          for s in basis.states])
    nlev = spec.particle.n_levels
    mask = np.tile(keep_fock, nlev)
    return np.nonzero(mask)[0]


def sector_gap(spec: ModelSpec, theta: complex, g: float, sigma: float,
               lam_cut: complex, dense_cap: int = DENSE_CAP) -> float:
    """Distance from lam_cut to the rest of the cutoff spectrum, measured in
    the zero-soft-boson sector (the discrete analogue of H^{>=sigma})."""
    H = build_hamiltonian(spec, theta, g, sigma, "cutoff").matrix
    idx = _above_sector_indices(spec, spec.grid.snap_sigma(sigma))
    sub = H.mat.tocsr()[idx][:, idx].toarray()
    if sub.shape[0] > dense_cap:
        raise ValidationError("sector too large for the dense gap measurement")
    vals = np.linalg.eigvals(sub)
    d = np.abs(vals - lam_cut)
    d = d[d > 1e-9]
    return float(d.min())


@dataclass
class IrGapRow:
    sigma: float
    lam_full: complex
    lam_cut: complex
    diff: float
    gap_over_sigma: float
    slope_running: float
    resolvable: bool

    def row(self) -> dict:
        return {"sigma": self.sigma,
                "lambda_full_re": self.lam_full.real, "lambda_full_im": self.lam_full.imag,
                "lambda_cut_re": self.lam_cut.real, "lambda_cut_im": self.lam_cut.imag,
                "diff_abs": self.diff, "gap_over_sigma": self.gap_over_sigma,
                "slope_running": self.slope_running}


@dataclass
class IrGapResult:
    rows: list
    slope: float
    slope_predicted: float
    monotone: bool


def ir_gap_experiment(spec: ModelSpec, theta: complex, g: float, j: int,
                      sigma_list, dense_cap: int = DENSE_CAP) -> IrGapResult:
    """|lambda_{j,g} - lambda^{>=sigma}_{j,g}| per sigma with the fitted
    log-log slope (prediction 1 + mu) and the sector gap over sigma."""
    sigma_list = sorted(float(s) for s in sigma_list)
    omega = spec.grid.omega
    for s in sigma_list:
        if not (spec.grid.k_min < s < spec.grid.k_max):
            raise ValidationError(f"sigma={s} outside grid support")
        if int(np.sum(omega < s)) < 4:
            raise ValidationError(f"sigma={s} has fewer than 4 grid nodes below it")
    full = track_resonance(spec, theta, [0.0, g], j, dense_cap=dense_cap)[-1]
    rows = []
    diffs = []
    for s in sigma_list:
        cut = track_resonance(spec, theta, [0.0, g], j, sigma=s,
                              dense_cap=dense_cap)[-1]
        diff = abs(full.value - cut.value)
        resolvable = diff > 10.0 * max(full.residual, cut.residual, 1e-14)
        gap = sector_gap(spec, theta, g, s, cut.value, dense_cap=dense_cap)
        if resolvable:
            diffs.append((s, diff))
        if len(diffs) >= 2:
            xs, ys = zip(*diffs)
            slope = float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
        else:
            slope = float("nan")
        rows.append(IrGapRow(sigma=s, lam_full=full.value, lam_cut=cut.value,
                             diff=diff, gap_over_sigma=gap / spec.grid.snap_sigma(s),
                             slope_running=slope, resolvable=resolvable))
    if len(diffs) >= 2:
        xs, ys = zip(*diffs)
        slope = float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
    else:
        slope = float("nan")
    monotone = all(b[1] >= a[1] for a, b in zip(diffs, diffs[1:]))
    return IrGapResult(rows=rows, slope=slope,
                       slope_predicted=1.0 + spec.form.mu, monotone=monotone)


def sub_fock_below(spec: ModelSpec, sigma: float):
    """Sub-grid and truncated Fock basis of the modes below sigma."""
    snapped = spec.grid.snap_sigma(sigma)
    sub = spec.grid.restrict(spec.grid.k_min, snapped)
    return sub, fock.enumerate_basis(sub, spec.n_max)


def scale_transform(H: SparseOperator, subgrid: ModeGrid, rho: float,
                    include_dilatation: bool = True):
    """Scaling map on an operator over the sub-Fock space of [0, sigma].

    S_rho relabels mode momenta k -> k/rho (exact for geometric grids when
    rho is an integer power of the edge ratio); the dilatation part A_rho
    multiplies the operator by 1/rho.  Returns (operator, relabeled grid).
    """
    if subgrid.kind != "geometric":
        raise ValidationError("scale_transform requires a geometric sub-grid")
    if rho <= 0:
        raise ValidationError("rho must be positive")
    p = np.log(rho) / np.log(subgrid.ratio)
    if abs(p - round(p)) > 1e-9:
        raise ValidationError(
            f"rho={rho} is not an integer power of the grid ratio {subgrid.ratio:.6f}")
    mat = H.scaled(1.0 / rho) if include_dilatation else H
    return mat, subgrid.scaled(1.0 / rho)


def cutoff_resonance(spec: ModelSpec, theta: complex, g: float, j: int,
                     sigma: float, dense_cap: int = DENSE_CAP) -> ResonanceEstimate:
    return track_resonance(spec, theta, [0.0, g], j, sigma=sigma,
                           dense_cap=dense_cap)[-1]


@dataclass
class DecimationResult:
    rho: float
    sigma: float
    lam_cut: complex
    h_eff: np.ndarray
    field_energies: np.ndarray
    e_z: complex
    t_diag: np.ndarray          # pairs (field energy, diagonal entry)
    w_norm: float
    cond: float


class Decimator:
    """First Feshbach decimation step at fixed (theta, g, sigma, rho0).

    The projection is (cutoff resonance eigenvector) tensor (soft-field
    states with energy <= rho0), assembled on the shared truncated space;
    components pushed past the total-boson cap are dropped.
    """

    def __init__(self, spec: ModelSpec, theta: complex, g: float, sigma: float,
                 rho0: float, cutoff_est: ResonanceEstimate | None = None,
                 j: int = 1, dense_cap: int = DENSE_CAP):
        if rho0 <= 0:
            raise ValidationError("rho0 must be positive")
        self.spec, self.theta, self.g = spec, complex(theta), float(g)
        self.sigma = spec.grid.snap_sigma(sigma)
        self.rho0 = float(rho0)
        if cutoff_est is None:
            cutoff_est = cutoff_resonance(spec, theta, g, j, sigma, dense_cap)
        self.lam_cut = cutoff_est.value
        basis = spec.basis()
        nlev = spec.particle.n_levels
        v = cutoff_est.right_vec / np.linalg.norm(cutoff_est.right_vec)
        below = np.nonzero(spec.grid.nodes < self.sigma)[0]
        above_idx = _above_sector_indices(spec, self.sigma)
        out_norm = np.linalg.norm(np.delete(v, above_idx))
        if out_norm > 1e-8:
            raise NumericalError(
                f"cutoff eigenvector has soft-boson weight {out_norm:.2e}; "
                "not a below-vacuum branch")

        sub_states = []
        for total in range(spec.n_max + 1):
            sub_states.extend(fock._compositions(total, len(below)))
        sub_states = [b for b in sub_states
                      if sum(o * spec.grid.omega[m] for o, m in zip(b, below)) <= rho0 + 1e-15]
        sub_states.sort(key=lambda b: (sum(b), b))

        sector = [(i, basis.states[i % basis.dim], i // basis.dim)
                  for i in above_idx]
        cols, energies = [], []
        for b in sub_states:
            nb = sum(b)
            phi = np.zeros(spec.dim, dtype=complex)
            for i_full, s, lev in sector:
                if sum(s) + nb > spec.n_max:
                    continue
                t = list(s)
                for m, occ in zip(below, b):
                    t[m] += occ
                phi[lev * basis.dim + basis.index[tuple(t)]] = v[i_full]
            nrm = np.linalg.norm(phi)
            if nrm < 1e-12:
                continue
            cols.append(phi / nrm)
            energies.append(float(sum(o * spec.grid.omega[m] for o, m in zip(b, below))))
        self.basis_cols = np.stack(cols, axis=1)
        self.energies = np.array(energies)
        self.h_full = build_hamiltonian(spec, theta, g).matrix.toarray()
        self._proj = self.basis_cols @ self.basis_cols.conj().T

    def at(self, z: complex, check_cond: bool = True) -> DecimationResult:
        if abs(z - self.lam_cut) > 0.5 * self.sigma + 1e-12:
            raise ValidationError(
                f"z={z} outside the disc D(lambda_cut, sigma/2)")
        n = self.h_full.shape[0]
        U = self.basis_cols
        Hm = self.h_full - z * np.eye(n)
        Q = np.eye(n) - self._proj
        A = Q @ Hm @ Q + self._proj
        cond = float(np.linalg.cond(A)) if check_cond else float("nan")
        if check_cond and (not np.isfinite(cond) or cond > COND_MAX):
            raise SingularBlockError(f"decimated block condition {cond:.3e}")
        try:
            X = np.linalg.solve(A, Q @ (Hm @ U))
        except np.linalg.LinAlgError as exc:
            raise SingularBlockError(f"decimated block singular at z={z}") from exc
        F = U.conj().T @ (Hm @ U) - U.conj().T @ (Hm @ (Q @ X))
        diag = np.diag(F)
        w_norm = float(np.linalg.norm(F - np.diag(diag), 2))
        return DecimationResult(rho=self.rho0, sigma=self.sigma, lam_cut=self.lam_cut,
                                h_eff=F, field_energies=self.energies,
                                e_z=complex(F[0, 0]),
                                t_diag=np.stack([self.energies, diag], axis=1),
                                w_norm=w_norm, cond=cond)


def decimate(spec: ModelSpec, theta: complex, g: float, z: complex, sigma: float,
             rho0: float, cutoff_est: ResonanceEstimate | None = None,
             j: int = 1, dense_cap: int = DENSE_CAP) -> DecimationResult:
    """One sharp Feshbach decimation step of H - z onto the soft subspace."""
    return Decimator(spec, theta, g, sigma, rho0, cutoff_est, j, dense_cap).at(z)


def ez_root(spec: ModelSpec, theta: complex, g: float, sigma: float, rho0: float,
            j: int, tol: float = 1e-12, maxit: int = 30,
            dense_cap: int = DENSE_CAP) -> complex:
    """First renormalization iterate: the root of z -> E_z.

    Newton from the cutoff resonance; returns lambda^{(1)}, which improves on
    lambda^{>=sigma} as an approximation of the full resonance.
    """
    if g == 0:
        return complex(spec.particle.levels[j])
    est = cutoff_resonance(spec, theta, g, j, sigma, dense_cap)
    dec = Decimator(spec, theta, g, sigma, rho0, cutoff_est=est, j=j, dense_cap=dense_cap)
    z = est.value
    h = 1e-6 * dec.sigma
    e = dec.at(z).e_z
    for _ in range(maxit):
        if abs(e) <= tol * (1.0 + abs(z)):
            return complex(z)
        de = (dec.at(z + h, check_cond=False).e_z - dec.at(z - h, check_cond=False).e_z) / (2 * h)
        step = -e / de
        z_new = z + step
        e_new = dec.at(z_new, check_cond=False).e_z
        if abs(e_new) > abs(e):
            z_new = z + 0.5 * step
            e_new = dec.at(z_new, check_cond=False).e_z
        z, e = z_new, e_new
    raise NumericalError(f"ez_root Newton did not converge; |E_z| = {abs(e):.3e}")
