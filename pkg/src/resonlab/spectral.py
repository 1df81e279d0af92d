"""Eigenvalue machinery: dense oracle, shift-invert iteration near a target,
continuation-in-g resonance tracking, and theta-independence diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import model as model_mod
from .errors import BranchLossError, NumericalError, ValidationError
from .fock import SparseOperator
from .model import ModelSpec, build_hamiltonian, unperturbed_state

DENSE_CAP = 3000
ARNOLDI_NCV = 40
ARNOLDI_TOL = 1e-10
ARNOLDI_RESTARTS = 20
RESIDUAL_TOL = 1e-8
OVERLAP_MIN = 0.5
BIORTH_TOL = 1e-6

SWEEP_COLUMNS = ("g", "theta_re", "theta_im", "sigma", "lambda_re", "lambda_im",
                 "residual", "overlap", "method")


@dataclass
class ResonanceEstimate:
    value: complex
    right_vec: np.ndarray
    left_vec: np.ndarray | None
    method: str
    theta: complex
    sigma: float | None
    residual: float
    overlap: float

    def row(self, g: float) -> dict:
        return {
            "g": g, "theta_re": self.theta.real, "theta_im": self.theta.imag,
            "sigma": self.sigma if self.sigma is not None else float("nan"),
            "lambda_re": self.value.real, "lambda_im": self.value.imag,
            "residual": self.residual, "overlap": self.overlap, "method": self.method,
        }


def _residual(H: SparseOperator, lam: complex, v: np.ndarray) -> float:
    return float(np.linalg.norm(H.mat @ v - lam * v) / np.linalg.norm(v))


def dense_spectrum(H: SparseOperator, dense_cap: int = DENSE_CAP):
    """Full non-hermitian eigendecomposition, sorted by real part.

    Returns a list of (eigenvalue, right eigenvector) pairs.
    """
    if H.dim > dense_cap:
        raise ValidationError(f"dimension {H.dim} exceeds dense cap {dense_cap}")
    try:
        vals, vecs = la.eig(H.toarray())
    except la.LinAlgError as exc:  # pragma: no cover - pathological input
        raise NumericalError(f"dense eigensolver failed: {exc}") from exc
    order = np.lexsort((vals.imag, vals.real))
    return [(vals[i], vecs[:, i]) for i in order]


def _left_vector(H: SparseOperator, lam: complex, right: np.ndarray) -> np.ndarray:
    """Left eigenvector by inverse iteration on the adjoint system."""
    n = H.dim
    shift = lam + 1e-8 * (1.0 + abs(lam))
    lu = spla.splu(sp.csc_matrix(H.mat - shift * sp.identity(n, dtype=complex)))
    w = right.conj()
    for _ in range(3):
        w = lu.solve(w, trans="H")
        w = w / np.linalg.norm(w)
    return w


def _check_biorthogonal(values, lefts, rights) -> None:
    k = len(values)
    if k < 2 or any(l is None for l in lefts):
        return
    for i in range(k):
        for j in range(k):
            if i == j or abs(values[i] - values[j]) < 1e-12:
                continue
            num = abs(np.vdot(lefts[i], rights[j]))
            den = np.linalg.norm(lefts[i]) * np.linalg.norm(rights[j])
            if num / den > BIORTH_TOL:
                raise NumericalError(
                    f"biorthogonality violated between eigenvalues {values[i]} and "
                    f"{values[j]}; cluster reported as unresolved")


def eig_near(H: SparseOperator, z0: complex, count: int = 1, *,
             theta: complex = 0.0, sigma: float | None = None,
             reference: np.ndarray | None = None,
             with_left: bool = True) -> list[ResonanceEstimate]:
    """`count` eigenvalues nearest z0 via shift-invert Arnoldi.

    Falls back to the dense path when ARPACK cannot run (count >= dim-1 or
    tiny dimension).  A failed factorization (z0 on the spectrum) is retried
    with jittered shifts before giving up.
    """
    n = H.dim
    count = min(count, n)
    method = "shift-invert"
    if count >= n - 1 or n < 8:
        method = "dense"
        pairs = dense_spectrum(H, dense_cap=max(DENSE_CAP, n))
        vals = np.array([p[0] for p in pairs])
        order = np.argsort(np.abs(vals - z0))[:count]
        sel = [(pairs[i][0], pairs[i][1]) for i in order]
    else:
        jitter = 1e-8 * (1.0 + abs(z0))
        last_exc: Exception | None = None
        sel = None
        for attempt in range(4):
            shift = z0 + attempt * jitter * (1 + 1j) / np.sqrt(2)
            try:
                vals, vecs = spla.eigs(
                    H.mat.tocsc(), k=count, sigma=shift,
                    ncv=min(max(ARNOLDI_NCV, 2 * count + 1), n - 1),
                    tol=ARNOLDI_TOL, maxiter=ARNOLDI_RESTARTS * ARNOLDI_NCV,
                    v0=None if reference is None else np.asarray(reference, dtype=complex))
                order = np.argsort(np.abs(vals - z0))
                sel = [(vals[i], vecs[:, i]) for i in order]
                break
            except (RuntimeError, spla.ArpackError, spla.ArpackNoConvergence) as exc:
                last_exc = exc
        if sel is None:
            raise NumericalError(f"shift-invert failed near z0={z0}: {last_exc}")

    out = []
    for lam, v in sel:
        v = v / np.linalg.norm(v)
        res = _residual(H, lam, v)
        if res > RESIDUAL_TOL:
            raise NumericalError(
                f"eigenpair residual {res:.2e} above {RESIDUAL_TOL} at lambda={lam}")
        left = _left_vector(H, lam, v) if with_left else None
        out.append(ResonanceEstimate(
            value=complex(lam), right_vec=v, left_vec=left, method=method,
            theta=theta, sigma=sigma, residual=res,
            overlap=0.0 if reference is None else float(abs(np.vdot(reference, v)))))
    _check_biorthogonal([e.value for e in out], [e.left_vec for e in out],
                        [e.right_vec for e in out])
    return out


def _best_against(H: SparseOperator, prev_vec: np.ndarray, z0: complex, *,
                  theta, sigma, dense_cap=DENSE_CAP) -> ResonanceEstimate:
    """Eigenpair with the largest overlap against prev_vec.

    Uses the dense path whenever affordable: with an infrared-dense spectrum
    the branch is identified by the eigenvector, not by distance to z0.
    """
    if H.dim <= dense_cap:
        vals, lefts, vecs = la.eig(H.toarray(), left=True, right=True)
        ov = np.abs(prev_vec.conj() @ vecs) / np.linalg.norm(vecs, axis=0)
        i = int(np.argmax(ov))
        v = vecs[:, i] / np.linalg.norm(vecs[:, i])
        res = _residual(H, vals[i], v)
        return ResonanceEstimate(value=complex(vals[i]), right_vec=v,
                                 left_vec=lefts[:, i] / np.linalg.norm(lefts[:, i]),
                                 method="dense", theta=theta, sigma=sigma,
                                 residual=res, overlap=float(ov[i]))
    count = 8
    while True:
        ests = eig_near(H, z0, count=count, theta=theta, sigma=sigma, with_left=False)
        best = max(ests, key=lambda e: abs(np.vdot(prev_vec, e.right_vec)))
        ov = abs(np.vdot(prev_vec, best.right_vec))
        if ov >= OVERLAP_MIN or count >= 64 or count >= H.dim - 2:
            best.overlap = float(ov)
            best.left_vec = _left_vector(H, best.value, best.right_vec)
            return best
        count *= 2


def track_resonance(spec: ModelSpec, theta: complex, g_path, j: int,
                    sigma: float | None = None, part: str | None = None,
                    dense_cap: int = DENSE_CAP) -> list[ResonanceEstimate]:
    """Continuation of the level-j resonance along an increasing g path.

    g_path must start at 0, where the estimate is the exact unperturbed pair
    (lambda_j, Psi_j).  Each step targets the previous value and rejects the
    step when the eigenvector overlap with the previous step drops below 0.5,
    halving the g step until it recovers (branch-loss error below 1e-6).
    """
    g_path = list(g_path)
    if not g_path or g_path[0] != 0:
        raise ValidationError("g_path must start at 0")
    if any(b < a for a, b in zip(g_path, g_path[1:])):
        raise ValidationError("g_path must be non-decreasing")
    if complex(theta).imag <= 0 and any(g > 0 for g in g_path):
        raise ValidationError("tracking requires Im theta > 0")
    if part is None:
        part = model_mod.PART_CUTOFF if sigma is not None else model_mod.PART_FULL

    psi_j = unperturbed_state(spec, j)
    lam_j = complex(spec.particle.levels[j])
    first = ResonanceEstimate(value=lam_j, right_vec=psi_j, left_vec=psi_j.copy(),
                              method="exact", theta=theta, sigma=sigma,
                              residual=0.0, overlap=1.0)
    results = [first]
    g_cur, est_cur = 0.0, first

    for g_target in g_path[1:]:
        if g_target == 0.0:
            results.append(first)
            continue
        while g_cur < g_target:
            g_try = g_target
            while True:
                H = build_hamiltonian(spec, theta, g_try, sigma, part).matrix
                cand = _best_against(H, est_cur.right_vec, est_cur.value,
                                     theta=theta, sigma=sigma, dense_cap=dense_cap)
                if cand.overlap >= OVERLAP_MIN:
                    break
                g_try = 0.5 * (g_cur + g_try)
                if g_try - g_cur < 1e-6:
                    raise BranchLossError(
                        f"branch lost near g={g_cur}: overlap {cand.overlap:.3f} "
                        f"below {OVERLAP_MIN} with step under 1e-6")
            g_cur, est_cur = g_try, cand
        est_cur.overlap = float(abs(np.vdot(psi_j, est_cur.right_vec)))
        results.append(est_cur)
    return results


@dataclass
class ThetaReport:
    thetas: tuple
    full_values: np.ndarray
    cutoff_values: np.ndarray
    full_spread: float
    cutoff_spread: float
    string_angles: np.ndarray  # fitted ray angle per theta
    grid_tolerance: float | None = None
    rows: list = field(default_factory=list)


def _string_angle(spec: ModelSpec, theta: complex, g: float, j: int,
                  lam: complex, dense_cap: int) -> float:
    """Fitted angle of the discretized continuum ray attached to lambda_j."""
    H = build_hamiltonian(spec, theta, g).matrix
    pairs = dense_spectrum(H, dense_cap=dense_cap)
    nlev, nf = spec.particle.n_levels, spec.basis().dim
    d_j = spec.particle.gap(j)
    angles, radii = [], []
    for lam_i, v in pairs:
        r = abs(lam_i - lam)
        if r < 1e-12 or r > 0.5 * d_j:
            continue
        v = v / np.linalg.norm(v)
        w_j = np.linalg.norm(v.reshape(nlev, nf)[j]) ** 2
        if w_j < 0.5:
            continue
        angles.append(np.angle(lam_i - lam))
        radii.append(r)
    if not angles:
        return float("nan")
    return float(np.average(angles, weights=radii))


def theta_report(spec: ModelSpec, g: float, theta_list, j: int, sigma: float,
                 dense_cap: int = DENSE_CAP) -> ThetaReport:
    """Spread of the tracked eigenvalue across deformation angles, for the
    full Hamiltonian and the infrared-cutoff one, plus string directions."""
    theta_list = [complex(t) for t in theta_list]
    if len(theta_list) < 3:
        raise ValidationError("need at least 3 theta values")
    for t in theta_list:
        if not 0.15 <= t.imag <= 0.45:
            raise ValidationError("theta_report requires Im theta in [0.15, 0.45]")
    g_path = [0.0, g] if g > 0 else [0.0]
    full_vals, cut_vals, angles, rows = [], [], [], []
    for t in theta_list:
        ef = track_resonance(spec, t, g_path, j, dense_cap=dense_cap)[-1]
        ec = track_resonance(spec, t, g_path, j, sigma=sigma, dense_cap=dense_cap)[-1]
        full_vals.append(ef.value)
        cut_vals.append(ec.value)
        angles.append(_string_angle(spec, t, g, j, ef.value, dense_cap))
        rows.append({"theta_re": t.real, "theta_im": t.imag,
                     "lambda_full_re": ef.value.real, "lambda_full_im": ef.value.imag,
                     "lambda_cut_re": ec.value.real, "lambda_cut_im": ec.value.imag,
                     "string_angle": angles[-1]})
    full_vals = np.array(full_vals)
    cut_vals = np.array(cut_vals)

    def spread(vals):
        return float(max(abs(a - b) for a in vals for b in vals))

    return ThetaReport(thetas=tuple(theta_list), full_values=full_vals,
                       cutoff_values=cut_vals, full_spread=spread(full_vals),
                       cutoff_spread=spread(cut_vals),
                       string_angles=np.array(angles), rows=rows)
