"""Deformed-resolvent matrix elements, analytic continuation into the lower
half-plane, and the pole/remainder decomposition of the continued function."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize as opt
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularBlockError, ValidationError
from .fock import SparseOperator, dgamma_power
from .model import ModelSpec, build_hamiltonian
from .spectral import track_resonance

COND_MAX = 1e12
SCAN_COLUMNS = ("z_re", "z_im", "F_re", "F_im", "cond_estimate", "sigma_used", "wedge_ok")


def _cond_estimate(mat_csc, lu) -> float:
    n = mat_csc.shape[0]
    a1 = spla.norm(mat_csc, 1)
    inv_op = spla.LinearOperator(
        (n, n), matvec=lu.solve, rmatvec=lambda b: lu.solve(b, trans="H"),
        dtype=complex)
    try:
        inv1 = spla.onenormest(inv_op)
    except Exception:
        return float("inf")
    return float(a1 * inv1)


def resolvent_element(H_theta: SparseOperator, psi_left: np.ndarray,
                      psi_right: np.ndarray, z: complex):
    """<psi_left, (H_theta - z)^{-1} psi_right> via a sparse LU solve.

    Returns (value, condition_estimate); raises SingularBlockError when the
    solve is singular or the condition estimate exceeds 1e12.
    """
    a = (H_theta.mat - z * sp.identity(H_theta.dim, dtype=complex, format="csr")).tocsc()
    try:
        lu = spla.splu(a)
    except RuntimeError as exc:
        raise SingularBlockError(f"(H - z) singular at z={z}: {exc}") from exc
    cond = _cond_estimate(a, lu)
    if cond > COND_MAX:
        raise SingularBlockError(f"(H - z) condition estimate {cond:.3e} exceeds {COND_MAX:.0e}")
    x = lu.solve(np.asarray(psi_right, dtype=complex))
    return complex(np.vdot(psi_left, x)), cond


def dprime_norm(psi: np.ndarray, basis) -> float:
    """|| dGamma(omega^{-1/2}) (1 - P_Omega) psi || on the truncated space.

    Ranks test vectors by infrared regularity; always finite here.
    """
    op = dgamma_power(basis, -0.5).mat.diagonal()
    nlev = len(psi) // basis.dim
    out = 0.0
    for lev in range(nlev):
        block = np.asarray(psi[lev * basis.dim:(lev + 1) * basis.dim], dtype=complex)
        weighted = op * block
        weighted[0] = 0.0  # vacuum omitted twice over: op[0] = 0 already
        out += float(np.sum(np.abs(weighted) ** 2))
    return float(np.sqrt(out))


@dataclass(frozen=True)
class DeformableVector:
    """Dilation-entire test vector: per-level vacuum amplitudes plus
    one-boson components with analytic radial profiles c(k).

    The deformed family is psi_theta with one-boson amplitude
    e^{-theta/2} c(e^{-theta} k) sqrt(w) at each node; the normalization is
    fixed once at theta = 0 so the family stays analytic in theta.
    """

    vacuum_amps: tuple                     # complex amplitude per level
    boson_terms: tuple = ()                # (level, coeff, profile c(k))
    label: str = "psi"

    def concrete(self, spec: ModelSpec, theta: complex = 0.0,
                 _norm: float | None = None) -> np.ndarray:
        basis = spec.basis()
        nlev = spec.particle.n_levels
        if len(self.vacuum_amps) != nlev:
            raise ValidationError("vacuum_amps length must match level count")
        v = np.zeros(nlev * basis.dim, dtype=complex)
        for lev, a in enumerate(self.vacuum_amps):
            v[lev * basis.dim] = a
        k = basis.grid.nodes
        sw = np.sqrt(basis.grid.weights)
        for (lev, coeff, profile) in self.boson_terms:
            amps = coeff * np.exp(-theta / 2.0) * profile(np.exp(-theta) * k) * sw
            for n in range(basis.modes):
                occ = tuple(1 if m == n else 0 for m in range(basis.modes))
                v[lev * basis.dim + basis.index[occ]] += amps[n]
        if _norm is None:
            _norm = float(np.linalg.norm(self.concrete(spec, 0.0, _norm=1.0)))
        return v / _norm


def gaussian_profile(s: float, lam: float) -> Callable:
    """Analytic radial profile k^s exp(-k^2/lam^2); s > 0 keeps it IR-soft."""
    def c(k):
        return k ** s * np.exp(-(k ** 2) / lam ** 2)
    return c


def psi_test_set(spec: ModelSpec, j: int, seed: int = 0) -> list:
    """The scan test vectors: Psi_j, Psi_j plus an IR-soft one-boson
    component, and a seeded random combination of analytic profiles."""
    nlev = spec.particle.n_levels
    vac_j = tuple(1.0 if lev == j else 0.0 for lev in range(nlev))
    lam = spec.form.lam
    pure = DeformableVector(vacuum_amps=vac_j, label="unperturbed")
    soft = DeformableVector(
        vacuum_amps=vac_j,
        boson_terms=((max(0, j - 1), 0.4, gaussian_profile(0.3, lam)),),
        label="ir-soft-boson")
    rng = np.random.default_rng(seed)
    terms = tuple(
        (int(rng.integers(0, nlev)), complex(*rng.normal(0, 0.3, 2)),
         gaussian_profile(s, lam))
        for s in (0.4, 0.9, 1.6))
    rand = DeformableVector(vacuum_amps=vac_j, boson_terms=terms, label="random-dprime")
    return [pure, soft, rand]


@dataclass(frozen=True)
class ContinuationDomain:
    """Wedge-annulus sample set around the resonance, Theorem-2 geometry:
    phi_1 < pi/2, phi_2 > pi, radii inside half the resonance depth.

    `depth` defaults to |Im center|; an explicit value supports the g = 0
    exactness checks where the center is real.
    """

    center: complex
    phi1: float
    phi2: float
    samples: np.ndarray
    radius_factor: float = 0.5
    depth: float | None = None

    def __post_init__(self):
        if self.depth is None:
            object.__setattr__(self, "depth", abs(complex(self.center).imag))
        if not (self.phi1 < np.pi / 2 and self.phi2 > np.pi):
            raise ValidationError("need phi1 < pi/2 and phi2 > pi")
        w = np.asarray(self.samples) - self.center
        if np.any(np.abs(w) >= self.radius_factor * self.depth + 1e-12):
            raise ValidationError("samples must stay inside the annulus radius bound")
        ang = np.angle(w) % (2 * np.pi)
        if np.any((ang < self.phi1 - 1e-9) | (ang > self.phi2 + 1e-9)):
            raise ValidationError("samples must lie inside [phi1, phi2]")


def wedge_domain(center: complex, phi1: float = 1.2, phi2: float = 3.3,
                 n_rays: int = 3, n_radii: int = 6, radius_lo: float = 0.05,
                 radius_hi: float = 0.45, depth: float | None = None) -> ContinuationDomain:
    """Default sample layout: n_rays rays x n_radii geometric radii."""
    if depth is None:
        depth = abs(complex(center).imag)
    if depth <= 0:
        raise ValidationError("domain needs a positive depth (resonance width)")
    radii = np.geomspace(radius_lo, radius_hi, n_radii) * depth
    angles = np.linspace(phi1, phi2, n_rays)
    samples = np.array([center + r * np.exp(1j * a) for a in angles for r in radii])
    return ContinuationDomain(center=center, phi1=phi1, phi2=phi2, samples=samples,
                              depth=depth)


def wedge_ok(theta: complex, lam: complex, z: complex) -> bool:
    """Admissibility Re(e^theta (lam - z)) >= 0 of a continuation sample."""
    return float(np.real(np.exp(theta) * (lam - z))) >= -1e-12


def paper_sigma_rule(spec: ModelSpec, g: float, r: float) -> float:
    """Informational cutoff schedule sigma = r^beta g^{-1/(3/2+mu)}."""
    mu = spec.form.mu
    beta = 1.0 / (1.0 + 2.0 * mu / 3.0)
    return float(r ** beta * g ** (-1.0 / (1.5 + mu)))


@dataclass
class ScanSample:
    z: complex
    value: complex
    cond: float
    sigma_used: float
    wedge_ok: bool

    def row(self) -> dict:
        return {"z_re": self.z.real, "z_im": self.z.imag,
                "F_re": self.value.real, "F_im": self.value.imag,
                "cond_estimate": self.cond, "sigma_used": self.sigma_used,
                "wedge_ok": self.wedge_ok}


@dataclass
class ScanResult:
    psi_label: str
    theta: complex
    center: complex
    samples: list
    dprime: float

    def fitted_points(self):
        return [(s.z, s.value) for s in self.samples if s.wedge_ok]

    def rows(self) -> list:
        return [s.row() for s in self.samples]


def continuation_scan(spec: ModelSpec, j: int, g: float, theta: complex,
                      psi: DeformableVector, domain: ContinuationDomain,
                      sigma_schedule: str = "paper",
                      sigma_fixed: float | None = None) -> ScanResult:
    """Evaluate F_psi(z) = <psi_{theta-bar}, (H_theta - z)^{-1} psi_theta>
    at every admissible sample of the domain.

    The sigma column is informational (the direct deformed solve needs no
    cutoff); the paper rule records sigma = r^beta g^{-1/(3/2+mu)}.
    """
    theta = complex(theta)
    if sigma_schedule not in ("paper", "fixed"):
        raise ValidationError("sigma_schedule must be 'paper' or 'fixed'")
    if sigma_schedule == "fixed" and sigma_fixed is None:
        raise ValidationError("sigma_schedule='fixed' needs sigma_fixed")
    for z in domain.samples:
        if wedge_ok(theta, domain.center, z):
            break
    else:
        raise ValidationError("no admissible sample: increase Im theta")
    H = build_hamiltonian(spec, theta, g).matrix
    left = psi.concrete(spec, np.conj(theta))
    right = psi.concrete(spec, theta)
    out = []
    for z in domain.samples:
        r = abs(z - domain.center)
        sig = paper_sigma_rule(spec, g, r) if sigma_schedule == "paper" else float(sigma_fixed)
        if not wedge_ok(theta, domain.center, z):
            out.append(ScanSample(z=z, value=complex(float("nan"), float("nan")),
                                  cond=float("nan"), sigma_used=sig, wedge_ok=False))
            continue
        val, cond = resolvent_element(H, left, right, z)
        out.append(ScanSample(z=z, value=val, cond=cond, sigma_used=sig, wedge_ok=True))
    return ScanResult(psi_label=psi.label, theta=theta, center=domain.center,
                      samples=out, dprime=dprime_norm(psi.concrete(spec, 0.0),
                                                      spec.basis()))


@dataclass
class PoleFit:
    residue: complex
    fitted_beta: float
    fitted_c: float
    beta_stderr: float
    residue_jackknife_spread: float
    remainder_samples: list
    degenerate: bool = False
    beta_paper: float | None = None


def _fit_once(w: np.ndarray, F: np.ndarray, polish: bool = True):
    """Residue + remainder power law for F = p/w + r(w), |r| ~ C |w|^{-beta}."""
    A = np.stack([1.0 / w, np.ones_like(w)], axis=1)
    coef, *_ = np.linalg.lstsq(A, F, rcond=None)
    p = coef[0]
    beta = 0.0
    for _ in range(12):
        r = F - p / w
        if np.max(np.abs(r)) <= 1e-10 * np.max(np.abs(F)):
            return p, None, None, None, r  # degenerate: remainder at noise level
        slope, _icpt = np.polyfit(np.log(np.abs(w)), np.log(np.abs(r)), 1)
        if abs(-slope - beta) < 1e-5:
            beta = -slope
            break
        beta = -slope
        A = np.stack([1.0 / w, w ** (-beta)], axis=1)
        coef, *_ = np.linalg.lstsq(A, F, rcond=None)
        p = coef[0]
    c_cplx = coef[1]
    if polish:
        def resid(x):
            pp = x[0] + 1j * x[1]
            cc = x[2] + 1j * x[3]
            model = pp / w + cc * w ** (-x[4])
            d = F - model
            return np.concatenate([d.real, d.imag])
        x0 = [p.real, p.imag, c_cplx.real, c_cplx.imag, max(beta, 1e-3)]
        try:
            sol = opt.least_squares(resid, x0, bounds=(
                [-np.inf, -np.inf, -np.inf, -np.inf, 1e-6],
                [np.inf, np.inf, np.inf, np.inf, 2.0]))
            if sol.success and np.sum(resid(sol.x) ** 2) <= np.sum(resid(x0) ** 2):
                p = sol.x[0] + 1j * sol.x[1]
                c_cplx = sol.x[2] + 1j * sol.x[3]
                beta = sol.x[4]
        except Exception:
            pass
    r = F - p / w
    slope, icpt = np.polyfit(np.log(np.abs(w)), np.log(np.abs(r)), 1)
    n = len(w)
    pred = np.polyval([slope, icpt], np.log(np.abs(w)))
    sres = np.log(np.abs(r)) - pred
    denom = np.sum((np.log(np.abs(w)) - np.mean(np.log(np.abs(w)))) ** 2)
    stderr = float(np.sqrt(np.sum(sres ** 2) / max(n - 2, 1) / denom))
    return p, -slope, float(np.exp(icpt)), stderr, r


def pole_fit(samples, lam: complex, beta_paper: float | None = None) -> PoleFit:
    """Residue and remainder exponent of F(z) = p/(lam - z) + r(z).

    samples: iterable of (z, F(z)) pairs, >= 12 of them spanning roughly a
    decade of |lam - z|.
    """
    pts = [(complex(z), complex(F)) for z, F in samples]
    if len(pts) < 12:
        raise ValidationError("need at least 12 samples")
    z = np.array([p[0] for p in pts])
    F = np.array([p[1] for p in pts])
    w = lam - z
    span = np.max(np.abs(w)) / np.min(np.abs(w))
    if span < 8.0:
        raise ValidationError(f"samples span only a factor {span:.2f} of |lam - z|")
    if np.linalg.matrix_rank(np.stack([np.log(np.abs(w)), np.ones_like(w.real)], axis=1)) < 2:
        raise ValidationError("samples too clustered for the remainder regression")

    p, beta, c, stderr, r = _fit_once(w, F)
    if beta is None:
        return PoleFit(residue=p, fitted_beta=float("nan"), fitted_c=0.0,
                       beta_stderr=float("nan"), residue_jackknife_spread=0.0,
                       remainder_samples=[(zz, rr) for zz, rr in zip(z, r)],
                       degenerate=True, beta_paper=beta_paper)
    spread = 0.0
    for i in range(len(w)):
        mask = np.arange(len(w)) != i
        p_i, *_ = _fit_once(w[mask], F[mask], polish=False)
        spread = max(spread, abs(p_i - p) / abs(p))
    return PoleFit(residue=p, fitted_beta=float(beta), fitted_c=float(c),
                   beta_stderr=stderr, residue_jackknife_spread=float(spread),
                   remainder_samples=[(zz, rr) for zz, rr in zip(z, r)],
                   degenerate=False, beta_paper=beta_paper)


def beta_paper_value(mu: float) -> float:
    """Remainder exponent bound beta = (1 + (2/3) mu)^{-1}."""
    return 1.0 / (1.0 + 2.0 * mu / 3.0)


def tracked_center(spec: ModelSpec, j: int, g: float, theta: complex,
                   dense_cap: int = 3000) -> complex:
    """Resonance value used as the continuation-domain center."""
    return track_resonance(spec, theta, [0.0, g], j, dense_cap=dense_cap)[-1].value
