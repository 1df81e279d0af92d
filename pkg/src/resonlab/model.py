"""Hamiltonian assembly for the linear-coupling (nelson) model and the
scalar minimal-coupling toy (qed-toy) on levels (x) truncated Fock space.

The particle is reduced to a finite level system; the 3D boson measure is
reduced to the radial axis with the angular factor absorbed into the
coupling amplitude, so that sum_n |h(k_n)|^2 w_n -> int |G(k)|^2 d^3k as
the grid refines.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from . import fock
from .errors import CapacityError, ValidationError
from .fock import FockBasis, ModeGrid, SparseOperator

THETA_MAX = 0.5  # deformation disc radius
DIM_CAP = 200_000

PART_FULL = "full"
PART_CUTOFF = "cutoff"           # interaction restricted to k >= sigma
PART_BELOW = "below"             # small-momentum interaction alone
_PARTS = (PART_FULL, PART_CUTOFF, PART_BELOW)


def _readonly(a, dtype):
    a = np.asarray(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ParticleSystem:
    """Finite level system: energies, dipole-type coupling matrix, and the
    (i times real antisymmetric) momentum matrix used by the qed-toy."""

    levels: np.ndarray
    coupling: np.ndarray
    momentum: np.ndarray | None = None

    def __post_init__(self):
        lv = _readonly(self.levels, float)
        c = _readonly(self.coupling, complex)
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "coupling", c)
        n = len(lv)
        if n < 1 or np.any(np.diff(lv) <= 0):
            raise ValidationError("levels must be non-empty and strictly increasing")
        if c.shape != (n, n):
            raise ValidationError("coupling matrix shape must match levels")
        if not np.array_equal(c, c.conj().T):
            raise ValidationError("coupling matrix must be hermitian (exactly)")
        if np.any(np.diag(c) != 0):
            raise ValidationError("coupling matrix must have zero diagonal (dipole type)")
        if self.momentum is None:
            object.__setattr__(self, "momentum", _readonly(np.zeros((n, n)), float))
        else:
            m = _readonly(self.momentum, float)
            object.__setattr__(self, "momentum", m)
            if m.shape != (n, n) or not np.array_equal(m, -m.T):
                raise ValidationError("momentum matrix must be real antisymmetric")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def gap(self, j: int) -> float:
        """Distance from level j to the rest of the level spectrum."""
        others = np.delete(self.levels, j)
        if len(others) == 0:
            return np.inf
        return float(np.min(np.abs(others - self.levels[j])))


@dataclass(frozen=True)
class FormFactor:
    """Gaussian ultraviolet cutoff chi(k) = exp(-k^2/lam^2) with infrared
    exponent mu (coupling ~ chi(k)/|k|^{1/2-mu})."""

    lam: float
    mu: float
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValidationError(f"unknown form factor kind {self.kind!r}")
        if self.lam <= 0:
            raise ValidationError("lam must be positive")
        if self.mu < 0:
            raise ValidationError("mu must be >= 0")

    def chi(self, k):
        return np.exp(-(k ** 2) / self.lam ** 2)


@dataclass(frozen=True)
class ModelSpec:
    particle: ParticleSystem
    form: FormFactor
    grid: ModeGrid
    n_max: int
    kind: str  # "nelson" | "qed-toy"
    sigma_threshold: float | None = None

    def __post_init__(self):
        if self.kind not in ("nelson", "qed-toy"):
            raise ValidationError(f"unknown model kind {self.kind!r}")
        if self.kind == "nelson" and self.form.mu <= 0:
            raise ValidationError("nelson model requires mu > 0")
        if self.n_max < 0:
            raise ValidationError("n_max must be >= 0")

    def basis(self) -> FockBasis:
        b = getattr(self, "_basis", None)
        if b is None:
            b = fock.enumerate_basis(self.grid, self.n_max)
            object.__setattr__(self, "_basis", b)
        return b

    @property
    def dim(self) -> int:
        return self.particle.n_levels * self.basis().dim

    def with_grid(self, grid: ModeGrid) -> "ModelSpec":
        return replace(self, grid=grid)


def default_spec(kind: str = "nelson") -> ModelSpec:
    """Desk-scale default: 2 levels, 24 geometric modes over
    [1e-4*lam, 6*lam], n_max = 2, lam = 2, mu = 1/2 (0 for qed-toy)."""
    lam = 2.0
    mu = 0.5 if kind == "nelson" else 0.0
    particle = ParticleSystem(
        levels=np.array([0.0, 1.0]),
        coupling=np.array([[0, 1], [1, 0]], dtype=complex),
        momentum=np.array([[0.0, 1.0], [-1.0, 0.0]]),
    )
    grid = ModeGrid.geometric(1e-4 * lam, 6 * lam, 24)
    return ModelSpec(particle=particle, form=FormFactor(lam=lam, mu=mu),
                     grid=grid, n_max=2, kind=kind, sigma_threshold=2.0)


def radial_amplitude(spec: ModelSpec, theta: complex, k) -> np.ndarray:
    """Continuum coupling amplitude h_theta(k) (no quadrature weight).

    nelson : sqrt(4 pi) e^{-(1+mu)theta} chi(e^{-theta}k) k^{(1+2mu)/2}
    qed-toy: sqrt(4 pi) e^{-theta}       chi(e^{-theta}k) k^{1/2} / sqrt(2)
    """
    k = np.asarray(k, dtype=complex if np.iscomplexobj(k) else float)
    mu = spec.form.mu
    if spec.kind == "nelson":
        return (np.sqrt(4 * np.pi) * np.exp(-(1 + mu) * theta)
                * spec.form.chi(np.exp(-theta) * k) * k ** ((1 + 2 * mu) / 2))
    return (np.sqrt(4 * np.pi) * np.exp(-theta)
            * spec.form.chi(np.exp(-theta) * k) * np.sqrt(k / 2.0))


def _window_mask(grid: ModeGrid, window: str, sigma: float | None) -> np.ndarray:
    if window == "all":
        return np.ones(grid.count, dtype=bool)
    if sigma is None:
        raise ValidationError(f"window {window!r} needs sigma")
    if sigma <= grid.k_min:
        snapped = grid.k_min
    elif sigma >= grid.k_max:
        snapped = grid.k_max
    else:
        snapped = grid.snap_sigma(sigma)
    if window == "above":
        return grid.nodes >= snapped
    if window == "below":
        return grid.nodes < snapped
    raise ValidationError(f"unknown window {window!r}")


def radial_coupling(spec: ModelSpec, theta: complex, window: str = "all",
                    sigma: float | None = None) -> np.ndarray:
    """Per-node couplings h_theta(k_n) sqrt(w_n), sharp-windowed at sigma."""
    if abs(theta) >= THETA_MAX + 1e-12:
        raise ValidationError(f"|theta| must be < {THETA_MAX}")
    g = radial_amplitude(spec, theta, spec.grid.nodes) * np.sqrt(spec.grid.weights)
    mask = _window_mask(spec.grid, window, sigma)
    return np.where(mask, g, 0.0)


@dataclass(frozen=True)
class DeformedHamiltonian:
    spec: ModelSpec
    theta: complex
    g: float
    sigma: float | None
    part: str
    matrix: SparseOperator

    @property
    def dim(self) -> int:
        return self.matrix.dim


def _interaction(spec: ModelSpec, theta: complex, g: float, window: str,
                 sigma: float | None) -> SparseOperator:
    basis = spec.basis()
    nlev = spec.particle.n_levels
    couplings = radial_coupling(spec, theta, window, sigma)
    phi = fock.field_phi(basis, couplings, conjugate_on_create=False)
    if spec.kind == "nelson":
        c_op = SparseOperator.from_dense(spec.particle.coupling, hermitian_hint=True)
        return fock.kron(c_op, phi).scaled(g)
    # qed-toy: g e^{-theta} p.phi + (g^2/2)(phi^2 - Lambda_const)
    p_op = SparseOperator.from_dense(1j * spec.particle.momentum, hermitian_hint=True)
    lin = fock.kron(p_op, phi).scaled(g * np.exp(-theta))
    lam_const = float(np.sum(np.abs(radial_coupling(spec, 0.0, window, sigma)) ** 2))
    phi2 = (phi @ phi) - SparseOperator.identity(basis.dim).scaled(lam_const)
    quad = fock.kron(SparseOperator.identity(nlev), phi2).scaled(0.5 * g * g)
    return lin + quad


def build_hamiltonian(spec: ModelSpec, theta: complex, g: float,
                      sigma: float | None = None, part: str = PART_FULL,
                      dim_cap: int = DIM_CAP) -> DeformedHamiltonian:
    """H = H_p (x) I + e^{-theta} I (x) H_f + W, with W selected by `part`.

    part="cutoff" keeps only couplings with k >= sigma; part="below"
    returns the removed interaction alone, so that
    matrix(full) = matrix(cutoff) + matrix(below) entrywise.
    """
    if part not in _PARTS:
        raise ValidationError(f"part must be one of {_PARTS}")
    if abs(theta) >= THETA_MAX + 1e-12:
        raise ValidationError(f"|theta| must be < {THETA_MAX}")
    if g < 0:
        raise ValidationError("g must be >= 0")
    if part != PART_FULL:
        if sigma is None:
            raise ValidationError(f"part={part!r} needs sigma")
        if not (spec.grid.k_min < sigma < spec.grid.k_max):
            raise ValidationError(
                f"sigma={sigma} outside grid range ({spec.grid.k_min}, {spec.grid.k_max})")
        sigma = spec.grid.snap_sigma(sigma)
    basis = spec.basis()
    nlev = spec.particle.n_levels
    if nlev * basis.dim > dim_cap:
        raise CapacityError(f"product dimension {nlev * basis.dim} exceeds cap {dim_cap}")

    if part == PART_BELOW:
        if g == 0:
            w = SparseOperator(sp.csr_matrix((spec.dim, spec.dim), dtype=complex))
        elif spec.kind == "nelson":
            w = _interaction(spec, theta, g, "below", sigma)
        else:
            # quadratic toy term mixes windows; difference keeps the split exact
            w = (_interaction(spec, theta, g, "all", None)
                 - _interaction(spec, theta, g, "above", sigma))
        return DeformedHamiltonian(spec, theta, g, sigma, part, w)

    hp = SparseOperator.diagonal(spec.particle.levels.astype(complex))
    hf = fock.field_energy(basis, scale=np.exp(-theta))
    h = fock.kron(hp, SparseOperator.identity(basis.dim)) + \
        fock.kron(SparseOperator.identity(nlev), hf)
    if g > 0:
        window = "above" if part == PART_CUTOFF else "all"
        h = h + _interaction(spec, theta, g, window, sigma if part == PART_CUTOFF else None)
    herm = abs(complex(theta).imag) < 1e-15
    return DeformedHamiltonian(spec, theta, g, sigma, part,
                               SparseOperator(h.mat, hermitian_hint=herm))


def renormalized_cutoff_hamiltonian(spec: ModelSpec, theta: complex, g: float,
                                    sigma: float, shift: complex,
                                    projector: SparseOperator) -> DeformedHamiltonian:
    """Cutoff Hamiltonian plus shift * projector (eigenvalue renormalization)."""
    if projector.dim != spec.dim:
        raise ValidationError("projector dimension mismatch")
    p2 = projector.mat @ projector.mat - projector.mat
    if p2.nnz and np.abs(p2.data).max() > 1e-8:
        raise ValidationError("projector is not idempotent to 1e-8")
    h = build_hamiltonian(spec, theta, g, sigma, PART_CUTOFF)
    mat = h.matrix.mat + shift * projector.mat
    return DeformedHamiltonian(spec, theta, g, sigma, "renormalized",
                               SparseOperator(mat))


def unperturbed_state(spec: ModelSpec, j: int) -> np.ndarray:
    """Psi_j = (level j) (x) vacuum, the g = 0 eigenstate."""
    if not 0 <= j < spec.particle.n_levels:
        raise ValidationError(f"level index {j} out of range")
    v = np.zeros(spec.dim, dtype=complex)
    v[j * spec.basis().dim] = 1.0
    return v


def decoupled_eigenvalues(spec: ModelSpec, theta: complex = 0.0) -> np.ndarray:
    """Exact g = 0 spectrum {lambda_j + e^{-theta} sum_n m_n omega_n}."""
    e_f = spec.basis().field_energies()
    vals = (spec.particle.levels[:, None] + np.exp(-theta) * e_f[None, :]).ravel()
    return vals


# --- configuration (de)serialization -----------------------------------

def _complex_pairs(mat: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(mat, dtype=complex)]


def _from_pairs(rows) -> np.ndarray:
    return np.array([[complex(p[0], p[1]) for p in row] for row in rows])


def spec_to_config(spec: ModelSpec) -> dict:
    cfg = {
        "particle": {
            "levels": [float(x) for x in spec.particle.levels],
            "coupling": _complex_pairs(spec.particle.coupling),
            "momentum": [[float(x) for x in row] for row in spec.particle.momentum],
        },
        "form": {"lambda": float(spec.form.lam), "mu": float(spec.form.mu)},
        "grid": {"kind": spec.grid.kind, "kmin": spec.grid.k_min,
                 "kmax": spec.grid.k_max, "count": spec.grid.count},
        "nmax": spec.n_max,
        "kind": spec.kind,
    }
    if spec.sigma_threshold is not None:
        cfg["sigma_threshold"] = float(spec.sigma_threshold)
    return cfg


def spec_from_config(cfg: dict) -> ModelSpec:
    try:
        p = cfg["particle"]
        particle = ParticleSystem(
            levels=np.array(p["levels"], dtype=float),
            coupling=_from_pairs(p["coupling"]),
            momentum=np.array(p["momentum"], dtype=float) if "momentum" in p else None,
        )
        form = FormFactor(lam=float(cfg["form"]["lambda"]), mu=float(cfg["form"]["mu"]))
        gdef = cfg["grid"]
        family = {"geometric": ModeGrid.geometric, "linear": ModeGrid.linear}
        if gdef["kind"] not in family:
            raise ValidationError(f"grid.kind must be geometric|linear, got {gdef['kind']!r}")
        grid = family[gdef["kind"]](float(gdef["kmin"]), float(gdef["kmax"]), int(gdef["count"]))
        return ModelSpec(particle=particle, form=form, grid=grid,
                         n_max=int(cfg["nmax"]), kind=cfg["kind"],
                         sigma_threshold=cfg.get("sigma_threshold"))
    except KeyError as exc:
        raise ValidationError(f"missing config key: {exc}") from exc
