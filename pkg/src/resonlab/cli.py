"""Experiment orchestration: config ingestion, named pipelines, deterministic
CSV/JSON emission, sweeps, and the selfcheck invariant suite.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 selfcheck failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, dynamics, feshbach, fock, model, resolvent, rg, spectral
from .errors import NumericalError, ResonlabError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_SELFCHECK = 4

FLOAT_FMT = "%.17g"


class SelfcheckFailure(ResonlabError):
    pass


# --- deterministic emission ---------------------------------------------

def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def atomic_write(path: str, data: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_csv(path: str, columns, rows) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_value(row[c]) for c in columns))
    atomic_write(path, "\n".join(lines) + "\n")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def file_digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# --- configuration -------------------------------------------------------

@dataclass
class ExperimentConfig:
    model: dict
    experiment: str
    parameters: dict
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


@dataclass
class RunRecord:
    config_hash: str
    artifact_version: str
    wall_time: float
    outputs: list
    experiment: str
    status: str = "ok"
    error: str = ""

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "artifact_version": self.artifact_version,
                "wall_time": self.wall_time, "outputs": self.outputs,
                "experiment": self.experiment, "status": self.status, "error": self.error}


# parameter schema per experiment: name -> (required set, optional with defaults)
_COMMON_OPT = {"j": 1, "theta_re": 0.0, "theta_im": 0.3, "seed": 0}
SCHEMAS = {
    "spectrum": (set(), {"g": 0.0, "sigma": None, "part": "full", "j": 1,
                         "theta_re": 0.0, "theta_im": 0.0, "seed": 0}),
    "resonance-track": ({"g_list"}, {"sigma": None, **_COMMON_OPT}),
    "theta-report": ({"g", "theta_im_list", "sigma"}, {"j": 1, "theta_re": 0.0, "seed": 0}),
    "fgr": (set(), {"j": 1, "pv_nodes": 400, "seed": 0}),
    "survival": ({"g"}, {"n_times": 200, "horizon": 2.0, **_COMMON_OPT}),
    "metastability": ({"g_list"}, {"filter_c": 1.5, "n_times": 200, **_COMMON_OPT}),
    "resolvent-scan": ({"g"}, {"psi": 0, "phi1": 1.2, "phi2": 3.3, "n_rays": 3,
                               "n_radii": 6, "radius_lo": 0.05, "radius_hi": 0.45,
                               "sigma_schedule": "paper", "sigma_fixed": None,
                               "theta_im": 0.45, "j": 1, "theta_re": 0.0, "seed": 0}),
    "pole-fit": ({"g"}, {"psi": 0, "phi1": 1.2, "phi2": 3.3, "n_rays": 3,
                         "n_radii": 6, "radius_lo": 0.05, "radius_hi": 0.45,
                         "sigma_schedule": "paper", "sigma_fixed": None,
                         "theta_im": 0.45, "j": 1, "theta_re": 0.0, "seed": 0}),
    "ir-gap": (set(), {"g": 0.05, "sigma_list": None, "sigma": None, **_COMMON_OPT}),
    "decimate": ({"g", "sigma"}, {"rho0": None, "z_re": None, "z_im": None,
                                  **_COMMON_OPT}),
    "selfcheck": (set(), {"seed": 0}),
}


def validate_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ValidationError("config root must be an object")
    allowed_top = {"model", "experiment", "parameters", "output_dir"}
    for key in raw:
        if key not in allowed_top:
            raise ValidationError(f"unknown config key: {key!r}")
    for key in ("model", "experiment"):
        if key not in raw:
            raise ValidationError(f"missing config key: {key!r}")
    experiment = raw["experiment"]
    if experiment not in SCHEMAS:
        raise ValidationError(
            f"experiment: unknown name {experiment!r}; choose from {sorted(SCHEMAS)}")
    required, optional = SCHEMAS[experiment]
    if not isinstance(raw.get("parameters", {}), dict):
        raise ValidationError("parameters: must be an object")
    params = dict(raw.get("parameters", {}))
    for key in params:
        if key not in required and key not in optional:
            raise ValidationError(f"parameters.{key}: unknown key for {experiment!r}")
    for key in required:
        if key not in params:
            raise ValidationError(f"parameters.{key}: required for {experiment!r}")
    merged = {**optional, **params}
    model.spec_from_config(raw["model"])  # validates eagerly
    return ExperimentConfig(model=raw["model"], experiment=experiment,
                            parameters=merged, output_dir=raw.get("output_dir", "."),
                            raw=raw)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path!r} is not valid JSON: {exc}") from exc
    return validate_config(raw)


def _theta(params) -> complex:
    return complex(params["theta_re"], params["theta_im"])


# --- experiment pipelines -------------------------------------------------

def _exp_spectrum(spec, params, outdir):
    theta = _theta(params)
    part = params["part"]
    h = model.build_hamiltonian(spec, theta, params["g"], params["sigma"], part)
    pairs = spectral.dense_spectrum(h.matrix)
    rows = [{"index": i, "lambda_re": v.real, "lambda_im": v.imag}
            for i, (v, _) in enumerate(pairs)]
    write_csv(os.path.join(outdir, "spectrum.csv"),
              ("index", "lambda_re", "lambda_im"), rows)
    return ["spectrum.csv"], {"dim": h.dim, "count": len(rows)}


def _exp_resonance_track(spec, params, outdir):
    theta = _theta(params)
    g_list = [float(g) for g in params["g_list"]]
    path = sorted(set([0.0] + g_list))
    ests = spectral.track_resonance(spec, theta, path, params["j"], sigma=params["sigma"])
    rows = [est.row(g) for g, est in zip(path, ests)]
    write_csv(os.path.join(outdir, "sweep.csv"), spectral.SWEEP_COLUMNS, rows)
    last = ests[-1]
    return ["sweep.csv"], {"lambda_re": last.value.real, "lambda_im": last.value.imag,
                           "residual": last.residual, "overlap": last.overlap}


def _exp_theta_report(spec, params, outdir):
    thetas = [complex(params["theta_re"], im) for im in params["theta_im_list"]]
    rep = spectral.theta_report(spec, params["g"], thetas, params["j"], params["sigma"])
    cols = ("theta_re", "theta_im", "lambda_full_re", "lambda_full_im",
            "lambda_cut_re", "lambda_cut_im", "string_angle")
    write_csv(os.path.join(outdir, "theta_report.csv"), cols, rep.rows)
    return ["theta_report.csv"], {"full_spread": rep.full_spread,
                                  "cutoff_spread": rep.cutoff_spread,
                                  "spread_ratio": rep.full_spread / max(rep.cutoff_spread, 1e-300)}


def _exp_fgr(spec, params, outdir):
    co = feshbach.fgr(spec, params["j"], pv_nodes=params["pv_nodes"])
    cols = ("level_m", "k_star", "channel_width", "Z_od_re", "Z_od_im", "Z_d")
    write_csv(os.path.join(outdir, "channels.csv"), cols, co.rows())
    return ["channels.csv"], {"Z_od_re": co.z_od.real, "Z_od_im": co.z_od.imag,
                              "Z_d": co.z_d, "stable": co.stable}


def _exp_survival(spec, params, outdir):
    theta = _theta(params)
    g, j = params["g"], params["j"]
    psi = model.unperturbed_state(spec, j)
    if g > 0:
        lam = spectral.track_resonance(spec, theta, [0.0, g], j)[-1].value
        gamma = max(-lam.imag, 1e-12)
    else:
        lam = complex(spec.particle.levels[j])
        gamma = 1.0
    ts = dynamics.time_grid(gamma, params["n_times"], params["horizon"])
    h = model.build_hamiltonian(spec, 0.0, g)
    trace = dynamics.propagate_survival(h.matrix, psi, ts, lam)
    write_csv(os.path.join(outdir, "trace.csv"), dynamics.TRACE_COLUMNS, trace.rows())
    return ["trace.csv"], {"gamma": gamma, "sup_deviation": float(trace.deviation.max())}


def _exp_metastability(spec, params, outdir):
    rep = dynamics.metastability_report(
        spec, params["j"], params["g_list"], theta=_theta(params),
        filter_c=params["filter_c"], n_times=params["n_times"])
    write_csv(os.path.join(outdir, "report.csv"), dynamics.REPORT_COLUMNS, rep.rows)
    return ["report.csv"], {"alpha_hat": rep.alpha_hat, "alpha_paper": rep.alpha_paper,
                            "resolvable": all(r["resolvable"] for r in rep.rows)}


def _scan(spec, params):
    theta = _theta(params)
    g, j = params["g"], params["j"]
    if g > 0:
        center = resolvent.tracked_center(spec, j, g, theta)
        depth = None
    else:
        center = complex(spec.particle.levels[j])
        depth = 0.05 * spec.particle.gap(j)
    domain = resolvent.wedge_domain(center, phi1=params["phi1"], phi2=params["phi2"],
                                    n_rays=params["n_rays"], n_radii=params["n_radii"],
                                    radius_lo=params["radius_lo"],
                                    radius_hi=params["radius_hi"], depth=depth)
    psis = resolvent.psi_test_set(spec, j, seed=params["seed"])
    psi = psis[int(params["psi"])]
    scan = resolvent.continuation_scan(spec, j, g, theta, psi, domain,
                                       sigma_schedule=params["sigma_schedule"],
                                       sigma_fixed=params["sigma_fixed"])
    return scan, domain


def _exp_resolvent_scan(spec, params, outdir):
    scan, _ = _scan(spec, params)
    write_csv(os.path.join(outdir, "scan.csv"), resolvent.SCAN_COLUMNS, scan.rows())
    ok = [s for s in scan.samples if s.wedge_ok]
    return ["scan.csv"], {"n_samples": len(scan.samples), "n_ok": len(ok),
                          "psi": scan.psi_label, "dprime_norm": scan.dprime}


def _exp_pole_fit(spec, params, outdir):
    scan, domain = _scan(spec, params)
    write_csv(os.path.join(outdir, "scan.csv"), resolvent.SCAN_COLUMNS, scan.rows())
    beta_paper = resolvent.beta_paper_value(spec.form.mu)
    fit = resolvent.pole_fit(scan.fitted_points(), domain.center, beta_paper=beta_paper)
    summary = {"p_re": fit.residue.real, "p_im": fit.residue.imag,
               "beta_hat": fit.fitted_beta, "beta_paper": beta_paper,
               "C_hat": fit.fitted_c, "n_samples": len(scan.fitted_points())}
    atomic_write(os.path.join(outdir, "fit_summary.json"),
                 canonical_json(summary) + "\n")
    return ["scan.csv", "fit_summary.json"], summary


def _exp_ir_gap(spec, params, outdir):
    sigmas = params["sigma_list"]
    if sigmas is None:
        if params["sigma"] is None:
            raise ValidationError("parameters.sigma_list (or sigma): required for ir-gap")
        sigmas = [params["sigma"]]
    res = rg.ir_gap_experiment(spec, _theta(params), params["g"], params["j"], sigmas)
    write_csv(os.path.join(outdir, "ir_gap.csv"), rg.EXPERIMENT_COLUMNS,
              [r.row() for r in res.rows])
    return ["ir_gap.csv"], {"slope": res.slope, "slope_predicted": res.slope_predicted,
                            "monotone": res.monotone,
                            "diff_abs": res.rows[-1].diff if res.rows else float("nan"),
                            "gap_over_sigma": res.rows[-1].gap_over_sigma if res.rows else float("nan")}


def _exp_decimate(spec, params, outdir):
    theta = _theta(params)
    sigma = params["sigma"]
    rho0 = params["rho0"] if params["rho0"] is not None else sigma
    est = rg.cutoff_resonance(spec, theta, params["g"], params["j"], sigma)
    if params["z_re"] is not None:
        z = complex(params["z_re"], params["z_im"] or 0.0)
    else:
        z = est.value + 0.25 * spec.grid.snap_sigma(sigma)
    res = rg.decimate(spec, theta, params["g"], z, sigma, rho0,
                      cutoff_est=est, j=params["j"])
    rows = [{"field_energy": e, "t_re": t.real, "t_im": t.imag}
            for e, t in res.t_diag]
    write_csv(os.path.join(outdir, "t_diag.csv"), ("field_energy", "t_re", "t_im"), rows)
    return ["t_diag.csv"], {"E_z_re": res.e_z.real, "E_z_im": res.e_z.imag,
                            "W_norm": res.w_norm, "dim_eff": len(res.field_energies),
                            "lambda_cut_re": res.lam_cut.real,
                            "lambda_cut_im": res.lam_cut.imag, "cond": res.cond}


PIPELINES = {
    "spectrum": _exp_spectrum,
    "resonance-track": _exp_resonance_track,
    "theta-report": _exp_theta_report,
    "fgr": _exp_fgr,
    "survival": _exp_survival,
    "metastability": _exp_metastability,
    "resolvent-scan": _exp_resolvent_scan,
    "pole-fit": _exp_pole_fit,
    "ir-gap": _exp_ir_gap,
    "decimate": _exp_decimate,
}


def run(config: ExperimentConfig, outdir: str | None = None) -> RunRecord:
    """Execute the named pipeline; emit CSVs, summary.json, run_record.json."""
    outdir = outdir or config.output_dir
    os.makedirs(outdir, exist_ok=True)
    spec = model.spec_from_config(config.model)
    t0 = time.monotonic()
    if config.experiment == "selfcheck":
        results = selfcheck(seed=config.parameters.get("seed", 0))
        ok = all(r[1] for r in results)
        files = ["selfcheck.json"]
        atomic_write(os.path.join(outdir, "selfcheck.json"), canonical_json(
            [{"name": n, "ok": o, "detail": d} for n, o, d in results]) + "\n")
        summary = {"passed": ok, "n_checks": len(results)}
        if not ok:
            raise SelfcheckFailure("selfcheck failed: " + ", ".join(
                n for n, o, _ in results if not o))
    else:
        files, summary = PIPELINES[config.experiment](spec, config.parameters, outdir)
    atomic_write(os.path.join(outdir, "summary.json"), canonical_json(summary) + "\n")
    files = files + ["summary.json"]
    wall = time.monotonic() - t0
    record = RunRecord(
        config_hash=config.hash, artifact_version=__version__, wall_time=wall,
        outputs=[{"path": f, "sha256": file_digest(os.path.join(outdir, f))}
                 for f in files],
        experiment=config.experiment)
    atomic_write(os.path.join(outdir, "run_record.json"),
                 canonical_json(record.to_dict()) + "\n")
    return record


def sweep(config: ExperimentConfig, axis: str, values, jobs: int = 1,
          outdir: str | None = None) -> list:
    """Run the pipeline once per axis value; merge summaries into sweep.csv.

    Failed values are flagged in the merged table; the rest still execute.
    """
    required, optional = SCHEMAS[config.experiment]
    if config.experiment == "ir-gap" and axis == "sigma":
        pass  # maps onto a one-element sigma_list per run
    elif axis not in required and axis not in optional:
        raise ValidationError(f"axis {axis!r} is not a parameter of {config.experiment!r}")
    outdir = outdir or config.output_dir
    os.makedirs(outdir, exist_ok=True)

    def one(value):
        sub_raw = json.loads(json.dumps(config.raw))
        params = sub_raw.setdefault("parameters", {})
        if config.experiment == "ir-gap" and axis == "sigma":
            params["sigma_list"] = [value]
            params.pop("sigma", None)
        else:
            params[axis] = value
        sub_cfg = validate_config(sub_raw)
        sub_dir = os.path.join(outdir, f"{axis}={format_value(value)}")
        return run(sub_cfg, outdir=sub_dir)

    records, merged = [], []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [(v, pool.submit(one, v)) for v in values]
        for v, fut in futures:
            row = {"axis": axis, "value": v}
            try:
                rec = fut.result()
                records.append(rec)
                sub_dir = os.path.join(outdir, f"{axis}={format_value(v)}")
                with open(os.path.join(sub_dir, "summary.json"), encoding="utf-8") as fh:
                    row.update(json.load(fh))
                row["status"] = "ok"
            except ResonlabError as exc:
                row["status"] = f"failed: {exc}"
                records.append(RunRecord(config_hash=config.hash,
                                         artifact_version=__version__, wall_time=0.0,
                                         outputs=[], experiment=config.experiment,
                                         status="failed", error=str(exc)))
            merged.append(row)
    cols = sorted({k for row in merged for k in row})
    cols = ["axis", "value", "status"] + [c for c in cols if c not in ("axis", "value", "status")]
    for row in merged:
        for c in cols:
            row.setdefault(c, "")
    write_csv(os.path.join(outdir, "sweep.csv"), cols, merged)
    return records


# --- selfcheck invariant suite -------------------------------------------

def _small_spec(kind="nelson", modes=6, n_max=2):
    base = model.default_spec(kind)
    grid = fock.ModeGrid.geometric(base.grid.k_min, base.grid.k_max, modes)
    return model.ModelSpec(particle=base.particle, form=base.form, grid=grid,
                           n_max=n_max, kind=kind, sigma_threshold=base.sigma_threshold)


def selfcheck(seed: int = 0) -> list:
    """Full invariant suite; returns (name, passed, detail) triples."""
    checks = []

    def add(name, ok, detail=""):
        checks.append((name, bool(ok), detail))

    rng = np.random.default_rng(seed)

    # basis determinism
    grid = fock.ModeGrid.geometric(2e-4, 12.0, 8)
    b1 = fock.enumerate_basis(grid, 2)
    b2 = fock.enumerate_basis(grid, 2)
    add("basis-determinism", b1.states == b2.states and b1.index == b2.index)

    # CCR off the top shell + ladder adjoint
    small = fock.enumerate_basis(fock.ModeGrid.geometric(0.1, 2.0, 2), 3)
    keep = small.totals() <= small.n_max - 1
    ok_ccr = True
    for i in range(2):
        for jm in range(2):
            a_i = fock.ladder(small, i, "annihilate").toarray()
            adj = fock.ladder(small, jm, "create").toarray()
            comm = a_i @ adj - adj @ a_i
            expect = (1.0 if i == jm else 0.0) * np.eye(small.dim)
            ok_ccr &= bool(np.abs((comm - expect)[np.ix_(keep, keep)]).max() < 1e-12)
    add("ccr-off-top-shell", ok_ccr)
    a0 = fock.ladder(small, 0, "annihilate")
    add("ladder-adjoint", np.array_equal(a0.dagger().toarray(),
                                         fock.ladder(small, 0, "create").toarray()))

    # hermiticity at theta = 0 for both model kinds
    for kind in ("nelson", "qed-toy"):
        spc = _small_spec(kind)
        h = model.build_hamiltonian(spc, 0.0, 0.05).matrix
        add(f"hermiticity-theta0-{kind}", h.is_hermitian(1e-12))

    # splitting identity, entrywise at the carrier resolution (drop tol 1e-14)
    for kind in ("nelson", "qed-toy"):
        spc = _small_spec(kind)
        full = model.build_hamiltonian(spc, 0.2j, 0.05).matrix.toarray()
        cut = model.build_hamiltonian(spc, 0.2j, 0.05, 0.1, "cutoff").matrix.toarray()
        below = model.build_hamiltonian(spc, 0.2j, 0.05, 0.1, "below").matrix.toarray()
        dev = np.abs(full - cut - below).max()
        gate = 0.0 if kind == "nelson" else fock.DROP_TOL
        add(f"splitting-identity-{kind}", dev <= gate, f"max dev {dev:.2e}")

    # conjugation symmetry
    spc = _small_spec()
    h1 = model.build_hamiltonian(spc, 0.3j, 0.05).matrix.toarray()
    h2 = model.build_hamiltonian(spc, -0.3j, 0.05).matrix.toarray()
    add("conjugation-symmetry", np.abs(h2 - h1.conj().T).max() < 1e-14)

    # g = 0 exactness: spectrum, tracking, survival, decimation
    vals = np.sort_complex(np.array([v for v, _ in spectral.dense_spectrum(
        model.build_hamiltonian(spc, 0.0, 0.0).matrix)]))
    exact = np.sort_complex(model.decoupled_eigenvalues(spc))
    add("g0-spectrum", np.abs(vals - exact).max() < 1e-12)
    est = spectral.track_resonance(spc, 0.3j, [0.0], 1)[0]
    add("g0-track", est.value == complex(spc.particle.levels[1]) and est.residual == 0.0)
    psi = model.unperturbed_state(spc, 1)
    ts = np.linspace(0, 5, 40)[1:]
    trace = dynamics.propagate_survival(model.build_hamiltonian(spc, 0.0, 0.0).matrix,
                                        psi, ts, complex(spc.particle.levels[1]))
    add("g0-survival", float(trace.deviation.max()) < 1e-12)
    dec = rg.decimate(spc, 0.3j, 0.0, 1.0 + 0.01j, 0.1, 0.1)
    add("g0-decimation", abs(dec.e_z - (1.0 - (1.0 + 0.01j))) < 1e-12
        and dec.w_norm < 1e-12)

    # Combes identity at real theta (= 0): deformed assembly equals plain
    hd = model.build_hamiltonian(spc, 0.0, 0.05).matrix
    psis = resolvent.psi_test_set(spc, 1, seed=seed)
    ok_combes = True
    for z in (1.0 + 0.3j, 0.4 + 0.7j):
        for pv in psis[:2]:
            v_left = pv.concrete(spc, 0.0)
            a, _ = resolvent.resolvent_element(hd, v_left, v_left, z)
            b, _ = resolvent.resolvent_element(hd, pv.concrete(spc, -0.0), pv.concrete(spc, 0.0), z)
            ok_combes &= abs(a - b) <= 1e-10 * max(abs(a), 1.0)
    add("combes-real-theta", ok_combes)

    # unitarity of Krylov propagation
    hq = model.build_hamiltonian(spc, 0.0, 0.08).matrix
    amp = dynamics.krylov_propagate(hq, psi, np.linspace(0.5, 8.0, 6), psi)
    dense_tr = dynamics.propagate_survival(hq, psi, np.linspace(0.5, 8.0, 6),
                                           0.0, method="dense")
    add("unitarity-krylov", np.abs(amp - dense_tr.amplitude).max() < 1e-7)

    # config round trip
    cfg = model.spec_to_config(model.default_spec())
    cfg2 = model.spec_to_config(model.spec_from_config(cfg))
    add("config-roundtrip", canonical_json(cfg) == canonical_json(cfg2))

    # Feshbach isospectrality on random instances
    ok_fesh = True
    for _ in range(10):
        n = int(rng.integers(6, 9))
        H = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        r = int(rng.integers(1, n - 1))
        q, _ = np.linalg.qr(rng.normal(size=(n, r)) + 1j * rng.normal(size=(n, r)))
        P = fock.SparseOperator.from_dense(q @ q.conj().T)
        for z in np.linalg.eigvals(H):
            try:
                F = feshbach.feshbach_map(
                    fock.SparseOperator.from_dense(H - z * np.eye(n)), P)
            except ResonlabError:
                continue  # decimated block too close to singular for this z
            ok_fesh &= bool(np.min(np.abs(np.linalg.eigvals(F.matrix))) < 1e-8)
    add("feshbach-isospectrality", ok_fesh)

    return checks


# --- entry point ----------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="resonlab",
        description="Resonance laboratory: run named experiments from a JSON config.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--jobs", type=int, default=1)

    p_sweep = sub.add_parser("sweep", help="run an experiment across an axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated list of numbers")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--jobs", type=int, default=1)

    sub.add_parser("selfcheck", help="run the invariant suite")

    args = parser.parse_args(argv)
    try:
        if args.command == "selfcheck":
            results = selfcheck()
            for name, ok, detail in results:
                print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
            return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFCHECK
        cfg = load_config(args.config)
        if args.command == "run":
            record = run(cfg, outdir=args.out)
            print(f"ok: {cfg.experiment} -> {args.out or cfg.output_dir} "
                  f"(hash {record.config_hash[:12]})")
            return EXIT_OK
        values = [float(v) for v in args.values.split(",") if v]
        records = sweep(cfg, args.axis, values, jobs=args.jobs, outdir=args.out)
        failed = [r for r in records if r.status != "ok"]
        print(f"sweep: {len(records) - len(failed)}/{len(records)} values ok")
        return EXIT_OK if not failed else EXIT_NUMERICAL
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SelfcheckFailure as exc:
        print(f"selfcheck failure: {exc}", file=sys.stderr)
        return EXIT_SELFCHECK
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
