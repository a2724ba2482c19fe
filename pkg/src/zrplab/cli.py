"""Experiment runner: load a config file, dispatch, emit CSV/JSON artifacts.

Config files are INI-style, one experiment per file:

    [experiment]
    kind = thermo-table        ; thermo-table | figures | simulate | hydro-compare
                               ; | jko | ldrate | fluct | tagged
    seed = 42                  ; mandatory for stochastic kinds

    [model]
    name = constant            ; linear | constant | evans | landim | tabulated
    b = 2.5
    epsilon = 0.0

    [params]
    N = 128
    ...

Each run writes into its own directory (config hash + timestamp) a manifest
listing every produced file with a content hash; numbers are formatted with
repr (shortest round-trip) so reruns with the same config and seed are
byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, action, fluct, jump_rates, kmc, metric, pde, thermo
from .errors import ConvergenceError, OutOfDomainError

KINDS = ("thermo-table", "figures", "simulate", "hydro-compare",
         "jko", "ldrate", "fluct", "tagged")
STOCHASTIC_KINDS = ("simulate", "hydro-compare", "fluct", "tagged")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


@dataclass
class Diagnostic:
    level: str  # "error" | "warning"
    field: str
    message: str


@dataclass
class ExperimentConfig:
    kind: str
    model: jump_rates.JumpRateSpec
    seed: int | None
    params: dict
    out_dir: str

    def canonical(self) -> dict:
        return {
            "kind": self.kind,
            "model": dataclasses.asdict(self.model),
            "seed": self.seed,
            "params": {k: self.params[k] for k in sorted(self.params)},
        }

    def content_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.canonical(), sort_keys=True).encode()
        ).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ValueError(f"cannot read config file {path}")
    if "experiment" not in cp:
        raise ValueError("config needs an [experiment] section")
    exp = cp["experiment"]
    kind = exp.get("kind", "").strip()
    if kind not in KINDS:
        raise ValueError(f"experiment.kind must be one of {KINDS}, got {kind!r}")
    seed = exp.getint("seed") if "seed" in exp else None
    out_dir = exp.get("out", "runs").strip()

    model_sec = cp["model"] if "model" in cp else {}
    name = model_sec.get("name", "linear").strip().lower()
    table = None
    if "table" in model_sec:
        table = tuple(float(v) for v in model_sec.get("table").split(","))
    spec = jump_rates.JumpRateSpec(
        model=name,
        b=float(model_sec.get("b", 0.0)),
        epsilon=float(model_sec.get("epsilon", 0.0)),
        table=table,
        tail=model_sec.get("tail", None if table is None else "constant"),
    )

    params = {}
    if "params" in cp:
        for key, raw in cp["params"].items():
            raw = raw.strip()
            try:
                params[key] = int(raw)
            except ValueError:
                try:
                    params[key] = float(raw)
                except ValueError:
                    params[key] = raw
    return ExperimentConfig(kind=kind, model=spec, seed=seed,
                            params=params, out_dir=out_dir)


_REQUIRED = {
    "simulate": ("n", "t"),
    "hydro-compare": ("t", "m", "replicas"),
    "jko": ("m", "hstep", "nsteps"),
    "ldrate": ("m", "t"),
    "fluct": ("n", "rho_star", "replicas"),
    "tagged": ("n", "rho_star", "t", "replicas"),
}


def validate(cfg: ExperimentConfig) -> list[Diagnostic]:
    """Static checks only; returns diagnostics instead of raising."""
    out = []
    if cfg.kind in STOCHASTIC_KINDS and cfg.seed is None:
        out.append(Diagnostic("error", "experiment.seed",
                              f"kind={cfg.kind} is stochastic and needs a seed"))
    for key in _REQUIRED.get(cfg.kind, ()):
        if key not in cfg.params:
            out.append(Diagnostic("error", f"params.{key}",
                                  f"kind={cfg.kind} requires params.{key}"))
    if out and any(d.level == "error" for d in out):
        return out

    ens = thermo.Ensemble(cfg.model)
    rho_star = float(cfg.params.get("rho_star", 1.0))
    if np.isfinite(ens.phi_c):
        phi_nodes, _, _, r_nodes = ens.table_nodes()
        sup_r = float(r_nodes[-1])
        if rho_star > 0.9 * sup_r:
            out.append(Diagnostic(
                "warning", "params.rho_star",
                f"density {rho_star:g} within 10% of the saturation estimate {sup_r:g}"))
    if "dt" in cfg.params and "m" in cfg.params:
        m = int(cfg.params["m"])
        amp = float(cfg.params.get("amplitude", 0.5))
        base = float(cfg.params.get("rho_star", 1.0))
        probe = pde.DensityField(np.full(m, base + amp))
        bound = pde.cfl_bound(ens, probe)
        if float(cfg.params["dt"]) > bound:
            out.append(Diagnostic(
                "warning", "params.dt",
                f"dt={cfg.params['dt']:g} above the CFL estimate {bound:g}; "
                f"the solver will substep"))
    if cfg.kind in ("hydro-compare", "fluct", "tagged"):
        if int(cfg.params.get("replicas", 0)) < 100:
            out.append(Diagnostic(
                "warning", "params.replicas",
                "fewer than 100 replicas gives weak statistical power"))
    if cfg.kind == "hydro-compare":
        m = int(cfg.params["m"])
        for n_val in _n_list(cfg):
            if n_val % m:
                out.append(Diagnostic("error", "params.m",
                                      f"M={m} must divide N={n_val}"))
    return out


def _n_list(cfg) -> list[int]:
    raw = cfg.params.get("n_list", "32,64,128")
    if isinstance(raw, (int, float)):
        return [int(raw)]
    return [int(v) for v in str(raw).split(",")]


# ----- artifact helpers -----------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class _RunDir:
    def __init__(self, cfg: ExperimentConfig, base: str | Path):
        stamp = time.strftime("%Y%m%d-%H%M%S")
        stem = Path(base) / f"{cfg.kind}-{cfg.content_hash()[:8]}-{stamp}"
        path = stem
        for k in range(1, 1000):  # same-second reruns get a suffix
            if not path.exists():
                break
            path = stem.with_name(f"{stem.name}-{k}")
        self.path = path
        self.path.mkdir(parents=True)
        self.outputs = []

    def write_csv(self, name: str, header: list[str], rows):
        p = self.path / name
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        p.write_bytes(("\n".join(lines) + "\n").encode())
        self._register(p)

    def write_json(self, name: str, obj):
        p = self.path / name
        p.write_bytes((json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())
        self._register(p)

    def _register(self, p: Path):
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        self.outputs.append({"path": p.name, "sha256": digest})


# ----- experiment kinds ------------------------------------------------------------


def _run_thermo_table(cfg, ens, rd: _RunDir):
    cap = float(cfg.params.get("phi_max", 4.0))
    phi_hi = 0.9 * min(ens.phi_c, cap)
    rows = int(cfg.params.get("rows", 51))
    phis = np.linspace(0.0, phi_hi, rows)
    table = []
    for p in phis:
        Z, _ = ens.partition_function(p)
        table.append((p, Z, ens.density(p)))
    rd.write_csv("thermo_phi.csv", ["phi", "Z", "R"], table)

    rho_max = float(cfg.params.get("rho_max", ens.density(phi_hi)))
    rhos = np.linspace(rho_max / rows, rho_max, rows)
    table = []
    for r in rhos:
        tv = ens.thermo_value(float(r))
        table.append((tv.rho, tv.phi, tv.S, tv.dS, tv.sigma, tv.chi))
    rd.write_csv("thermo_rho.csv", ["rho", "Phi", "S", "dS", "sigma", "chi"], table)


_FIGURE_BS = {"evans": (1.0, 2.5, 3.5), "landim": (0.5, 3.0, 5.0)}


def _run_figures(cfg, ens, rd: _RunDir):
    family = cfg.model.model
    if family not in _FIGURE_BS:
        raise ValueError("figures experiments need model.name = evans or landim")
    phis = np.linspace(0.0, 0.99, int(cfg.params.get("rows", 100)))
    for b in _FIGURE_BS[family]:
        fam_ens = thermo.Ensemble(jump_rates.JumpRateSpec(family, b=b))
        rows = [(p, fam_ens.density(float(p))) for p in phis]
        rd.write_csv(f"{family}_b{b:g}.csv", ["phi", "R"], rows)


def _run_simulate(cfg, ens, rd: _RunDir):
    N = int(cfg.params["n"])
    d = int(cfg.params.get("d", 1))
    T = float(cfg.params["t"])
    rho = float(cfg.params.get("rho_star", 1.0))
    snap_dt = cfg.params.get("snapshot_dt")
    cfg0 = kmc.sample_equilibrium(ens, rho, N, d, cfg.seed)
    times = None
    if snap_dt:
        times = np.arange(0.0, T + 1e-12, float(snap_dt))
    res = kmc.run(ens, cfg0, T, cfg.seed + 1, snapshot_times=times)
    if times is not None:
        rows = []
        for i, t in enumerate(res.snapshot_times):
            for x, k in enumerate(res.snapshots[i]):
                rows.append((t, x, int(k)))
        rd.write_csv("snapshots.csv", ["t", "site", "occupancy"], rows)
    rd.write_json("summary.json", {
        "seed": cfg.seed, "N": N, "d": d, "T": T, "rho": rho,
        "events": res.n_events,
        "mean_jump_rate_timeavg": res.time_avg_jump_rate,
        "mean_jump_rate_expected": ens.mean_jump_rate(rho),
    })


def hydro_compare(ens, N: int, M: int, T: float, replicas: int, seed,
                  base: float = 1.0, amplitude: float = 0.5):
    """L1 gap at time T between the replica-averaged block density and the PDE."""
    rho0 = pde.from_function(lambda u: base + amplitude * np.sin(2 * np.pi * u), M)
    bound = pde.cfl_bound(ens, rho0)
    n_steps = max(1, int(np.ceil(T / bound)))
    ref = pde.solve(ens, rho0, T, T / n_steps).fields[-1]
    seeds = np.random.SeedSequence(seed).generate_state(2 * replicas)
    acc = np.zeros(M)
    for r in range(replicas):
        start = kmc.sample_profile(ens, rho0, N, seeds[2 * r])
        out = kmc.run(ens, start, T, seeds[2 * r + 1])
        acc += kmc.empirical_density(out.config, M).values
    mean_field = acc / replicas
    return float(np.abs(mean_field - ref.values).sum() / M), mean_field, ref


def _write_field_path(rd: _RunDir, ens, path: pde.FieldPath, dt: float, name: str):
    """pde trajectory artifacts: snapshot CSV (t, cell, value) + summary JSON."""
    rows = []
    for t, f in zip(path.times, path.fields):
        for i, v in enumerate(f.values.ravel()):
            rows.append((t, i, v))
    rd.write_csv(f"{name}_snapshots.csv", ["t", "cell", "value"], rows)
    masses = [f.mass() for f in path.fields]
    rd.write_json(f"{name}_summary.json", {
        "M": path.fields[0].M, "d": path.fields[0].d, "dt": dt,
        "T": float(path.times[-1]),
        "mass_drift": max(abs(m - masses[0]) for m in masses),
        "entropy_series": [pde.entropy_functional(ens, f) for f in path.fields],
    })


def _run_hydro_compare(cfg, ens, rd: _RunDir):
    M = int(cfg.params["m"])
    T = float(cfg.params["t"])
    replicas = int(cfg.params["replicas"])
    base = float(cfg.params.get("rho_star", 1.0))
    amp = float(cfg.params.get("amplitude", 0.5))
    rows = []
    for i, N in enumerate(_n_list(cfg)):
        err, _, _ = hydro_compare(ens, N, M, T, replicas, cfg.seed + i,
                                  base=base, amplitude=amp)
        rows.append((N, err))
    rd.write_csv("hydro_compare.csv", ["N", "l1_error"], rows)
    rho0 = pde.from_function(lambda u: base + amp * np.sin(2 * np.pi * u), M)
    bound = pde.cfl_bound(ens, rho0)
    n_steps = max(1, int(np.ceil(T / bound)))
    dt_ref = T / n_steps
    ref = pde.solve(ens, rho0, T, dt_ref, snapshot_dt=max(1, n_steps // 10) * dt_ref)
    _write_field_path(rd, ens, ref, dt_ref, "pde_reference")
    rd.write_json("summary.json", {
        "seed": cfg.seed, "M": M, "T": T, "replicas": replicas,
        "errors": {str(n): e for n, e in rows},
        "monotone_decreasing": all(rows[i][1] > rows[i + 1][1] for i in range(len(rows) - 1)),
    })


def _run_jko(cfg, ens, rd: _RunDir):
    M = int(cfg.params["m"])
    hstep = float(cfg.params["hstep"])
    n_steps = int(cfg.params["nsteps"])
    amp = float(cfg.params.get("amplitude", 0.3))
    base = float(cfg.params.get("rho_star", 1.0))
    rho0 = pde.from_function(lambda u: base + amp * np.sin(2 * np.pi * u), M)
    path, entropies = action.jko_flow(ens, rho0, hstep, n_steps)
    rows = [(k, path.times[k], entropies[k]) for k in range(len(entropies))]
    rd.write_csv("jko_entropy.csv", ["k", "t", "entropy"], rows)
    # reference trajectory for the same flow
    bound = pde.cfl_bound(ens, rho0)
    sub = max(1, int(np.ceil(hstep / bound)))
    ref = pde.solve(ens, rho0, n_steps * hstep, hstep / sub, snapshot_dt=hstep)
    dist = max(
        float(np.abs(path.fields[k].values - ref.fields[k].values).sum() / M)
        for k in range(len(path))
    )
    rd.write_json("summary.json", {
        "M": M, "hstep": hstep, "nsteps": n_steps,
        "entropy_monotone": bool(np.all(np.diff(entropies) <= 1e-12)),
        "sup_l1_gap_vs_pde": dist,
    })


def _run_ldrate(cfg, ens, rd: _RunDir):
    M = int(cfg.params["m"])
    T = float(cfg.params["t"])
    amp = float(cfg.params.get("amplitude", 0.3))
    base = float(cfg.params.get("rho_star", 1.0))
    rho0 = pde.from_function(lambda u: base + amp * np.sin(2 * np.pi * u), M)
    dts = [float(v) for v in str(cfg.params.get("dt_list", "")).split(",")] \
        if cfg.params.get("dt_list") else None
    if dts is None:
        bound = pde.cfl_bound(ens, rho0)
        dt0 = T / max(1, int(np.ceil(T / bound)))
        dts = [dt0, dt0 / 2, dt0 / 4]
    rows = []
    for dt in dts:
        path = pde.solve(ens, rho0, T, dt, snapshot_dt=dt)
        rate = action.path_rate(ens, path)
        dec = action.rate_decomposition(ens, path)
        rows.append((dt, rate, abs(rate - dec.total()), dec.action,
                     dec.dissipation, dec.entropy_delta))
    rd.write_csv("ldrate.csv",
                 ["dt", "path_rate", "identity_residual",
                  "action", "dissipation", "entropy_delta"], rows)
    orders = [np.log2(rows[i][1] / rows[i + 1][1]) for i in range(len(rows) - 1)]
    rd.write_json("summary.json", {"M": M, "T": T, "dts": dts,
                                   "rate_orders_per_halving": orders})


def _run_fluct(cfg, ens, rd: _RunDir):
    N = int(cfg.params["n"])
    rho_star = float(cfg.params["rho_star"])
    replicas = int(cfg.params["replicas"])
    mode = int(cfg.params.get("mode", 1))
    g = fluct.FourierTestFunction(d=1, modes=((mode, np.sqrt(2.0), 0.0),))
    rep = fluct.equilibrium_variance_check(ens, rho_star, g, N, replicas, cfg.seed)
    rd.write_json("variance_check.json", {
        "seed": cfg.seed, "N": N, "rho_star": rho_star, "replicas": replicas,
        "var_hat": rep.var_hat, "stderr": rep.stderr,
        "static_prediction": rep.static_prediction,
        "ou_prediction": rep.ou_prediction,
        "passed": rep.passed,
    })
    ok = rep.passed
    if replicas >= 100:
        window = (float(cfg.params.get("t1", 0.05)), float(cfg.params.get("t2", 0.25)))
        mrep = fluct.martingale_residual(ens, rho_star, g, [0.0, 1.0], N=N,
                                         replicas=replicas, window=window,
                                         seed=cfg.seed + 1)
        rd.write_json("martingale.json", {
            "model": cfg.model.label(), "N": N, "replicas": replicas,
            "window": list(window), "z": mrep.z,
            "mean_increment": mrep.mean_increment, "stderr": mrep.stderr,
            "seed": cfg.seed + 1,
        })
        ok = ok and -4 < mrep.z < 4
    return ok


def _run_tagged(cfg, ens, rd: _RunDir):
    expected = ens.self_diffusivity(float(cfg.params["rho_star"]))
    res = kmc.tagged_run(
        ens, float(cfg.params["rho_star"]), int(cfg.params["n"]),
        int(cfg.params.get("d", 1)), float(cfg.params["t"]),
        cfg.seed, int(cfg.params["replicas"]),
    )
    ok = abs(res.sigma_hat - expected) <= 4 * res.stderr
    rd.write_json("tagged.json", {
        "seed": cfg.seed,
        "sigma_hat": res.sigma_hat,
        "stderr": res.stderr,
        "expected": expected,
        "within_4_stderr": bool(ok),
        "replicas": int(cfg.params["replicas"]),
    })
    return ok


_RUNNERS = {
    "thermo-table": _run_thermo_table,
    "figures": _run_figures,
    "simulate": _run_simulate,
    "hydro-compare": _run_hydro_compare,
    "jko": _run_jko,
    "ldrate": _run_ldrate,
    "fluct": _run_fluct,
    "tagged": _run_tagged,
}


def run_experiment(cfg: ExperimentConfig,
                   out_base: str | Path | None = None) -> tuple[Path, bool]:
    """Execute one experiment; returns (run directory, statistical pass flag)."""
    diags = validate(cfg)
    errors = [d for d in diags if d.level == "error"]
    if errors:
        raise ValueError("; ".join(f"{d.field}: {d.message}" for d in errors))
    t0 = time.time()
    ens = thermo.Ensemble(cfg.model)
    rd = _RunDir(cfg, out_base if out_base is not None else cfg.out_dir)
    ok = _RUNNERS[cfg.kind](cfg, ens, rd)
    ok = True if ok is None else bool(ok)
    manifest = {
        "config": cfg.canonical(),
        "config_hash": cfg.content_hash(),
        "versions": {
            "zrplab": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "wall_time_s": time.time() - t0,
        "warnings": [dataclasses.asdict(d) for d in diags if d.level == "warning"],
        "outputs": rd.outputs,
    }
    (rd.path / "manifest.json").write_bytes(
        (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return rd.path, ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="zrp-hydro",
        description="Run a zero range process experiment from a config file.")
    parser.add_argument("config", help="path to the experiment config file")
    parser.add_argument("--out", default=None, help="output base directory")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("--validate-only", action="store_true",
                        help="print diagnostics and exit")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        diags = validate(cfg)
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    for d in diags:
        print(f"{d.level}: {d.field}: {d.message}", file=sys.stderr)
    if args.validate_only:
        return EXIT_CONFIG if any(d.level == "error" for d in diags) else EXIT_OK
    if any(d.level == "error" for d in diags):
        return EXIT_CONFIG

    try:
        path, ok = run_experiment(cfg, out_base=args.out)
    except (ConvergenceError, OutOfDomainError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(path)
    if not ok:
        print("statistical check failed; see artifacts", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
