"""Command-line front end: generate measures, run scans and evolutions, and
persist every run as a manifest (JSON) plus plot-ready CSV artifacts.

Config values come from an optional key=value file overridden by repeated
--set flags; every field is echoed verbatim into the manifest.  Exit codes:
0 success, 2 validation error, 3 numerical failure (recorded in the
manifest before exiting).
"""

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import shellref
from .measures import (
    dimension_kato_bound_check,
    dimension_profile,
    kato_norm,
    load_measure,
    local_kato_modulus,
    make_ball_measure,
    make_cantor_measure,
    make_shell_measure,
    measure_hash,
    save_measure,
    total_variation,
)
from .propagator import SourceFunction, dispersive_ratio, evolve_ac, export_evolution_csv
from .spectral import (
    certificate_spot_check,
    embedded_scan,
    find_bound_states,
    high_energy_decay,
    power_decay_check,
    zero_energy_check,
)
from .wiener import fourier_transform_check, parameter_report

COMMANDS = (
    "measure-gen",
    "measure-kato",
    "measure-dim",
    "spectrum-scan",
    "bound-states",
    "zero-check",
    "high-energy",
    "evolve",
    "wiener-report",
    "oracle-table",
)


@dataclass
class RunConfig:
    command: str = ""
    input: str = ""
    outdir: str = "out"
    seed: int = 0
    quad_tol: float = 1e-8
    fit_tol: float = 0.05
    singular_tol: float = 1e-10
    lam_grid: str = "0.5:8.0:38"
    kappa_grid: str = "0.05:2.0:16"
    t_grid: str = "1:20:8:geom"
    r_grid: str = "0.06:2.0:12:geom"
    probe_radii: str = "0,0.4,0.8,1.5,2.5"
    levels: str = "250,1000"
    shell: str = ""
    ball: str = ""
    cantor: str = ""
    sigma: float = 1.0
    K: float = 8.0
    L: float = 64.0
    eps_fit: float = 0.3333333333333333
    kato_radius: float = 0.0
    certify: int = 0
    force: bool = False
    power_k: int = 2

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        for name in ("quad_tol", "fit_tol", "singular_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"tolerance {name} must be positive")
        if self.K <= 0 or self.L <= 0 or self.sigma <= 0:
            raise ValueError("K, L, and sigma must be positive")


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(field_type, raw: str):
    if field_type is bool:
        if raw.lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return _BOOL[raw.lower()]
    return field_type(raw)


def load_config(path: str | None, overrides, command: str) -> RunConfig:
    cfg = RunConfig(command=command)
    typemap = {f.name: f.type for f in fields(RunConfig)}
    pairs = []
    if path:
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"config line without '=': {line!r}")
                key, val = line.split("=", 1)
                pairs.append((key.strip(), val.strip()))
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override without '=': {item!r}")
        key, val = item.split("=", 1)
        pairs.append((key.strip(), val.strip()))
    for key, val in pairs:
        if key == "command" or key not in typemap:
            raise ValueError(f"unknown config key {key!r}")
        ftype = {"int": int, "float": float, "str": str, "bool": bool}[typemap[key]] if isinstance(
            typemap[key], str
        ) else typemap[key]
        setattr(cfg, key, _coerce(ftype, val))
    cfg.validate()
    return cfg


def parse_grid(spec: str) -> np.ndarray:
    """'a:b:n' -> linspace, 'a:b:n:geom' -> geomspace, 'x,y,z' -> literal."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) == 3:
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
            return np.linspace(a, b, n)
        if len(parts) == 4 and parts[3] == "geom":
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
            return np.geomspace(a, b, n)
        raise ValueError(f"bad grid spec {spec!r}")
    return np.array([float(tok) for tok in spec.split(",") if tok.strip() != ""])


def _parse_kv(blob: str) -> dict:
    out = {}
    for tok in blob.replace(",", " ").split():
        if "=" not in tok:
            raise ValueError(f"expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        out[key] = float(val)
    return out


def _measure_from_config(cfg: RunConfig):
    given = [name for name in ("shell", "ball", "cantor") if getattr(cfg, name)]
    if cfg.input and given:
        raise ValueError("pass either an input file or generator parameters, not both")
    if cfg.input:
        return load_measure(cfg.input)
    if len(given) != 1:
        raise ValueError("need exactly one of --input / shell= / ball= / cantor=")
    if given[0] == "shell":
        kv = _parse_kv(cfg.shell)
        return make_shell_measure(kv["a"], kv["g"], int(kv["n"]))
    if given[0] == "ball":
        kv = _parse_kv(cfg.ball)
        return make_ball_measure(kv["a"], kv["mass"], int(kv["n"]), seed=cfg.seed)
    kv = _parse_kv(cfg.cantor)
    return make_cantor_measure(kv["s"], int(kv["depth"]), kv["mass"])


def _write_csv(path: str, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(
                ",".join(f"{v:.12e}" if isinstance(v, float) else str(v) for v in row) + "\n"
            )


def _manifest(cfg: RunConfig, results: dict, artifacts, status: str = "ok", error: str = "") -> dict:
    doc = {
        "command": cfg.command,
        "status": status,
        "config": asdict(cfg),
        "results": results,
        "artifacts": sorted(artifacts),
    }
    if error:
        doc["error"] = error
    return doc


def _emit(cfg: RunConfig, doc: dict) -> None:
    os.makedirs(cfg.outdir, exist_ok=True)
    path = os.path.join(cfg.outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


# ---------------------------------------------------------------------------
# command bodies (each returns a results dict and a list of artifact files)
# ---------------------------------------------------------------------------


def _cmd_measure_gen(cfg: RunConfig):
    mu = _measure_from_config(cfg)
    os.makedirs(cfg.outdir, exist_ok=True)
    out = os.path.join(cfg.outdir, "measure.json")
    save_measure(mu, out)
    res = {
        "n_atoms": mu.n_atoms,
        "total_variation": total_variation(mu),
        "hash": measure_hash(mu),
    }
    return res, [out]


def _cmd_measure_kato(cfg: RunConfig):
    mu = _measure_from_config(cfg)
    global_norm = kato_norm(mu, seed=cfg.seed)
    radii = parse_grid(cfg.r_grid)
    rows = [(float(r), float(local_kato_modulus(mu, float(r), seed=cfg.seed))) for r in radii]
    os.makedirs(cfg.outdir, exist_ok=True)
    out = os.path.join(cfg.outdir, "kato.csv")
    _write_csv(out, "r,local_kato", rows)
    return {"kato_norm": global_norm, "hash": measure_hash(mu)}, [out]


def _cmd_measure_dim(cfg: RunConfig):
    mu = _measure_from_config(cfg)
    radii = parse_grid(cfg.r_grid)
    prof = dimension_profile(mu, radii, seed=cfg.seed)
    extent = float(np.max(np.linalg.norm(mu.positions, axis=1) + mu.panel_radii))
    majorant = dimension_kato_bound_check(mu, prof, int(np.ceil(np.log2(max(extent, 1e-9)))))
    os.makedirs(cfg.outdir, exist_ok=True)
    out = os.path.join(cfg.outdir, "dimension.csv")
    _write_csv(
        out,
        "r,sup_mass",
        [(float(r), float(m)) for r, m in zip(prof.radii, prof.max_ball_mass)],
    )
    res = {
        "alpha": prof.alpha_est,
        "envelope_constant": prof.envelope_constant(),
        "majorant_passed": bool(majorant["passed"]),
    }
    return res, [out]


def _cmd_spectrum_scan(cfg: RunConfig):
    mu = _measure_from_config(cfg)
    lam = parse_grid(cfg.lam_grid)
    scan = embedded_scan(mu, lam)
    rows = [
        ("real", p.value, s, i, o)
        for p, s, i, o in zip(scan.params, scan.min_singular, scan.inv_norm_tv, scan.op_norm_l2v)
    ]
    os.makedirs(cfg.outdir, exist_ok=True)
    out = os.path.join(cfg.outdir, "scan.csv")
    _write_csv(out, "kind,lambda_or_kappa,min_singular,inv_norm_tv,op_norm_l2v", rows)
    res = dict(scan.notes)
    if cfg.certify > 0:
        res["certificate"] = certificate_spot_check(mu, scan, n_points=cfg.certify, seed=cfg.seed)
    return res, [out]


def _cmd_bound_states(cfg: RunConfig):
    mu = _measure_from_config(cfg)
    grid = parse_grid(cfg.kappa_grid)
    bs = find_bound_states(mu, (float(grid[0]), float(grid[-1])), grid=grid.size)
    labels = bs.mode_labels if bs.mode_labels is not None else [-1] * len(bs.kappas)
    rows = [
        (float(k), float(e), int(m), int(l))
        for k, e, m, l in zip(bs.kappas, bs.energies, bs.multiplicities, labels)
    ]
    os.makedirs(cfg.outdir, exist_ok=True)
    out = os.path.join(cfg.outdir, "bound_states.csv")
    _write_csv(out, "kappa,energy,multiplicity,mode_label", rows)
    return {"count": len(bs.kappas), "notes": bs.notes}, [out]


def _cmd_zero_check(cfg: RunConfig):
    mu = _measure_from_config(cfg)
    levels = [int(v) for v in parse_grid(cfg.levels)]
    rep = zero_energy_check(mu, levels)
    rows = [(int(n), float(s)) for n, s in zip(rep["levels"], rep["min_singulars"])]
    os.makedirs(cfg.outdir, exist_ok=True)
    out = os.path.join(cfg.outdir, "zero_check.csv")
    _write_csv(out, "level,min_singular", rows)
    res = {
        "verdict": rep["verdict"],
        "factors_per_4x": rep["factors_per_4x"],
        "levels": rep["levels"],
    }
    return res, [out]


def _cmd_high_energy(cfg: RunConfig):
    mu = _measure_from_config(cfg)
    lam = parse_grid(cfg.lam_grid)
    rep = high_energy_decay(mu, lam, force=cfg.force)
    power = power_decay_check(mu, lam, k=cfg.power_k, force=cfg.force)
    rows = [
        (float(l), float(nv), float(n2))
        for l, nv, n2 in zip(rep["lam_grid"], rep["norms"], power["norms_sq"])
    ]
    os.makedirs(cfg.outdir, exist_ok=True)
    out = os.path.join(cfg.outdir, "high_energy.csv")
    _write_csv(out, "lambda,norm_l2v,norm_sq_tv", rows)
    res = {
        "slope": rep["slope"],
        "eps_fit": rep["eps_fit"],
        "exponent_sq": power["exponent_sq"],
        "exponent_k": power["exponent_k"],
        "k": cfg.power_k,
    }
    return res, [out]


def _cmd_evolve(cfg: RunConfig):
    mu = _measure_from_config(cfg)
    times = parse_grid(cfg.t_grid)
    radii = parse_grid(cfg.probe_radii)
    probes = np.zeros((radii.size, 3))
    probes[:, 0] = radii
    f = SourceFunction.gaussian(cfg.sigma)
    result = evolve_ac(mu, f, times, probes, cutoff=cfg.L, force=cfg.force)
    os.makedirs(cfg.outdir, exist_ok=True)
    out = os.path.join(cfg.outdir, "evolution.csv")
    export_evolution_csv(result, out)
    runfile = os.path.join(cfg.outdir, "run_config.txt")
    with open(runfile, "w") as fh:
        for key, val in sorted(asdict(cfg).items()):
            fh.write(f"{key} = {val}\n")
        for key, val in sorted(result.notes.items()):
            fh.write(f"note.{key} = {val}\n")
    res = {"f_norm": result.f_norm, "notes": result.notes}
    if times.size >= 5 and np.max(times) / np.min(times) >= 10.0:
        sup, slope = dispersive_ratio(result)
        res["sup_ratio"] = sup
        res["trend_slope"] = slope
    return res, [out, runfile]


def _cmd_wiener_report(cfg: RunConfig):
    mu = _measure_from_config(cfg)
    lam = parse_grid(cfg.lam_grid)
    params = parameter_report(mu, cfg.L, lam, cfg.eps_fit, K=cfg.K)
    doc = params.to_json_dict()
    doc["w_norm_bound"] = kato_norm(mu, seed=cfg.seed) / (4.0 * np.pi)
    doc["transform_deviation_at_0"] = fourier_transform_check(mu, cfg.L, 0.0)
    os.makedirs(cfg.outdir, exist_ok=True)
    out = os.path.join(cfg.outdir, "wiener.json")
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc, [out]


def _cmd_oracle_table(cfg: RunConfig):
    kv = _parse_kv(cfg.shell) if cfg.shell else {"a": 1.0, "g": -2.0}
    lam = parse_grid(cfg.lam_grid)
    ell_max = int(np.ceil(2.0 * kv["a"] * float(np.max(lam)))) + 8
    spec = shellref.ShellSpec(kv["a"], kv["g"], ell_max)
    rows = []
    for l in lam:
        betas = shellref.mode_eigenvalues(spec, complex(float(l)))
        for ell, b in enumerate(betas):
            rows.append((float(l), ell, float(b.real), float(b.imag)))
    os.makedirs(cfg.outdir, exist_ok=True)
    modes = os.path.join(cfg.outdir, "oracle_modes.csv")
    _write_csv(modes, "lambda,ell,re_beta,im_beta", rows)
    bound = os.path.join(cfg.outdir, "oracle_bound_states.csv")
    roots = shellref.shell_bound_states(spec)
    _write_csv(
        bound,
        "kappa,ell,multiplicity",
        [(float(r["kappa"]), int(r["ell"]), int(r["multiplicity"])) for r in roots],
    )
    return {"ell_max": ell_max, "bound_count": len(roots)}, [modes, bound]


_BODIES = {
    "measure-gen": _cmd_measure_gen,
    "measure-kato": _cmd_measure_kato,
    "measure-dim": _cmd_measure_dim,
    "spectrum-scan": _cmd_spectrum_scan,
    "bound-states": _cmd_bound_states,
    "zero-check": _cmd_zero_check,
    "high-energy": _cmd_high_energy,
    "evolve": _cmd_evolve,
    "wiener-report": _cmd_wiener_report,
    "oracle-table": _cmd_oracle_table,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mvschro",
        description="measure-supported Schroedinger operators: scans, spectra, evolution",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config entry (repeatable)",
    )
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.command)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        results, artifacts = _BODIES[cfg.command](cfg)
    except (ValueError, KeyError, OSError) as exc:
        _emit(cfg, _manifest(cfg, {}, [], status="error", error=str(exc)))
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, AssertionError, np.linalg.LinAlgError) as exc:
        _emit(cfg, _manifest(cfg, {}, [], status="error", error=str(exc)))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    _emit(cfg, _manifest(cfg, results, artifacts))
    return 0


if __name__ == "__main__":
    sys.exit(main())
