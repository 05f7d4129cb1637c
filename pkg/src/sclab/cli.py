"""Command line entry point: ``sclab <command> --config run.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical guard, 4 self-test failure.
"""
from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import io
from .classical import FlowConfig, dist_integrability, liouville_residual, push_forward
from .config import ExperimentConfig, TestFunctionConfig, load_config
from .ensemble import (
    ExperimentSettings,
    GridRule,
    RandomFamily,
    classical_reach,
    limit_measure,
    run_convergence_experiment,
)
from .error_terms import coulomb_discrepancy, pair_I_eps, write_error_csv
from .errors import ConfigError, NyquistViolation, OutOfBox, TailOverflow
from .grid import Axis, SpatialGrid, momentum_density, wave_packet
from .measures import expectation_measure
from .phase_space import Bump, TestFunction, TimeBump, gaussian_smooth, husimi, pair, wigner
from .potential import Potential
from .propagator import PropagatorConfig, propagate
from .selftest import run_selftest

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_GUARD, EXIT_SELFTEST = 0, 2, 3, 4
FIELD_LIMIT = 20_000_000  # values per phase-space field


def _version() -> str:
    try:
        return version("sclab")
    except PackageNotFoundError:
        return "unknown"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sclab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("propagate", "propagate family members; field dumps and diagnostics CSV"),
        ("wigner", "Wigner and Husimi fields; marginal and pairing CSV"),
        ("classical", "push limit measures along the classical flow"),
        ("errorterms", "error-term pairings per eps"),
        ("converge", "averaged Husimi-versus-flow convergence experiment"),
    ]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=1, metavar="N")
        p.add_argument("--seed-override", type=int, metavar="K", help="replace family and dictionary seeds")
    sub.add_parser("selftest", help="run the built-in invariant checks")
    return parser


# ---------------------------------------------------------------------------
# builders


def make_potential(cfg: ExperimentConfig) -> Potential:
    c = cfg.potential
    return Potential.from_catalog(c.name, c.n, charges=tuple(c.charges),
                                  pairs=None if c.pairs is None else tuple(map(tuple, c.pairs)),
                                  soften=c.soften, singular_enabled=c.singular_enabled, **c.params)


def make_family(cfg: ExperimentConfig) -> RandomFamily:
    f = cfg.family
    return RandomFamily(cfg.potential.n, tuple(f.center), tuple(f.scale), f.law, f.truncation, f.alpha,
                        f.envelope_radius, f.envelope_power, f.n_w, cfg.seeds.family)


def make_test_function(t: TestFunctionConfig) -> TestFunction:
    return TestFunction.separable(Bump(t.x_center, t.x_radius, t.plateau * t.x_radius),
                                  Bump(t.p_center, t.p_radius, t.plateau * t.p_radius))


def flow_config(cfg: ExperimentConfig) -> FlowConfig:
    return FlowConfig(h=cfg.converge.h, r_guard=cfg.converge.r_guard)


def grid_rule(cfg: ExperimentConfig) -> GridRule:
    c = cfg.converge
    return GridRule(k_tail=c.k_tail, t_x=c.t_x, t_p=c.t_p, offset_diagonal=c.offset_diagonal,
                    max_count=c.max_count)


def grids_for(cfg: ExperimentConfig, family: RandomFamily, pot: Potential) -> dict:
    """Fixed grid from the config, or the automatic per-eps rule."""
    if cfg.grid is not None:
        g = SpatialGrid(tuple(Axis(lo, hi, c) for lo, hi, c in zip(cfg.grid.lo, cfg.grid.hi, cfg.grid.count)))
        return {eps: g for eps in cfg.eps_ladder}
    xr, pr = classical_reach(family, pot, cfg.T, flow_config(cfg))
    rule = grid_rule(cfg)
    return {eps: rule.build(eps, family.alpha, family.envelope_radius, xr, pr) for eps in cfg.eps_ladder}


def settings_for(cfg: ExperimentConfig, threads: int) -> ExperimentSettings:
    c = cfg.converge
    return ExperimentSettings(
        samples=cfg.samples, grid_rule=grid_rule(cfg), dt_factor=c.dt_factor, energy_cap=c.energy_cap,
        tail_tol=c.tail_tol, nyquist_tol=c.nyquist_tol, flow=flow_config(cfg), dictionary_seed=cfg.seeds.dictionary,
        dictionary_K=c.dictionary_K, skip_below=c.skip_below, tail_radii=tuple(c.tail_radii),
        probe_count=c.probe_count, integrability_R=c.integrability_R, beta=c.beta, threads=threads)


def _tag(eps: float) -> str:
    return f"eps_{eps:g}"


def _grid_summary(g: SpatialGrid) -> dict:
    return {"lo": [a.lo for a in g.axes], "hi": [a.hi for a in g.axes], "count": [a.count for a in g.axes]}


# ---------------------------------------------------------------------------
# commands


def cmd_propagate(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    pot, fam = make_potential(cfg), make_family(cfg)
    grids = grids_for(cfg, fam, pot)
    o = cfg.propagate
    pcfg = PropagatorConfig(dt=o.dt, tail_tol=o.tail_tol, nyquist_tol=o.nyquist_tol, energy_cap=o.energy_cap, tail_radii=tuple(o.tail_radii))
    labels = fam.labels()
    n = fam.n
    dts = {}
    for eps, g in grids.items():
        d = out / _tag(eps)
        d.mkdir(parents=True, exist_ok=True)
        for m in range(min(o.members, fam.n_w)):
            psi0 = wave_packet(g, eps, fam.alpha, labels[m, :n], labels[m, n:], fam.envelope)
            tr = propagate(psi0, pot, cfg.T, pcfg, samples=cfg.samples, keep_states=o.dump_fields)
            io.write_diagnostics_csv(d / f"diagnostics_w{m}.csv", tr.diagnostics)
            for i, psi in enumerate(tr.states):
                io.dump_wavefunction(psi, d / f"psi_w{m}_t{i:03d}.sclb")
            dts[str(eps)] = tr.dt
    return {"grids": {str(e): _grid_summary(g) for e, g in grids.items()}, "dt": dts}


def _check_size(g: SpatialGrid):
    size = int(np.prod(g.shape)) ** 2
    if size > FIELD_LIMIT:
        raise ConfigError(f"phase-space field would hold {size} values (limit {FIELD_LIMIT}); use a coarser grid")


def cmd_wigner(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    pot, fam = make_potential(cfg), make_family(cfg)
    grids = grids_for(cfg, fam, pot)
    o = cfg.wigner
    phi = make_test_function(o.test_function) if o.test_function else None
    labels = fam.labels()
    n = fam.n
    rows = []
    for eps, g in grids.items():
        _check_size(g)
        d = out / _tag(eps)
        d.mkdir(parents=True, exist_ok=True)
        mg = g.momentum_grid(eps)
        for m in range(min(o.members, fam.n_w)):
            psi0 = wave_packet(g, eps, fam.alpha, labels[m, :n], labels[m, n:], fam.envelope)
            tr = propagate(psi0, pot, cfg.T, PropagatorConfig(), samples=2)
            for i, (t, psi) in enumerate(zip(tr.times, tr.states)):
                rho, mrho = psi.density(), momentum_density(psi)
                W = wigner(psi)
                H = husimi(psi, window=o.husimi_window)
                io.dump_field(W, d / f"wigner_w{m}_t{i}.sclb")
                io.dump_field(H, d / f"husimi_w{m}_t{i}.sclb")
                targets = {
                    "wigner": (rho, mrho),
                    "husimi": (gaussian_smooth(rho, g.axes, eps).real, gaussian_smooth(mrho, mg.axes, eps).real),
                }
                for F in (W, H):
                    xt, pt = targets[F.kind]
                    ex = float(np.abs(F.x_marginal() - xt).max()) if F.values.shape[:n] == g.shape else float("nan")
                    ep = float(np.abs(F.p_marginal() - pt).max()) if F.values.shape[n:] == g.shape else float("nan")
                    pr = pair(F, phi, check=False) if phi is not None else None
                    rows.append([eps, m, float(t), F.kind, F.total(), ex, ep, float(F.values.min()),
                                 pr.value if pr else float("nan"), pr.bound if pr else float("nan")])
    io.write_csv(out / "marginals.csv", ["eps", "member", "t", "kind", "total", "x_marginal_error",
                                         "p_marginal_error", "min", "pairing", "bound"], rows)
    return {"grids": {str(e): _grid_summary(g) for e, g in grids.items()}}


def cmd_classical(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    pot, fam = make_potential(cfg), make_family(cfg)
    o = cfg.classical
    fc = FlowConfig(h=o.h, r_guard=o.r_guard, energy_cutoff=o.energy_cutoff, beta=o.beta)
    mu = expectation_measure([limit_measure(fam, w) for w in fam.labels()])
    path = push_forward(mu, pot, cfg.T, fc, samples=cfg.samples)
    io.write_measure_path(out / "ensembles", path)
    rows = [["absorbed_mass", path.ensembles[-1].absorbed_mass()], ["substeps", float(path.info["substeps"])]]
    if o.test_function is not None:
        phi = make_test_function(o.test_function)
        rows.append(["liouville_residual", liouville_residual(path, pot, phi, TimeBump(0.0, cfg.T))])
    if pot.has_singular:
        rep = dist_integrability(path, pot, o.R, o.beta, (0.0,) + tuple(o.deltas))
        rows += [[f"integrability_delta_{d:g}", v] for d, v in zip(rep.deltas, rep.values)]
    io.write_csv(out / "classical.csv", ["quantity", "value"], rows)
    return {"particles": mu.size}


def cmd_errorterms(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    if cfg.errorterms is None:
        raise ConfigError("errorterms needs an 'errorterms' block with a test_function")
    pot, fam = make_potential(cfg), make_family(cfg)
    grids = grids_for(cfg, fam, pot)
    o = cfg.errorterms
    phi = make_test_function(o.test_function)
    labels = fam.labels()
    n = fam.n
    for m in range(min(o.members, fam.n_w)):
        rows = []
        for eps, g in grids.items():
            psi = wave_packet(g, eps, fam.alpha, labels[m, :n], labels[m, n:], fam.envelope)
            if pot.has_singular:
                rows.append(coulomb_discrepancy(psi, pot, phi, tube=o.tube))
            else:
                rows.append(pair_I_eps(pot, psi, phi, smooth_test=o.smooth_test, tube=o.tube))
        write_error_csv(out / f"errorterms_w{m}.csv", rows)
    return {"grids": {str(e): _grid_summary(g) for e, g in grids.items()}}


def cmd_converge(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    pot, fam = make_potential(cfg), make_family(cfg)
    rep = run_convergence_experiment(fam, pot, cfg.T, cfg.eps_ladder, settings_for(cfg, threads))
    io.write_convergence_csv(out / "convergence.csv", rep)
    per_w, d_t, tight, tv, conc, integ = [], [], [], [], [], []
    times = np.linspace(0.0, cfg.T, cfg.samples)
    for r in rep.results:
        for o in r.per_w:
            per_w.append([r.eps, o["index"], *o["w"], o.get("D_w", float("nan")), int(o["excluded"]), o["reason"],
                          o.get("mass_drift", float("nan")), o.get("energy_drift", float("nan")),
                          o.get("absorbed", float("nan"))])
            for t, v in zip(times, o.get("d_t", [])):
                d_t.append([r.eps, o["index"], float(t), v])
        if r.tightness is not None:
            tight += [[r.eps, R, v] for R, v in zip(r.tightness.radii, r.tightness.tail_sup)]
            tv += [[r.eps, k, v] for k, v in enumerate(r.tightness.time_variation)]
        if r.no_concentration is not None:
            nc = r.no_concentration
            conc += [[r.eps, t, s, q] for t, s, q in zip(nc.times, nc.husimi_sup, nc.ratio_to_initial)]
        if r.integrability:
            integ.append([r.eps, r.integrability["quantum_raw"], r.integrability["classical_raw"],
                          *r.integrability["quantum_ladder"].values()])
    n = fam.n
    wcols = [f"x0_{i}" for i in range(n)] + [f"p0_{i}" for i in range(n)]
    io.write_csv(out / "per_member.csv", ["eps", "index", *wcols, "D_w", "excluded", "reason", "mass_drift",
                                          "energy_drift", "absorbed"], per_w)
    io.write_csv(out / "distance_vs_time.csv", ["eps", "index", "t", "d_P"], d_t)
    io.write_csv(out / "tightness_space.csv", ["eps", "R", "tail_sup"], tight)
    io.write_csv(out / "tightness_time.csv", ["eps", "k", "variation"], tv)
    if conc:
        io.write_csv(out / "no_concentration.csv", ["eps", "t", "husimi_sup", "ratio"], conc)
    if integ:
        deltas = list(rep.results[0].integrability["quantum_ladder"])
        io.write_csv(out / "integrability.csv", ["eps", "quantum_raw", "classical_raw",
                                                 *[f"quantum_delta_{d:g}" for d in deltas]], integ)
    return {"grids": {str(r.eps): r.grid for r in rep.results}, "dictionary": rep.dictionary.header(),
            "D": rep.D.tolist(), "strictly_decreasing": rep.strictly_decreasing()}


COMMANDS = {
    "propagate": cmd_propagate,
    "wigner": cmd_wigner,
    "classical": cmd_classical,
    "errorterms": cmd_errorterms,
    "converge": cmd_converge,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return EXIT_OK if run_selftest() else EXIT_SELFTEST
    try:
        cfg = load_config(args.config)
        if args.seed_override is not None:
            cfg = cfg.with_seed(args.seed_override)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = Path(args.out or cfg.output) / args.command
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NyquistViolation, TailOverflow, OutOfBox) as exc:
        print(f"numerical guard: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GUARD
    manifest = {"command": args.command, "version": _version(), "config": cfg.model_dump(mode="json"),
                "threads": args.threads, **extra}
    io.write_manifest(out / "manifest.json", manifest, datetime.now(timezone.utc).isoformat())
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
