"""Command line entry point: ``thinrelax <envelope|laminate|project|gamma|counterexample>``.

Every subcommand takes ``--config`` (JSON; omitted keys use defaults) and
``--out``. ``gamma`` and ``counterexample`` exit with status 1 when any
report row is flagged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .convexify import CaratheodoryDecomposition, build_envelope, caratheodory_decompose, dump_decomposition, pairwise_split
from .density import density_from_config
from .experiments import (THREE_WELLS, ConvergenceReport, ExperimentConfig, _json_default, grid_for,
                          run_counterexample, run_gamma_experiment)
from .grid import GridGeometry, VectorField, div_eps, load_field, save_field
from .laminate import LaminatePlan, corrector, ub2_assemble, volume_fractions, zeta_perp
from .projection import NegSobolevEstimator, project_asymptotic, spectral_div_eps

log = logging.getLogger("thinrelax")


def _load_config(path: str | None) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, default=_json_default))
    return path


def cmd_envelope(cfg: dict, out: Path, args) -> int:
    """Envelope at ``target``, its Caratheodory decomposition and pairwise split."""
    f = density_from_config(cfg.get("density", {"type": "multiwell", "wells": THREE_WELLS}))
    target = np.asarray(cfg.get("target", [0.0] * (f.dims or 2)), dtype=float)
    env = build_envelope(f, target, spacing=cfg.get("spacing"), resolution=cfg.get("resolution"),
                         radius=cfg.get("radius"))
    env.to_csv(out / "envelope.csv")
    dec = caratheodory_decompose(env, target)
    split = None
    if dec.m > 0:
        shifted = CaratheodoryDecomposition(np.zeros_like(target), dec.points - target, dec.weights,
                                            dec.f_values, dec.envelope_value)
        split = pairwise_split(shifted)
    dump_decomposition(out / "decomposition.json", dec, split)
    summary = {"target": target, "envelope_value": env.value_at(target), "f_value": float(f(target)),
               "K": env.K, "box_radius": env.box_radius, "nodes": len(env.nodes), "facets": len(env.simplices),
               "m": dec.m, "points": dec.points, "weights": dec.weights, "problems": dec.check(env.K)}
    _write_json(out / "summary.json", summary)
    if env.dims == 2 and not args.no_figures:
        from .plotting import envelope_figure
        envelope_figure(env, out / "envelope.png")
    print(f"f**({target.tolist()}) = {summary['envelope_value']:.6g}, m = {dec.m}, "
          f"points = {dec.points.tolist()}, weights = {dec.weights.tolist()}")
    return 0 if not summary["problems"] else 1


def cmd_laminate(cfg: dict, out: Path, args) -> int:
    """Multi-point laminate for a decomposition of 0 on one slab range, plus the corrected y-part."""
    eps = float(cfg.get("eps", 1.0 / 16))
    k = int(cfg.get("k", 16))
    J = tuple(cfg.get("J", [0.0, 1.0]))
    if "plan" in cfg:
        plan = LaminatePlan.from_dict(cfg["plan"])
    else:
        f = density_from_config(cfg.get("density", {"type": "multiwell", "wells": THREE_WELLS}))
        target = np.asarray(cfg.get("target", [0.0] * (f.dims or 2)), dtype=float)
        env = build_envelope(f, target, spacing=cfg.get("spacing", 1.0 / 16), radius=cfg.get("radius"))
        dec = caratheodory_decompose(env, target)
        if dec.m == 0:
            print("decomposition is trivial (f = f** at the target); nothing to laminate")
            return 0
        shifted = CaratheodoryDecomposition(np.zeros_like(target), dec.points - target, dec.weights,
                                            dec.f_values, dec.envelope_value)
        plan = LaminatePlan.from_split(pairwise_split(shifted), J, eps, k, cfg.get("cutoff_width"))
    N = plan.points.shape[1]
    omega = [tuple(b) for b in cfg.get("omega", [[0.0, 1.0]] * (N - 1))]
    dirs = [zeta_perp(plan.points[i], plan.points[j]) for (i, j), _ in plan.intervals if i != j]
    if "resolution" in cfg:
        geom = GridGeometry(tuple(omega), tuple(cfg["resolution"]))
    else:
        geom = grid_for(omega, plan.eps, plan.k, dirs, int(cfg.get("cells_per_slab", 4)),
                        int(cfg.get("cells_per_period", 2)))
    y, z = ub2_assemble(plan, geom)
    yc = corrector(y, plan.eps)
    d = div_eps(yc, plan.eps)
    fr = volume_fractions(y + z, plan.points)
    plan.save(out / "plan.json")
    summary = {"resolution": geom.resolution, "eps": plan.eps, "k": plan.k,
               "corrected_div_max": float(np.abs(d).max()), "fractions": fr.as_dict(),
               "weights": plan.weights}
    _write_json(out / "summary.json", summary)
    if args.dump_fields:
        save_field(out / "y.npz", y)
        save_field(out / "y_corrected.npz", yc)
        save_field(out / "z.npz", z)
    if N == 2 and not args.no_figures:
        from .plotting import field_figure
        field_figure(y, out / "laminate_y.png")
    print(f"grid {geom.resolution}: max |div_eps(corrected y)| = {summary['corrected_div_max']:.3e}; "
          f"fractions {np.round(fr.fractions, 4).tolist()} vs weights {np.round(plan.weights, 4).tolist()}")
    return 0


def cmd_project(cfg: dict, out: Path, args) -> int:
    """Cutoff-and-project a stored field (``field``) or a random one (``resolution``)."""
    if "field" in cfg:
        u = load_field(cfg["field"])
    else:
        res = tuple(cfg.get("resolution", [64, 64]))
        geom = GridGeometry(tuple(tuple(b) for b in cfg.get("omega", [[0.0, 1.0]] * (len(res) - 1))), res)
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        u = VectorField(geom, rng.standard_normal(geom.resolution + (geom.dims,)), float(cfg.get("eps", 1.0)))
    eps = float(cfg.get("eps", u.epsilon))
    p = float(cfg.get("p", 2.0))
    res = project_asymptotic(u, eps, cfg.get("cutoff_margin"), p=p)
    v = res.field
    est = NegSobolevEstimator(u.geom, p=p, M=int(cfg.get("M", 16)))
    sd = spectral_div_eps(v, eps)
    summary = {"resolution": u.geom.resolution, "eps": eps, "p": p, "projection_error": res.error,
               "spectral_div_max": float(np.abs(sd).max()),
               "div_residual_before": est.estimate(div_eps(u, eps)),
               "div_residual_after": est.estimate(div_eps(v, eps))}
    _write_json(out / "summary.json", summary)
    if args.dump_fields:
        save_field(out / "projected.npz", v)
    print(f"||u - Pu||_{p:g} = {res.error:.4g}; max |spectral div_eps(Pu)| = {summary['spectral_div_max']:.3e}")
    return 0


def _finish_report(rep: ConvergenceReport, out: Path, args) -> int:
    paths = rep.write(out, figures=not args.no_figures)
    for r in rep.rows:
        flags = ",".join(r["flags"]) or "ok"
        print(f"eps={r['eps']:.5g} k={r['k']} F={r['energy']:.6g} gap={r['gap']:.4g} "
              f"div={r['div_residual']:.3g} weak={r['weak_residual']:.3g} [{flags}]")
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return 0 if rep.ok else 1


def cmd_gamma(cfg: dict, out: Path, args) -> int:
    """Recovery-sequence convergence study for a density and target."""
    ec = ExperimentConfig.from_dict(cfg)
    rep = run_gamma_experiment(ec, out / "fields" if args.dump_fields else None, progress=args.verbose)
    return _finish_report(rep, out, args)


def cmd_counterexample(cfg: dict, out: Path, args) -> int:
    """Three-well counterexample: barycentric weights and the vanishing-energy sequence."""
    ec = ExperimentConfig.from_dict(cfg)
    rep = run_counterexample(ec, out / "fields" if args.dump_fields else None, progress=args.verbose)
    print(f"barycentric weights: lower {rep.meta['barycentric']['lower']}, upper {rep.meta['barycentric']['upper']}")
    return _finish_report(rep, out, args)


COMMANDS = {"envelope": cmd_envelope, "laminate": cmd_laminate, "project": cmd_project, "gamma": cmd_gamma,
            "counterexample": cmd_counterexample}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thinrelax", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (default: config 'out' or ./out)")
        p.add_argument("--dump-fields", action="store_true", help="write constructed fields")
        p.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")
        p.add_argument("-v", "--verbose", action="store_true", help="print per-row progress")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = _load_config(args.config)
    out = Path(args.out or cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[args.command](cfg, out, args)


if __name__ == "__main__":
    sys.exit(main())
