"""``eth-lab`` command-line front end.

Typical session::

    eth-lab diag --spec model.json --out cache/
    eth-lab thermo --cache cache/<hash> --out runs/thermo
    eth-lab eth --cache cache/<hash> --emin -2 --emax 2 --delta 0.1
    eth-lab audit --cache cache/<hash> --grid 10x10 --out runs/audit

Exit status: 0 on success, 2 on precondition/spec errors, 3 on numeric
failures. Files written by a failing command are removed.
"""

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import __version__
from .analysis import (
    InsufficientDataError,
    SamplerConfig,
    bounds_grid,
    eth_scan,
    ethscale_curve,
    lemma1_check,
    omega_builder,
    theorem1_audit,
    therm_scan,
)
from .hilbert import ContractError, DimensionError, random_pure_state, trace_norm
from .models import (
    ModelSpec,
    ModelSpecError,
    ResourceError,
    build_hamiltonian,
    default_spec,
    verify_split,
)
from .reports import (
    BOUND_COLUMNS,
    bound_rows,
    dumps,
    rows_to_csv,
    to_jsonable,
)
from .shells import EmptyShellError, PreconditionError, make_shell
from .spectral import (
    CacheError,
    NumericError,
    diagonalize,
    diagonalize_bath,
    equilibrium_state,
    load_meta,
    load_spectral,
    save_spectral,
    time_average_reduced,
)
from .thermo import (PROFILE_COLUMNS, DegenerateProfileError, RangeError, kernel_sensitivity,
                     thermo_profile)

log = logging.getLogger("ethlab")

EXIT_OK, EXIT_PRECONDITION, EXIT_NUMERIC = 0, 2, 3
PRECONDITION_ERRORS = (ModelSpecError, ResourceError, DimensionError, ContractError, CacheError,
                       EmptyShellError, PreconditionError, RangeError, InsufficientDataError,
                       DegenerateProfileError, ValueError, FileNotFoundError)
NUMERIC_ERRORS = (NumericError, np.linalg.LinAlgError, FloatingPointError)


class UsageError(ValueError):
    pass


# --- run bookkeeping ---------------------------------------------------------

def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Tracks outputs, stage timings and input hashes for one command."""

    def __init__(self, command, out_dir, config, formats):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.formats = formats
        self.outputs = []
        self.created_dirs = []
        self.timings = {}
        self.inputs = {}

    def ensure_out(self):
        if not os.path.isdir(self.out_dir):
            missing, d = [], os.path.abspath(self.out_dir)
            while not os.path.exists(d):
                missing.append(d)
                d = os.path.dirname(d)
            os.makedirs(self.out_dir)
            self.created_dirs.extend(reversed(missing))
        return self.out_dir

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - t0, 6)

    def register(self, name):
        path = os.path.join(self.ensure_out(), name)
        self.outputs.append(path)
        return path

    def write_text(self, name, text):
        path = self.register(name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        return path

    def json(self, name, obj):
        if "json" in self.formats:
            return self.write_text(name, dumps(obj))

    def csv(self, name, rows, columns):
        if "csv" in self.formats:
            return self.write_text(name, rows_to_csv(rows, columns))

    def svg(self, name, make_fig, payload):
        if "svg" not in self.formats:
            return None
        from .plotting import save_svg

        return save_svg(make_fig(json.loads(dumps(payload))), self.register(name))

    def manifest(self):
        outputs = [{"path": os.path.relpath(p, self.out_dir), "sha256": _sha256_file(p)}
                   for p in self.outputs]
        import matplotlib
        import scipy

        data = {
            "command": self.command,
            "config": self.config,
            "versions": {"ethlab": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "matplotlib": matplotlib.__version__,
                         "python": platform.python_version()},
            "input_hashes": self.inputs,
            "outputs": outputs,
            "timings": self.timings,
        }
        path = os.path.join(self.ensure_out(), "run_manifest.json")
        with open(path, "w") as fh:
            fh.write(dumps(data))
        return path

    def cleanup(self):
        for p in self.outputs:
            if os.path.exists(p):
                os.remove(p)
        for d in reversed(self.created_dirs):
            if os.path.isdir(d) and not os.listdir(d):
                os.rmdir(d)


# --- cache access ------------------------------------------------------------

class Loaded:
    def __init__(self, spec, h, sd, bath, meta):
        self.spec, self.h, self.sd, self.bath, self.meta = spec, h, sd, bath, meta
        self._profile = None

    def profile(self, args):
        if self._profile is None:
            self._profile = thermo_profile(self.bath.energies,
                                           kernel_width=getattr(args, "kernel_width", None),
                                           grid_points=getattr(args, "grid_points", 512))
        return self._profile


def load_cache(directory, run, spec_path=None):
    """Open a content-addressed cache, refusing it when hashes disagree."""
    meta = load_meta(directory)
    model_path = os.path.join(directory, "model.json")
    if not os.path.exists(model_path):
        raise CacheError(f"cache {directory} has no model.json")
    spec = ModelSpec.load(model_path)
    if spec.content_hash() != meta["model_hash"]:
        raise CacheError(f"stale cache: model.json hashes to {spec.content_hash()}, "
                         f"meta says {meta['model_hash']}")
    if spec_path is not None:
        want = ModelSpec.load(spec_path).content_hash()
        if want != meta["model_hash"]:
            raise CacheError(f"stale cache: {spec_path} hashes to {want}, "
                             f"cache holds {meta['model_hash']}")
    sd, bath, meta = load_spectral(directory, expected_hash=spec.content_hash())
    if bath is None:
        raise CacheError(f"cache {directory} lacks the bath spectrum")
    run.inputs["model_hash"] = meta["model_hash"]
    return Loaded(spec, build_hamiltonian(spec), sd, bath, meta)


def _spec_from_args(args):
    if args.spec:
        return ModelSpec.load(args.spec)
    spec = default_spec(args.sys_sites, args.bath_sites)
    spec.model_family = args.family
    return spec


def _budget(args):
    return SamplerConfig(n_random=args.n_random, n_entangled=args.n_entangled,
                         n_refine=args.n_refine, max_iter=args.max_iter, seed=args.seed)


def _parse_grid(text):
    try:
        a, b = (int(x) for x in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"grid must look like 10x10, got {text!r}") from exc
    if a < 1 or b < 1:
        raise UsageError("grid sizes must be >= 1")
    return a, b


def _default_region(profile, fraction=0.5):
    vr = profile.valid_range
    if vr is None:
        raise RangeError("profile has no valid range")
    mid, half = (vr[0] + vr[1]) / 2, (vr[1] - vr[0]) * fraction / 2
    return mid - half, mid + half


# --- commands ----------------------------------------------------------------

def cmd_build(args, run):
    spec = _spec_from_args(args)
    with run.stage("build"):
        h = build_hamiltonian(spec)
        checks = {k: to_jsonable(v) for k, v in verify_split(h).items()}
    run.inputs["model_hash"] = spec.content_hash()
    run.write_text("model.json", json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n")
    run.json("split_report.json", {"kind": "split", "model_hash": spec.content_hash(),
                                   "d_S": h.shape.d_S, "d_B": h.shape.d_B,
                                   "norm_HC": h.norm_HC, "checks": checks})
    ok = all(c["holds"] for c in checks.values())
    print(f"model {spec.content_hash()}  d_S={h.shape.d_S} d_B={h.shape.d_B}  "
          f"||H_C||={h.norm_HC:.6f}  split checks {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_diag(args, run):
    spec = _spec_from_args(args)
    key = spec.content_hash()
    target = os.path.join(args.out, key)
    run.inputs["model_hash"] = key
    run.out_dir = target
    if os.path.exists(os.path.join(target, "meta.json")) and not args.force:
        load_spectral(target, expected_hash=key)
        print(f"cache hit {target}")
        return EXIT_OK
    with run.stage("build"):
        h = build_hamiltonian(spec)
    with run.stage("diagonalize"):
        sd = diagonalize(h)
        bath = diagonalize_bath(h)
    run.ensure_out()
    with run.stage("write"):
        names = ["energies.f64", "eigvecs.c128", "tau.c128", "bath_energies.f64",
                 "bath_eigvecs.c128", "meta.json"]
        run.outputs.extend(os.path.join(target, n) for n in names)
        save_spectral(sd, target, bath, extra_meta={"norm_HC": h.norm_HC})
        run.write_text("model.json", json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n")
    degenerate = len(sd.degenerate_classes)
    print(f"{target}  d={sd.dim}  E in [{sd.energies[0]:.6f}, {sd.energies[-1]:.6f}]  "
          f"degenerate classes: {degenerate}")
    return EXIT_OK


def cmd_eth(args, run):
    ld = load_cache(args.cache, run, args.spec)
    region = (args.emin, args.emax)
    with run.stage("eth_scan"):
        rep = eth_scan(ld.sd, region, args.delta, bins=args.bins)
    curve = []
    if args.curve:
        deltas = args.delta * np.linspace(0.25, 2.0, args.curve)
        with run.stage("curve"):
            curve = ethscale_curve(ld.sd, region, deltas)
    payload = {"kind": "eth", "model_hash": ld.meta["model_hash"], "report": rep,
               "curve": curve, "delta": args.delta}
    run.json("eth_report.json", {**payload, "eps_measured": rep.eps_measured})
    hist = rep.histogram
    rows = [{"lo": float(a), "hi": float(b), "count": int(c)}
            for a, b, c in zip(hist["edges"][:-1], hist["edges"][1:], hist["counts"])]
    run.csv("eth_histogram.csv", rows, ["lo", "hi", "count"])
    if curve:
        from .plotting import eth_curve

        run.svg("eth_curve.svg", eth_curve, payload)
    print(f"eps_measured={rep.eps_measured:.6g}  worst pair {rep.worst_pair}  "
          f"pairs {rep.pair_count}  states {rep.state_count}")
    return EXIT_OK


def cmd_thermo(args, run):
    ld = load_cache(args.cache, run, args.spec)
    with run.stage("profile"):
        prof = ld.profile(args)
    rows = prof.rows()
    run.csv("thermo_profile.csv", rows, PROFILE_COLUMNS)
    payload = {"kind": "thermo", "model_hash": ld.meta["model_hash"],
               "kernel_width": prof.kernel_width, "valid_range": prof.valid_range,
               "profile": rows}
    run.json("thermo_profile.json", payload)
    from .plotting import thermo_figure

    run.svg("thermo_profile.svg", thermo_figure, payload)
    print(f"kernel width {prof.kernel_width:.6g}  valid range {prof.valid_range}")
    return EXIT_OK


def cmd_therm(args, run):
    ld = load_cache(args.cache, run, args.spec)
    prof = ld.profile(args)
    shell = make_shell(ld.bath.energies, args.E, args.delta_b, "bath").require_nonempty()
    omega = omega_builder(ld.sd, ld.h, prof, args.E, args.omega, delta=args.delta_b)
    with run.stage("therm_scan"):
        rep = therm_scan(ld.sd, ld.bath, shell, omega, _budget(args))
    l1 = lemma1_check(rep, ld.sd.shape.d_S)
    run.json("therm_report.json", {"kind": "therm", "model_hash": ld.meta["model_hash"],
                                   "summary": rep.summary(), "omega": omega, "lemma1": l1,
                                   "budget": _budget(args)})
    print(f"eps_product>={rep.eps_product:.6g}  eps_entangled>={rep.eps_entangled:.6g}  "
          f"shell {shell.count} levels  lemma1 {l1.status}")
    return EXIT_OK


def _grid_axes(args, prof, n_E, n_dB):
    vr = prof.valid_range
    if vr is None:
        raise RangeError("profile has no valid range")
    emin = vr[0] if args.emin is None else args.emin
    emax = vr[1] if args.emax is None else args.emax
    if emin < vr[0] or emax > vr[1] or emin >= emax:
        raise RangeError(f"energy window [{emin}, {emax}] not inside valid range {vr}")
    # keep every cell strictly inside the window
    E_values = emin + (emax - emin) * (np.arange(n_E) + 0.5) / n_E
    dB_values = np.linspace(args.db_min, args.db_max, n_dB)
    return E_values, dB_values


def cmd_bounds(args, run):
    ld = load_cache(args.cache, run, args.spec)
    prof = ld.profile(args)
    n_E, n_dB = _parse_grid(args.grid)
    E_values, dB_values = _grid_axes(args, prof, n_E, n_dB)
    with run.stage("bounds_grid"):
        cells = bounds_grid(ld.sd, ld.h, ld.bath, prof, E_values, dB_values, _budget(args),
                            args.omega, escalate=args.escalate)
    records, cell_rows = [], []
    for c in cells:
        records += c.bounds
        cell_rows.append({"E": c.E, "delta_B": c.delta_B, "shell_count": c.therm.shell.count,
                          "eps_product": c.therm.eps_product,
                          "eps_entangled": c.therm.eps_entangled,
                          "lemma1_status": c.lemma1.status, "budget_factor": c.budget_factor,
                          "window_count": len(c.bounds) // 4,
                          "violations": len(c.violations()),
                          "inconclusive": len(c.inconclusive())})
    violated = sum(r["violations"] for r in cell_rows)
    inconclusive = sum(r["inconclusive"] for r in cell_rows)
    payload = {"kind": "bounds", "model_hash": ld.meta["model_hash"], "grid": [n_E, n_dB],
               "omega_variant": args.omega, "cells": cell_rows, "records": records,
               "summary": {"conclusive_violations": violated, "inconclusive": inconclusive,
                           "records": len(records)}}
    run.json("bounds_report.json", payload)
    run.csv("bounds.csv", bound_rows(records), BOUND_COLUMNS + ["n", "E_n", "E", "delta_B",
                                                                 "leakage", "eps_product"])
    run.csv("bounds_cells.csv", cell_rows, list(cell_rows[0]) if cell_rows else ["E"])
    from .plotting import eigenstate_scatter

    run.svg("eigenstate_bounds.svg", eigenstate_scatter, payload)
    print(f"{len(cells)} cells  {len(records)} reports  conclusive violations {violated}  "
          f"inconclusive {inconclusive}")
    return EXIT_OK


def cmd_audit(args, run):
    ld = load_cache(args.cache, run, args.spec)
    prof = ld.profile(args)
    n_E, n_dB = _parse_grid(args.grid)
    region = (args.emin, args.emax) if args.emin is not None else _default_region(prof)
    with run.stage("theorem1_audit"):
        res = theorem1_audit(ld.sd, ld.h, ld.bath, prof, region, n_E, n_dB, _budget(args),
                             args.omega)
    consts, verdict = res["constants"], res["verdict"]
    deltas = consts.delta * np.linspace(0.25, 2.0, 8)
    with run.stage("curve"):
        curve = ethscale_curve(ld.sd, region, deltas)
    payload = {"kind": "audit", "model_hash": ld.meta["model_hash"], "region": region,
               "constants": consts, "eth": res["eth"], "verdict": verdict,
               "cells": res["cells"], "curve": curve, "eth_pred": consts.eps_eth,
               "delta": consts.delta}
    with run.stage("kernel_sensitivity"):
        payload["kernel_sensitivity"] = kernel_sensitivity(
            ld.bath.energies, region, ld.sd.shape.d_S, ld.h.norm_HC, prof.kernel_width,
            grid_points=args.grid_points)
    run.json("audit.json", payload)
    columns = ["E", "delta_B", "empty", "shell_count", "eps_product", "eps_entangled",
               "eps_allowed", "ideal", "window_count", "max_pair_distance",
               "max_distance_to_omega", "triangle_holds"]
    run.csv("audit_cells.csv", res["cells"], columns)
    from .plotting import eth_curve

    run.svg("eth_curve.svg", eth_curve, payload)
    print(json.dumps(to_jsonable(verdict), sort_keys=True))
    return EXIT_OK


def cmd_evolve(args, run):
    ld = load_cache(args.cache, run, args.spec)
    sd = ld.sd
    rng = np.random.default_rng(args.seed)
    rows = []
    with run.stage("evolve"):
        for k in range(args.states):
            psi = np.kron(random_pure_state(sd.shape.d_S, rng),
                          random_pure_state(sd.shape.d_B, rng))
            eq = equilibrium_state(psi, sd)
            for T in args.T:
                avg = time_average_reduced(psi, sd, T, args.points)
                rows.append({"state": k, "T": float(T), "points": args.points,
                             "distance": trace_norm(avg - eq, check=False)})
    run.json("evolve_report.json", {"kind": "evolve", "model_hash": ld.meta["model_hash"],
                                    "seed": args.seed, "rows": rows})
    run.csv("evolve.csv", rows, ["state", "T", "points", "distance"])
    for T in args.T:
        d = [r["distance"] for r in rows if r["T"] == T]
        print(f"T={T:g}: max distance to equilibrium {max(d):.3e}")
    return EXIT_OK


def cmd_plot(args, run):
    from . import plotting

    makers = {"bounds": [("eigenstate_bounds.svg", plotting.eigenstate_scatter)],
              "eth": [("eth_curve.svg", plotting.eth_curve)],
              "audit": [("eth_curve.svg", plotting.eth_curve)],
              "thermo": [("thermo_profile.svg", plotting.thermo_figure)]}
    for path in args.reports:
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise plotting.MalformedReport(f"{path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("kind") not in makers:
            raise plotting.MalformedReport(f"{path}: unknown report kind")
        run.inputs[os.path.basename(path)] = _sha256_file(path)
        stem = os.path.splitext(os.path.basename(path))[0]
        for name, fn in makers[payload["kind"]]:
            out = run.register(f"{stem}.{name}")
            plotting.save_svg(fn(payload), out)
            print(out)
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------

def _add_common(p, out_default="."):
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--formats", default="json,csv,svg",
                   help="comma-separated subset of json,csv,svg")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model(p):
    p.add_argument("--spec", help="ModelSpec JSON file")
    p.add_argument("--sys-sites", type=int, default=1)
    p.add_argument("--bath-sites", type=int, default=9)
    p.add_argument("--family", default="transverse_ising",
                   choices=["transverse_ising", "xxz"])


def _add_cache(p):
    p.add_argument("--cache", required=True, help="spectral cache directory cache/<hash>")
    p.add_argument("--spec", help="refuse the cache unless it was built from this ModelSpec")
    p.add_argument("--kernel-width", type=float, default=None)
    p.add_argument("--grid-points", type=int, default=512)


def _add_budget(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-random", type=int, default=200)
    p.add_argument("--n-entangled", type=int, default=200)
    p.add_argument("--n-refine", type=int, default=4)
    p.add_argument("--max-iter", type=int, default=60)
    p.add_argument("--omega", default="microcanonical_reduced",
                   choices=["microcanonical_reduced", "canonical_reduced"])


def build_parser():
    ap = argparse.ArgumentParser(prog="eth-lab", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build and check a split Hamiltonian")
    _add_model(p)
    _add_common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("diag", help="diagonalize into a content-addressed cache")
    _add_model(p)
    _add_common(p, out_default="cache")
    p.add_argument("--force", action="store_true", help="rebuild an existing cache entry")
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("eth", help="exhaustive ETH pair scan")
    _add_cache(p)
    _add_common(p)
    p.add_argument("--emin", type=float, required=True)
    p.add_argument("--emax", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--curve", type=int, default=8,
                   help="points on the eps(delta) curve, 0 to skip")
    p.set_defaults(func=cmd_eth)

    p = sub.add_parser("thermo", help="bath thermodynamic profile")
    _add_cache(p)
    _add_common(p)
    p.set_defaults(func=cmd_thermo)

    p = sub.add_parser("therm", help="thermalization precision of one bath shell")
    _add_cache(p)
    _add_common(p)
    _add_budget(p)
    p.add_argument("--E", type=float, required=True)
    p.add_argument("--delta-b", type=float, required=True)
    p.set_defaults(func=cmd_therm)

    p = sub.add_parser("bounds", help="eigenstate bounds over an (E, delta_B) grid")
    _add_cache(p)
    _add_common(p)
    _add_budget(p)
    p.add_argument("--grid", default="10x10")
    p.add_argument("--emin", type=float, default=None)
    p.add_argument("--emax", type=float, default=None)
    p.add_argument("--db-min", type=float, default=0.5)
    p.add_argument("--db-max", type=float, default=4.0)
    p.add_argument("--escalate", type=int, default=10,
                   help="budget factor for rerunning inconclusive cells, 0 to disable")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("audit", help="end-to-end thermalization-implies-ETH audit")
    _add_cache(p)
    _add_common(p)
    _add_budget(p)
    p.add_argument("--grid", default="10x10", help="E points x delta_B points")
    p.add_argument("--emin", type=float, default=None)
    p.add_argument("--emax", type=float, default=None)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("evolve", help="finite-time averages against the equilibrium state")
    _add_cache(p)
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--states", type=int, default=10)
    p.add_argument("--T", type=float, nargs="+", default=[1e3, 1e5])
    p.add_argument("--points", type=int, default=2000)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("plot", help="render SVG figures from report JSON files")
    p.add_argument("reports", nargs="+")
    _add_common(p)
    p.set_defaults(func=cmd_plot)
    return ap


def _config_echo(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    formats = {f.strip() for f in args.formats.split(",") if f.strip()}
    if not formats <= {"json", "csv", "svg"}:
        ap.error(f"unknown formats {sorted(formats - {'json', 'csv', 'svg'})}")
    if args.command in ("audit",) and (args.emin is None) != (args.emax is None):
        ap.error("--emin and --emax go together")
    run = Run(args.command, args.out, _config_echo(args), formats)
    try:
        with np.errstate(invalid="ignore", divide="ignore"):
            status = args.func(args, run)
        run.manifest()
        return status
    except NUMERIC_ERRORS as exc:
        run.cleanup()
        print(f"eth-lab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PRECONDITION_ERRORS as exc:
        run.cleanup()
        print(f"eth-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except BaseException:
        run.cleanup()
        raise


if __name__ == "__main__":
    sys.exit(main())
