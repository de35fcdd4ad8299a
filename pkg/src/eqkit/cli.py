"""Command-line front end: run, convert, inspect, plotdata, clean.

The CLI is a thin shell over the library; every behavior is reachable
through pipeline/formats calls.  Errors exit with a stable per-class
code (EXIT_CODES) and the error class name on stderr.
"""

from __future__ import annotations

import argparse
import glob
import os
import re
import sys

import numpy as np

from . import errors as err
from . import fluxavg, pipeline
from .formats import (
    read_chease,
    read_eqdsk,
    read_expeq,
    read_exptnz,
    read_iterdb,
    read_profiles,
    write_chease_out,
    write_eqdsk,
    write_expeq,
    write_exptnz,
    write_iterdb,
    write_profiles,
)
from .formats.expeq import CURRENT_KEYS, ExpeqFile, PRESSURE_KEYS
from .pipeline import ImportedProfiles, NamelistSpec, RunConfig, SourceSelection

SHOT_ROOT_ENV = "EQKIT_SHOT_ROOT"

#: stable error-class -> exit-code table (documented in the README)
EXIT_CODES = [
    (err.TargetNotReached, 9),
    (err.NoIterationFiles, 10),
    (err.RaggedLists, 11),
    (err.CollisionWithoutForce, 12),
    (err.WorkdirLocked, 12),
    (err.SolverFailure, 7),
    (err.NoConvergence, 7),
    (err.DegenerateBoundary, 7),
    (err.OpenFieldLine, 6),
    (err.MaxStepsExceeded, 6),
    (err.OpenContour, 5),
    (err.LevelOutOfRange, 5),
    (err.DegenerateJacobian, 5),
    (err.ZeroT, 5),
    (err.UnknownForm, 5),
    (err.MissingSource, 5),
    (err.NonMonotoneInput, 4),
    (err.SignChangingQ, 4),
    (err.MissingColumn, 4),
    (err.ExtrapolationRequired, 4),
    (err.GridFamilyUnavailable, 4),
    (err.FormatError, 3),
    (err.MissingSourceFile, 8),
    (err.IllegalSourceForProfile, 8),
    (err.OrphanImport, 8),
    (err.EmptyShotDirectory, 8),
    (err.ZeroComputedCurrent, 8),
    (err.EqKitError, 13),
]


def exit_code_for(exc: Exception) -> int:
    for klass, code in EXIT_CODES:
        if isinstance(exc, klass):
            return code
    return 1


def _parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _parse_listish(text: str):
    parts = [p for p in text.split(",") if p != ""]
    values = [_parse_value(p) for p in parts]
    return values[0] if len(values) == 1 else values


def _yesno(text: str) -> bool:
    low = str(text).lower()
    if low in ("yes", "y", "true", "1"):
        return True
    if low in ("no", "n", "false", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected yes/no, got {text!r}")


def load_import_file(path: str) -> ImportedProfiles:
    """Column-labeled text: first non-comment line names the columns."""
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    header_idx = 0
    while lines[header_idx].lstrip().startswith("#"):
        header_idx += 1
    names = lines[header_idx].replace("#", "").split()
    rows = [[float(v) for v in ln.split()] for ln in lines[header_idx + 1:]]
    data = np.array(rows)
    if data.ndim != 2 or data.shape[1] != len(names):
        raise err.HeaderMismatch(
            f"{path}: {len(names)} column names but rows of width "
            f"{data.shape[-1]}")
    return ImportedProfiles({name: data[:, k] for k, name in enumerate(names)})


def _resolve_shot_path(shot: str) -> str:
    if os.path.isdir(shot):
        return shot
    root = os.environ.get(SHOT_ROOT_ENV)
    if root and os.path.isdir(os.path.join(root, shot)):
        return os.path.join(root, shot)
    return shot


def _load_config_defaults(path: str) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


# --- run -------------------------------------------------------------------

def cmd_run(args) -> int:
    spec_values = {}
    for item in args.namelist or []:
        if "=" not in item:
            raise err.RaggedLists(f"--namelist expects KEY=V[,V...], got {item!r}")
        key, value = item.split("=", 1)
        spec_values[key.strip()] = _parse_listish(value)
    spec = NamelistSpec(spec_values)

    def srclist(text):
        if text is None:
            return None
        vals = _parse_listish(text)
        return vals if isinstance(vals, list) else vals

    sel = SourceSelection(
        eprofiles_src=srclist(args.src_eprofiles),
        iprofiles_src=srclist(args.src_iprofiles),
        pressure_src=srclist(args.src_pressure),
        current_src=srclist(args.src_current),
        rhomesh_src=srclist(args.src_rhomesh),
        boundary_type=args.boundary, psin_cut=args.psin_cut,
        iterTotal=args.iters)
    imported = load_import_file(args.import_file) if args.import_file \
        else ImportedProfiles()
    cfg = RunConfig(
        runmode=args.runmode,
        removeinputs=args.remove_inputs, removeoutputs=args.remove_outputs,
        shotpath=_resolve_shot_path(args.shot) if args.shot else None,
        workdir=args.workdir, cheasemode=args.cheasemode,
        current_tol=args.tol, target_current=args.target_current)
    report = pipeline.run_iterations(cfg, sel, spec, imported)
    for rec in report.records:
        print(f"iteration {rec.iteration:03d}: I={rec.i_computed:.6e} A  "
              f"target={rec.i_target:.6e} A  rel_error={rec.rel_error:.3e}")
    if report.records:
        print(f"{'converged' if report.converged else 'finished'} after "
              f"{report.iterations_run} iterations")
    if args.runmode == 2:
        # replot mode: regenerate the comparison tables from the archives
        plot_args = argparse.Namespace(path=args.workdir, skip=0,
                                       outdir=args.workdir)
        return cmd_plotdata(plot_args)
    return 0


# --- convert ----------------------------------------------------------------

READERS = {
    "eqdsk": read_eqdsk, "expeq": read_expeq, "exptnz": read_exptnz,
    "iterdb": read_iterdb, "profiles": read_profiles, "chease": read_chease,
}
KINDS = tuple(READERS)


def cmd_convert(args) -> int:
    in_kind, out_kind = args.from_kind, args.to_kind
    data = READERS[in_kind](args.input)

    if out_kind == in_kind and out_kind in ("exptnz", "profiles", "iterdb"):
        payload = dict(data)
    elif out_kind in ("exptnz", "profiles", "iterdb"):
        payload = _kinetic_payload(data, in_kind, out_kind)
    elif out_kind == "expeq":
        return _convert_to_expeq(data, in_kind, args)
    elif out_kind == "eqdsk":
        if in_kind != "eqdsk":
            raise err.MissingSource(
                f"{in_kind}->eqdsk needs a 2-D flux map; only an EQDSK "
                "source carries one (missing: psi(R,Z), axis, box)")
        write_eqdsk(data, args.output, nrbox=args.nrbox, nzbox=args.nzbox)
        return 0
    elif out_kind == "chease":
        if in_kind != "chease":
            raise err.MissingSource(
                f"{in_kind}->chease is underdetermined; run the pipeline "
                "to produce a bundle (missing: surface-averaged currents)")
        write_chease_out(data, args.output)
        return 0
    else:
        raise err.UnknownForm(f"cannot convert to {out_kind!r}")

    if args.points:
        payload = _resample_kinetic(payload, args.points)
    if out_kind == "exptnz":
        gridname = "rhopsi" if "rhopsi" in payload else "rhotor"
        write_exptnz(payload, args.output, gridname=gridname,
                     n=args.points or None)
    elif out_kind == "profiles":
        write_profiles(payload, args.output)
    else:
        write_iterdb(payload, args.output)
    return 0


def _kinetic_payload(data, in_kind, out_kind) -> dict:
    need = ("Te", "ne", "Ti", "ni")
    if in_kind == "eqdsk" or in_kind == "expeq":
        raise err.MissingSource(
            f"{in_kind}->{out_kind}: source carries no kinetic profiles "
            f"(missing: {', '.join(need)})")
    payload = dict(data)
    missing = [k for k in need if k not in payload]
    if missing:
        raise err.MissingSource(
            f"{in_kind}->{out_kind}: missing fields {', '.join(missing)}")
    if out_kind == "profiles" and "PSIN" not in payload:
        if "rhopsi" in payload:
            payload["PSIN"] = np.asarray(payload["rhopsi"]) ** 2
        else:
            raise err.MissingSource(
                f"{in_kind}->profiles needs a psi-family grid (missing: "
                "PSIN/rhopsi; supply a q-bearing grid source)")
    if out_kind == "iterdb" and "rhotor" not in payload:
        raise err.MissingSource(
            f"{in_kind}->iterdb needs a rhotor grid (missing: rhotor; "
            "supply a q-bearing grid source)")
    if out_kind == "exptnz" and "Zeff" not in payload:
        payload["Zeff"] = np.ones_like(np.asarray(payload["Te"]))
    return payload


def _resample_kinetic(payload: dict, n: int) -> dict:
    from .core import RadialGrid
    from .gridmap import regrid

    gridname = "rhopsi" if "rhopsi" in payload else "rhotor"
    rho = np.asarray(payload[gridname], float)
    src = RadialGrid.from_rho(**{gridname: rho})
    new_rho = np.linspace(0.0, 1.0, n)
    dst = RadialGrid.from_rho(**{gridname: new_rho})
    out = {}
    for key, val in payload.items():
        arr = np.asarray(val, float)
        if arr.ndim == 1 and arr.size == rho.size and key not in (gridname,):
            out[key] = regrid(arr, src, dst, gridname)
        else:
            out[key] = val
    out[gridname] = new_rho
    if "PSIN" in payload:
        out["PSIN"] = new_rho ** 2 if gridname == "rhopsi" else out.get("PSIN")
    return out


def _convert_to_expeq(data, in_kind, args) -> int:
    if in_kind != "eqdsk":
        raise err.MissingSource(
            f"{in_kind}->expeq conversion supports EQDSK sources (missing: "
            "flux map for the boundary and current algebra)")
    nppfun = args.nppfun
    nsttp = args.nsttp
    res = data
    from .core import normalize

    eq = res.profiles
    if nsttp != 1:
        eq = fluxavg.convert_current(eq, res.psimap, 1, nsttp)
    eq = normalize(eq)
    pressure_key = PRESSURE_KEYS[nppfun]
    current_key = CURRENT_KEYS[nsttp]
    pres_col = getattr(eq, pressure_key)
    curr_col = getattr(eq, current_key)
    if pres_col is None or curr_col is None:
        raise err.MissingSource(
            f"eqdsk->expeq: missing fields "
            f"{pressure_key if pres_col is None else current_key}")
    scalars = res.profiles.scalars
    rb = res.file.rbbbs / scalars.R0
    zb = res.file.zbbbs / scalars.R0
    pressure_norm = eq.pressure if eq.pressure is not None else pres_col
    out = ExpeqFile(
        epsilon=float((rb.max() - rb.min()) / (rb.max() + rb.min())),
        zgeom=float(np.mean(zb)), pedge=float(pressure_norm[-1]),
        boundary_r=rb, boundary_z=zb, nppfun=nppfun, nsttp=nsttp,
        nrhotype=0, grid=eq.grid.rhopsi, pressure_col=pres_col,
        current_col=curr_col)
    write_expeq(out, args.output)
    return 0


# --- inspect ----------------------------------------------------------------

def detect_format(path: str):
    """Try each reader; return (kind, parsed) for the first that accepts."""
    order = ("eqdsk", "chease", "exptnz", "profiles", "iterdb", "expeq")
    failures = {}
    for kind in order:
        try:
            return kind, READERS[kind](path)
        except Exception as exc:  # noqa: BLE001 - recorded and reported
            failures[kind] = str(exc)
    raise err.MalformedHeader(
        f"{path} matches no known format: "
        + "; ".join(f"{k}: {v}" for k, v in failures.items()))


def cmd_inspect(args) -> int:
    kind, data = detect_format(args.path)
    print(f"format: {kind}")
    if kind == "eqdsk":
        f = data.file
        print(f"grid: psin (uniform, {f.nw} points); map {f.nw}x{f.nh}")
        print(f"scalars: BCTR={f.bcentr:g} T  RCTR={f.rcentr:g} m  "
              f"CURNT={f.current:g} A  simag={f.simag:g}  sibry={f.sibry:g}")
        print(f"boundary: {f.rbbbs.size} points; limiter: {f.rlim.size}")
    elif kind == "expeq":
        f = data.file
        grid = "rhopsi" if f.nrhotype == 0 else "rhotor"
        print(f"grid: {grid} ({f.grid.size} points)")
        print(f"type codes: nppfun={f.nppfun} ({f.pressure_key}), "
              f"nsttp={f.nsttp} ({f.current_key}), nrhomesh={f.nrhotype}")
        print(f"boundary: {f.boundary_r.size} points; epsilon={f.epsilon:g}; "
              f"pedge={f.pedge:g}")
    else:
        arrays = {k: v for k, v in dict(data).items()
                  if isinstance(v, np.ndarray)}
        scalars = {k: v for k, v in dict(data).items()
                   if np.isscalar(v) and not isinstance(v, str)}
        gridname = "rhotor" if kind == "iterdb" else \
            ("PSIN" if "PSIN" in arrays else "rhopsi")
        n = arrays[gridname].size if gridname in arrays else "?"
        print(f"grid: {gridname} ({n} points)")
        print("arrays: " + ", ".join(f"{k}[{v.size}]"
                                     for k, v in sorted(arrays.items())))
        if scalars:
            print("scalars: " + ", ".join(f"{k}={v:g}"
                                          for k, v in sorted(scalars.items())))
    issues = _invariant_report(kind, data)
    if issues:
        for issue in issues:
            print(f"invariant violation: {issue}")
        return 1
    print("invariants: ok")
    return 0


def _invariant_report(kind, data) -> list:
    issues = []
    if kind == "eqdsk":
        f = data.file
        if f.simag == f.sibry:
            issues.append("simag equals sibry")
        psin = data.grid.psin
        if abs(psin[0]) > 1e-12 or abs(psin[-1] - 1) > 1e-12:
            issues.append("psin endpoints not 0/1")
    else:
        arrays = {k: v for k, v in dict(data).items()
                  if isinstance(v, np.ndarray)}
        sizes = {v.size for k, v in arrays.items()
                 if k not in ("rbound", "zbound")}
        if len(sizes) > 1:
            issues.append(f"mixed array lengths {sorted(sizes)}")
        for k, v in arrays.items():
            if not np.all(np.isfinite(v)):
                issues.append(f"{k} has non-finite values")
    return issues


# --- plotdata ----------------------------------------------------------------

PLOT_QUANTITIES = ("pressure", "ffprime", "q", "Istr", "Iprl", "Jprl",
                   "Itor", "Te", "ne")


def cmd_plotdata(args) -> int:
    path = args.path
    outdir = args.outdir or (path if os.path.isdir(path)
                             else os.path.dirname(path) or ".")
    if os.path.isdir(path):
        found = sorted(glob.glob(os.path.join(path, "chease_iter*.dat")))
        iterations = []
        for f in found:
            m = re.fullmatch(r"chease_iter(\d{3})\.dat", os.path.basename(f))
            if m:
                iterations.append((int(m.group(1)), f))
        if not iterations:
            raise err.NoIterationFiles(f"no chease_iterNNN.dat files in {path}")
        stride = args.skip + 1
        picked = [(n, f) for n, f in sorted(iterations) if n % stride == 0]
    else:
        picked = [(0, path)]

    bundles = [(n, read_chease(f)) for n, f in picked]
    written = []
    for quantity in PLOT_QUANTITIES:
        cols, labels = [], []
        grid = None
        for n, bundle in bundles:
            if quantity not in bundle:
                continue
            cols.append(np.asarray(bundle[quantity], float))
            labels.append(f"iter{n:03d}")
            if grid is None:
                grid = np.asarray(bundle["rhopsi"], float)
        if not cols or grid is None:
            continue
        out = os.path.join(outdir, f"plotdata_{quantity}.tsv")
        with open(out, "w") as f:
            f.write("rhopsi\t" + "\t".join(labels) + "\n")
            for i in range(grid.size):
                f.write("\t".join([f"{grid[i]:.9e}"]
                                  + [f"{c[i]:.9e}" for c in cols]) + "\n")
        written.append(out)
    print(f"wrote {len(written)} plot-data tables for "
          f"{len(bundles)} iteration(s)")
    for w in written:
        print(f"  {w}")
    return 0


def cmd_clean(args) -> int:
    removed = pipeline.clean_workdir(args.workdir, inputs=True, outputs=True)
    print(f"removed {len(removed)} generated files from {args.workdir}")
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eqkit",
        description="Fixed-boundary toroidal equilibrium reconstruction "
                    "from fusion shot files")
    parser.add_argument("--config", help="key=value defaults file "
                                         "(flags override)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the iteration pipeline")
    run.add_argument("--shot", help=f"shot directory (or name under "
                                    f"${SHOT_ROOT_ENV})")
    run.add_argument("--workdir", default=".")
    run.add_argument("--cheasemode", type=int, choices=(1, 2, 3), default=1)
    run.add_argument("--runmode", type=int, choices=(1, 2, 3), default=1)
    run.add_argument("--iters", type=int, default=1)
    run.add_argument("--tol", type=float, default=1e-3)
    run.add_argument("--target-current", type=float, default=None)
    run.add_argument("--remove-inputs", type=_yesno, default=False,
                     metavar="{yes,no}")
    run.add_argument("--remove-outputs", type=_yesno, default=False,
                     metavar="{yes,no}")
    run.add_argument("--namelist", action="append", metavar="KEY=V[,V...]")
    for prof in ("eprofiles", "iprofiles", "pressure", "current", "rhomesh"):
        run.add_argument(f"--src-{prof}", metavar="TAG[,TAG...]")
    run.add_argument("--boundary", choices=("asis", "interp"),
                     default="asis")
    run.add_argument("--psin-cut", type=float, default=0.999)
    run.add_argument("--import", dest="import_file", metavar="FILE",
                     help="column-labeled text of imported profiles")
    run.set_defaults(func=cmd_run)

    conv = sub.add_parser("convert", help="convert between file formats")
    conv.add_argument("input")
    conv.add_argument("output")
    conv.add_argument("--from", dest="from_kind", required=True,
                      choices=KINDS)
    conv.add_argument("--to", dest="to_kind", required=True, choices=KINDS)
    conv.add_argument("--nppfun", type=int, choices=(4, 8), default=8)
    conv.add_argument("--nsttp", type=int, choices=(1, 2, 3, 4), default=1)
    conv.add_argument("--points", type=int, default=None,
                      help="resample kinetic profiles to N points")
    conv.add_argument("--nrbox", type=int, default=60)
    conv.add_argument("--nzbox", type=int, default=60)
    conv.set_defaults(func=cmd_convert)

    insp = sub.add_parser("inspect", help="describe a data file")
    insp.add_argument("path")
    insp.set_defaults(func=cmd_inspect)

    plot = sub.add_parser("plotdata", help="emit per-iteration comparison "
                                           "tables")
    plot.add_argument("path", help="chease_iterNNN.dat file or directory")
    plot.add_argument("--skip", type=int, default=0,
                      help="iterations skipped between plotted ones")
    plot.add_argument("--outdir", default=None)
    plot.set_defaults(func=cmd_plotdata)

    clean = sub.add_parser("clean", help="remove generated files")
    clean.add_argument("--workdir", default=".")
    clean.set_defaults(func=cmd_clean)
    return parser


def _config_value(text: str):
    try:
        return _yesno(text)
    except argparse.ArgumentTypeError:
        return _parse_value(text)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre_args, _ = pre.parse_known_args(argv)

    parser = build_parser()
    if pre_args.config:
        defaults = {k: _config_value(v)
                    for k, v in _load_config_defaults(pre_args.config).items()}
        subparsers = parser._subparsers._group_actions[0].choices
        for sub in subparsers.values():
            known = {a.dest for a in sub._actions}
            sub.set_defaults(**{k: v for k, v in defaults.items()
                                if k in known})
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except err.EqKitError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
