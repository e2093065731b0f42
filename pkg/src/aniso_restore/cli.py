"""Command-line front end: degrade, restore, segment, report.

Every command records what it did in a JSON manifest that can be fed back
with ``--manifest``.  Settings resolve as flags, then manifest, then the
built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import analysis, itss_pl
from .admm_inner import DivergenceError, SingularSystemError
from .grid_ops import GridOperator, ParameterError, ShapeError, make_kernel
from .imageio import ImageFormatError, read_image, write_image
from .model import RestorationModel, SolverConfig
from .potentials import Potential
from .synthesis import IMAGE_KINDS, degrade, make_test_image

log = logging.getLogger("aniso_restore")

EXIT_OK = 0
EXIT_USAGE = 2  # argparse uses 2 as well
EXIT_INPUT = 3  # unreadable, unwritable or malformed files
EXIT_THEORY = 4  # a verification report failed
EXIT_DIVERGED = 5

MANIFEST_FORMAT = "aniso-restore-manifest"

# flag name -> SolverConfig field
CONFIG_FLAGS = {
    "rho": float,
    "tau": float,
    "eps_outer": float,
    "max_outer": int,
    "r_v": float,
    "r_w": float,
    "eps_inner": float,
    "max_inner": int,
    "init_r_v": float,
    "init_r_w": float,
    "refine_rounds": int,
}


class UsageError(Exception):
    pass


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"aniso_restore": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _load_manifest(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise OSError(f"cannot read manifest {path}: {exc}") from exc
    if data.get("format") != MANIFEST_FORMAT:
        raise UsageError(f"{path} is not a manifest written by this tool")
    return data


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _pick(flag, stored, default=None):
    return flag if flag is not None else (stored if stored is not None else default)


# ---------------------------------------------------------------- kernels

def _kernel_spec(args, manifest):
    spec = dict(manifest.get("kernel") or {})
    if args.kernel is not None and args.kernel != spec.get("kind"):
        spec = {"kind": args.kernel}
    if args.kernel_size is not None:
        spec["size"] = list(args.kernel_size) if len(args.kernel_size) == 2 else [args.kernel_size[0]] * 2
    if args.sigma is not None:
        spec["sigma"] = args.sigma
    if args.radius is not None:
        spec["radius"] = args.radius
    if args.taps is not None:
        try:
            spec["taps"] = np.atleast_2d(np.loadtxt(args.taps)).tolist()
        except (OSError, ValueError) as exc:
            raise OSError(f"cannot read kernel taps {args.taps}: {exc}") from exc
    kind = spec.get("kind")
    if kind is None:
        raise UsageError("a blur kernel is required (--kernel or a manifest)")
    needed = {"average": ["size"], "gaussian": ["size", "sigma"], "disk": ["radius"],
              "custom": ["taps"], "identity": []}
    if kind not in needed:
        raise UsageError(f"unknown kernel {kind!r}")
    missing = [k for k in needed[kind] if k not in spec]
    if missing:
        flag = {"size": "--kernel-size", "sigma": "--sigma", "radius": "--radius", "taps": "--taps"}
        raise UsageError(f"kernel {kind!r} needs " + ", ".join(flag[m] for m in missing))
    return spec


def _kernel_from_spec(spec):
    kind = spec["kind"]
    if kind == "identity":
        return make_kernel("custom", taps=[[1.0]])
    params = {k: v for k, v in spec.items() if k != "kind"}
    return make_kernel(kind, **params)


# ---------------------------------------------------------------- argument groups

def _add_kernel_flags(p):
    g = p.add_argument_group("blur kernel")
    g.add_argument("--kernel", choices=["average", "gaussian", "disk", "custom", "identity"])
    g.add_argument("--kernel-size", type=int, nargs="+", metavar="N",
                   help="one size for a square kernel or two for rows and columns")
    g.add_argument("--sigma", type=float, help="gaussian width in pixels")
    g.add_argument("--radius", type=float, help="disk radius in pixels")
    g.add_argument("--taps", help="text file with custom kernel taps")


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--beta", type=float, help="fidelity weight")
    g.add_argument("--q", type=float, help="fidelity exponent, q >= 1 (1 for impulse noise, 2 for Gaussian)")
    g.add_argument("--p", type=float, help="potential exponent in (0, 1), default 0.5")
    g.add_argument("--potential", choices=["power", "logpower"])
    g = p.add_argument_group("solver")
    for name, typ in CONFIG_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), type=typ, dest=name)


def _add_common_output(p):
    p.add_argument("--bits", type=int, choices=[8, 16], default=16, help="bit depth of written images")
    p.add_argument("--format", choices=["png", "pgm"], default="png", help="written image format")


def build_parser():
    parser = argparse.ArgumentParser(prog="aniso-restore", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="blur and corrupt an image, writing the observation and a manifest")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--image", choices=IMAGE_KINDS, help="built-in test image")
    src.add_argument("--input", help="clean image file")
    p.add_argument("--dims", type=int, nargs=2, metavar=("H", "W"), help="size of a built-in image (default 64 64)")
    _add_kernel_flags(p)
    p.add_argument("--noise", choices=["salt_pepper", "gaussian", "none"])
    p.add_argument("--level", type=float, help="salt-and-pepper fraction or Gaussian variance")
    p.add_argument("--seed", type=int)
    p.add_argument("--beta", type=float, help="recorded in the manifest for later restore runs")
    p.add_argument("--manifest", help="replay the settings of an earlier manifest")
    p.add_argument("-o", "--out", required=True, help="observation image path")
    p.add_argument("--truth-out", help="where to write the clean image (default: truth.<fmt> next to --out)")
    p.add_argument("--manifest-out", help="default: manifest.json next to --out")
    p.add_argument("--bits", type=int, choices=[8, 16], default=16)

    for name, helptext in (("restore", "restore an observation and verify the iteration"),
                           ("segment", "restore, then split intensities into K phases")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("observation", nargs="?", help="observed image (default: taken from --manifest)")
        p.add_argument("--manifest", help="manifest from degrade or an earlier run")
        p.add_argument("--truth", help="clean image for PSNR or Jaccard scores")
        _add_kernel_flags(p)
        _add_model_flags(p)
        p.add_argument("-o", "--out", required=True, help="output prefix")
        _add_common_output(p)
        if name == "restore":
            p.add_argument("--timing", action="store_true", help="fill the ms column of the trace")
        else:
            p.add_argument("-K", "--phases", type=int, required=True, help="number of phases")

    p = sub.add_parser("report", help="turn trace CSVs into plot-ready series")
    p.add_argument("traces", nargs="+")
    p.add_argument("--n-coeffs", type=int,
                   help="number of difference coefficients |J| (default: read from the matching report)")
    p.add_argument("--csv", action="store_true", help="write CSV instead of gnuplot data")
    p.add_argument("-o", "--out", required=True, help="output prefix")
    return parser


# ---------------------------------------------------------------- degrade

def cmd_degrade(args):
    man = _load_manifest(args.manifest)
    source = dict(man.get("source") or {})
    if args.image is not None:
        source = {"generator": args.image, "dims": list(args.dims or (64, 64))}
    elif args.input is not None:
        source = {"path": args.input}
    elif args.dims is not None and "generator" in source:
        source["dims"] = list(args.dims)
    if not source:
        raise UsageError("choose a source with --image or --input")

    kspec = _kernel_spec(args, man)
    noise = dict(man.get("noise") or {"kind": "salt_pepper", "level": 0.3})
    if args.noise is not None:
        noise = {"kind": args.noise, "level": noise.get("level")}
    if args.level is not None:
        noise["level"] = args.level
    if noise["kind"] != "none" and noise.get("level") is None:
        raise UsageError("--level is required for this noise model")
    seed = _pick(args.seed, man.get("seed"), 0)

    if "generator" in source:
        truth = make_test_image(source["generator"], tuple(source["dims"]))
    else:
        truth = read_image(source["path"])
    op = GridOperator(_kernel_from_spec(kspec), truth.shape)
    b = degrade(truth, op, noise["kind"], noise.get("level") or 0.0, seed)

    out = Path(args.out)
    fmt = out.suffix.lstrip(".") or "png"
    write_image(out, b, args.bits)
    outputs = {"observation": out.name, "bits": args.bits}
    if "generator" in source:
        truth_path = Path(args.truth_out) if args.truth_out else out.with_name("truth." + fmt)
        write_image(truth_path, truth, args.bits)
        outputs["truth"] = str(truth_path.relative_to(out.parent)) if truth_path.parent == out.parent else str(truth_path)

    model = dict(man.get("model") or {})
    model.setdefault("q", 2.0 if noise["kind"] == "gaussian" else 1.0)
    model.setdefault("potential", {"kind": "power", "p": 0.5})
    if args.beta is not None:
        model["beta"] = args.beta
    manifest = {
        "format": MANIFEST_FORMAT,
        "command": "degrade",
        "source": source,
        "kernel": kspec,
        "noise": noise,
        "seed": seed,
        "model": model,
        "config": man.get("config") or SolverConfig().to_dict(),
        "outputs": outputs,
        "versions": _versions(),
    }
    mpath = Path(args.manifest_out) if args.manifest_out else out.with_name("manifest.json")
    _write_json(mpath, manifest)
    log.info("wrote %s and %s", out, mpath)
    return EXIT_OK


# ---------------------------------------------------------------- restore / segment

def _resolve_run(args):
    man = _load_manifest(args.manifest)
    base = Path(args.manifest).parent if args.manifest else Path(".")
    outputs = man.get("outputs") or {}

    obs = args.observation
    if obs is None:
        if "observation" not in outputs:
            raise UsageError("no observation given and none recorded in the manifest")
        obs = str(base / outputs["observation"])
    truth = args.truth
    if truth is None and "truth" in outputs:
        truth = str(base / outputs["truth"])

    mm = man.get("model") or {}
    pm = mm.get("potential") or {}
    q = _pick(args.q, mm.get("q"), 1.0)
    beta = _pick(args.beta, mm.get("beta"))
    if beta is None:
        raise UsageError("--beta is required (or record it in the manifest)")
    pot = Potential(_pick(args.potential, pm.get("kind"), "power"), _pick(args.p, pm.get("p"), 0.5))

    cfg = SolverConfig().to_dict()
    cfg.update({k: v for k, v in (man.get("config") or {}).items() if k in cfg})
    cfg.update({k: getattr(args, k) for k in CONFIG_FLAGS if getattr(args, k) is not None})
    config = SolverConfig(**cfg)

    kspec = _kernel_spec(args, man)
    b = read_image(obs)
    model = RestorationModel(GridOperator(_kernel_from_spec(kspec), b.shape), b, beta, q, pot)
    truth_img = read_image(truth) if truth else None
    if truth_img is not None and truth_img.shape != b.shape:
        raise ShapeError(f"truth {truth_img.shape} and observation {b.shape} differ in size")

    # paths are recorded relative to the directory the new manifest lands in
    here = Path(args.out).resolve().parent
    rec_out = {"observation": os.path.relpath(Path(obs).resolve(), here)}
    if truth:
        rec_out["truth"] = os.path.relpath(Path(truth).resolve(), here)
    record = {
        "format": MANIFEST_FORMAT,
        "command": args.command,
        "outputs": rec_out,
        "kernel": kspec,
        "model": {"q": q, "beta": beta, "potential": pot.describe()},
        "config": config.to_dict(),
        "versions": _versions(),
    }
    for key in ("source", "noise", "seed"):
        if key in man:
            record[key] = man[key]
    return model, config, truth_img, record


def _verification(trace, config, x):
    dec = itss_pl.verify_decrease(trace, config)
    nest = itss_pl.verify_support_nesting(trace)
    low = analysis.lower_bound_report(x, config.tau)
    return {
        "decrease": dec,
        "nesting": nest,
        "lower_bound": low,
        "passed": bool(dec["passed"] and nest["passed"] and low["passed"]),
    }


def _image_path(prefix, suffix, fmt):
    return Path(f"{prefix}{suffix}.{fmt}")


def cmd_restore(args):
    model, config, truth, record = _resolve_run(args)
    prefix = args.out
    trace_path = Path(f"{prefix}_trace.csv")
    try:
        x, trace = itss_pl.run(model, config)
    except itss_pl.MonotonicityError as exc:
        trace_path.write_text(exc.trace.to_csv(args.timing))
        log.error("%s", exc)
        return EXIT_THEORY
    write_image(_image_path(prefix, "", args.format), x, args.bits)
    trace_path.write_text(trace.to_csv(args.timing))

    report = {
        "n_coeffs": model.n_coeffs,
        "stop_reason": trace.stop_reason,
        "outer_iterations": len(trace.rows) - 1,
        "initializer": {k: v for k, v in trace.init.items() if k != "ms" or args.timing},
        **_verification(trace, config, x),
    }
    if truth is not None:
        report["psnr"] = {"restored": analysis.psnr(x, truth), "initializer": analysis.psnr(trace.start, truth)}
    _write_json(f"{prefix}_report.json", _jsonable(report))
    _write_json(f"{prefix}_manifest.json", record)
    if not report["passed"]:
        log.error("verification failed, see %s_report.json", prefix)
        return EXIT_THEORY
    return EXIT_OK


def cmd_segment(args):
    model, config, truth, record = _resolve_run(args)
    K = args.phases
    prefix = args.out
    gt = None
    if truth is not None:
        gt, levels = analysis.label_levels(truth)
        if levels.size != K:
            raise UsageError(f"ground truth has {levels.size} intensity levels, not K={K}")
    try:
        labels, restored, trace = analysis.two_stage_segment(model, config, K, return_trace=True)
    except itss_pl.MonotonicityError as exc:
        log.error("%s", exc)
        return EXIT_THEORY
    # labels 1..K are spread evenly over the gray range
    scale = (labels - 1) / (K - 1) if K > 1 else np.zeros(labels.shape)
    write_image(_image_path(prefix, "_labels", args.format), scale, args.bits)
    write_image(_image_path(prefix, "_restored", args.format), restored, args.bits)
    Path(f"{prefix}_trace.csv").write_text(trace.to_csv())

    header = ["phase", "center", "fraction"]
    if gt is not None:
        header += ["truth_fraction", "jaccard"]
    rows = []
    for j in range(1, K + 1):
        mask = labels == j
        row = [j, repr(float(restored[mask].mean())) if mask.any() else "", repr(float(mask.mean()))]
        if gt is not None:
            row += [repr(float((gt == j).mean())), repr(analysis.jaccard(labels, gt, j))]
        rows.append(row)
    analysis.write_csv(f"{prefix}_phases.csv", header, rows)

    verification = _verification(trace, config, restored)
    _write_json(f"{prefix}_report.json", _jsonable({"n_coeffs": model.n_coeffs,
                                                   "stop_reason": trace.stop_reason, **verification}))
    _write_json(f"{prefix}_manifest.json", {**record, "phases": K})
    return EXIT_OK if verification["passed"] else EXIT_THEORY


# ---------------------------------------------------------------- report

def _n_coeffs_for(path, override):
    if override is not None:
        return override
    p = Path(path)
    if p.name.endswith("_trace.csv"):
        rep = p.with_name(p.name[: -len("_trace.csv")] + "_report.json")
        if rep.exists():
            return int(json.loads(rep.read_text())["n_coeffs"])
    raise UsageError(f"cannot find |J| for {path}; pass --n-coeffs")


def cmd_report(args):
    names, F, ratio = [], {}, {}
    for path in args.traces:
        try:
            cols = itss_pl.IterationTrace.read_csv(Path(path).read_text())
        except ValueError as exc:  # includes undecodable bytes
            raise ImageFormatError(f"{path}: {exc}") from exc
        n = _n_coeffs_for(path, args.n_coeffs)
        name = Path(path).name.removesuffix(".csv")
        while name in names:
            name += "_"
        names.append(name)
        F[name] = cols["F"]
        ratio[name] = cols["T_size"] / n
    longest = max(len(v) for v in F.values())
    k = np.arange(longest)
    written = []
    for label, series in (("objective", F), ("support", ratio)):
        cols = {"k": k, **series}
        if args.csv:
            path = f"{args.out}_{label}.csv"
            rows = [[int(i)] + ["" if i >= len(series[nm]) else repr(float(series[nm][i])) for nm in names]
                    for i in range(longest)]
            analysis.write_csv(path, ["k"] + names, rows)
        else:
            path = f"{args.out}_{label}.dat"
            analysis.write_gnuplot(path, cols)
        written.append(path)
    log.info("wrote %s", ", ".join(written))
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


COMMANDS = {"degrade": cmd_degrade, "restore": cmd_restore, "segment": cmd_segment, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with EXIT_USAGE
    except (ParameterError, itss_pl.AssumptionError, ShapeError) as exc:
        print(f"aniso-restore: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ImageFormatError) as exc:
        print(f"aniso-restore: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DivergenceError, SingularSystemError) as exc:
        print(f"aniso-restore: solver failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"aniso-restore: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
