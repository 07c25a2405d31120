"""Batch command line: deterministic, loggable runs of the library pipelines.

Each subcommand reads plain-text grid/field/mask files, executes one module
pipeline, writes plain-text outputs plus a JSON-lines report, and exits

  0  success, every audit passed;
  2  an audit failed (outputs are still written and flagged in the report);
  1  bad input; the message names the offending file, line, or key.

Options may also come from a key=value config file (--config); explicit
flags win on conflict, unknown keys are rejected, and every input path is
resolved against the working directory and checked before any computation
starts.  The fully resolved configuration is echoed as the first report
line.  The env var PSHKIT_THREADS caps worker threads; outputs are byte
identical regardless of its value.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from ._parallel import thread_count
from .approximate import (
    ApproximationRun,
    ScheduleError,
    TamingError,
    run_pipeline,
    smooth_with_budget,
)
from .envelope import (
    ConfigurationError,
    ConvergenceError,
    EnvelopeProblem,
    PreconditionError,
    solve_obstacle,
)
from .grid import (
    EXTERIOR,
    INTERIOR,
    GridError,
    GridField,
    ParseError,
    is_field_subharmonic,
    load_almost_complex,
    load_jet_equivalence,
    read_field,
    read_label_file,
    read_mask,
    write_field,
    write_mask,
)
from .hulls import CompactSet, hull, hull_class_agreement, relative_extremal
from .jets import (
    Dual,
    ObstacleRestrict,
    PshAlmostComplex,
    PshStandard,
    Pullback,
    SigmaM,
    membership_batch,
    monotonicity_check,
    run_spec_audits,
    sample_member_jets,
)

SPEC_GRAMMAR = ("psh | psh-j:<J-manifest> | sigma:<m> | dual(<spec>) | "
                "obstacle(<spec>,<field-file>) | pullback(<spec>,<equiv-manifest>)")


class CliError(Exception):
    """Input error; the message names the offending file, line, or key."""


# ---------------------------------------------------------------------------
# option schemas

# kind -> (converter, metavar); converters raise ValueError on bad text
def _ints(text):
    return [int(t) for t in text.split(",") if t.strip() != ""]


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip() != ""]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


_KINDS = {
    "float": (float, "X"),
    "int": (int, "N"),
    "ints": (_ints, "N,N,..."),
    "floats": (_floats, "X,X,..."),
    "str": (str, "TEXT"),
    "path": (str, "FILE"),
    "bool": (_bool, "BOOL"),
}

# shared numeric block for the solver-backed subcommands
def _solver_keys(tol):
    return [
        ("tol", "float", tol, False, "sweep stopping tolerance"),
        ("samples", "int", 16, False, "circle samples per direction"),
        ("directions", "int", None, False, "tangent direction count"),
        ("max_iter", "int", 200000, False, "sweep budget"),
    ]


_TAIL = [
    ("seed", "int", 0, False, "rng seed (echoed; used by sampling audits)"),
    ("out", "str", ".", False, "output directory"),
]

SCHEMAS = {
    "envelope": [
        ("grid", "path", None, True, "domain mask file"),
        ("g", "path", None, True, "obstacle field file"),
        ("spec", "str", None, True, SPEC_GRAMMAR),
        ("phi", "str", None, False, "boundary data: a number or a field file"),
        ("init", "str", "minphi", False, "start: minphi | obstacle"),
    ] + _solver_keys(1e-8) + _TAIL,
    "approximate": [
        ("grid", "path", None, True, "domain mask file"),
        ("u", "path", None, True, "sample field to approximate"),
        ("rho", "path", None, True, "strict exhaustion field"),
        ("spec", "str", None, True, SPEC_GRAMMAR),
        ("ks", "ints", None, True, "sup-convolution slopes, increasing"),
        ("eps", "floats", None, True, "strictification weights, decreasing"),
    ] + _solver_keys(1e-10) + _TAIL,
    "hull": [
        ("grid", "path", None, True, "domain mask file"),
        ("K", "path", None, True, "compact set mask file (label 2 = member)"),
        ("spec", "str", None, True, SPEC_GRAMMAR),
        ("theta", "float", 0.05, False, "hull threshold in (0,1)"),
        ("oracle", "str", None, False, "closed-form comparison: radial"),
        ("oracle_tol", "float", 0.05, False, "sup tolerance for the oracle audit"),
        ("agree_radius", "float", None, False, "also run the class-agreement report"),
        ("agree_eps", "float", None, False, "strictification weight (default theta)"),
        ("agree_budget", "float", None, False, "smoothing budget (default eps)"),
    ] + _solver_keys(1e-8) + _TAIL,
    "audit-jet": [
        ("u", "path", None, True, "field file to scan"),
        ("grid", "path", None, False, "domain mask file to check against"),
        ("spec", "str", None, True, SPEC_GRAMMAR),
        ("tol", "float", 1e-8, False, "membership slack"),
    ] + _TAIL,
    "audit-spec": [
        ("spec", "str", None, True, SPEC_GRAMMAR),
        ("n", "int", 1, False, "complex dimension for grid-free specs"),
        ("samples", "int", 10000, False, "jets per audit"),
        ("nest_into", "str", None, False, "also check members lie in this spec"),
        ("self_dual", "bool", False, False, "also compare margins against the dual"),
    ] + _TAIL,
    "smooth": [
        ("u", "path", None, True, "field file to mollify"),
        ("spec", "str", None, True, SPEC_GRAMMAR),
        ("radius", "float", None, True, "mollifier radius"),
        ("budget", "float", None, True, "strictness budget c"),
        ("samples", "int", 16, False, "circle samples per direction"),
        ("directions", "int", None, False, "tangent direction count"),
    ] + _TAIL,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _build_parser():
    top = _Parser(prog="pshkit", description=__doc__.splitlines()[0])
    top.add_argument("--version", action="version", version="pshkit " + __version__)
    subs = top.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    for name, schema in SCHEMAS.items():
        sp = subs.add_parser(name, prog="pshkit " + name)
        sp.add_argument("--config", metavar="FILE",
                        help="key=value file supplying defaults for any option")
        for key, kind, default, required, help_ in schema:
            flag = "--" + key.replace("_", "-")
            note = " [required]" if required else (
                "" if default is None else " [default %s]" % (default,))
            sp.add_argument(flag, dest=key, metavar=_KINDS[kind][1],
                            help=help_ + note)
    return top


# ---------------------------------------------------------------------------
# config resolution


def _read_config_lines(path):
    try:
        with open(path, "r", encoding="ascii") as f:
            raw = f.read().splitlines()
    except OSError as e:
        raise CliError("--config: %s" % e)
    out = []
    for ln, line in enumerate(raw, start=1):
        t = line.strip()
        if not t or t.startswith("#"):
            continue
        if "=" not in t:
            raise CliError("%s:%d: expected key=value" % (path, ln))
        k, v = (s.strip() for s in t.split("=", 1))
        out.append((ln, k, v))
    return out


def _resolve_config(ns, subcmd):
    """Merge config file and flags (flags win), convert, check paths."""
    schema = SCHEMAS[subcmd]
    known = {key: (kind, default, required) for key, kind, default, required, _ in schema}
    texts = {}
    sources = {}
    if ns.config is not None:
        cpath = os.path.abspath(ns.config)
        for ln, key, value in _read_config_lines(cpath):
            if key not in known:
                raise CliError("%s:%d: unknown key %r for subcommand %s"
                               % (cpath, ln, key, subcmd))
            texts[key] = value
            sources[key] = "%s:%d" % (cpath, ln)
    for key in known:
        v = getattr(ns, key)
        if v is not None:
            texts[key] = v
            sources[key] = "--" + key.replace("_", "-")
    cfg = {}
    for key, (kind, default, required) in known.items():
        if key in texts:
            conv = _KINDS[kind][0]
            try:
                cfg[key] = conv(texts[key])
            except ValueError:
                raise CliError("%s: invalid value for key %s: %r"
                               % (sources[key], key, texts[key])) from None
        elif required:
            raise CliError("%s: missing required option --%s (or config key %s)"
                           % (subcmd, key.replace("_", "-"), key))
        else:
            cfg[key] = default
        if kind == "path" and cfg[key] is not None:
            cfg[key] = os.path.abspath(cfg[key])
            if not os.path.isfile(cfg[key]):
                raise CliError("%s: no such file: %s"
                               % (sources.get(key, key), cfg[key]))
    return cfg


# ---------------------------------------------------------------------------
# spec text parsing


def _spec_file(path):
    p = os.path.abspath(path)
    if not os.path.isfile(p):
        raise CliError("spec: no such file: %s" % p)
    return p


def _split_spec_args(text):
    depth = 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            return text[:i], text[i + 1:]
    raise CliError("spec: expected two comma-separated arguments in %r" % text)


def parse_spec(text, n, grid=None):
    """Build a SubequationSpec from the CLI spec grammar."""
    t = text.strip()
    if t == "psh":
        return PshStandard(n)
    if t.startswith("psh-j:"):
        path = _spec_file(t[len("psh-j:"):])
        try:
            struct, jgrid = load_almost_complex(path)
        except ValueError as e:
            raise CliError("spec: %s: %s" % (path, e)) from None
        if jgrid is not None and grid is not None and not grid.same_geometry(jgrid):
            raise CliError("spec: J manifest lattice does not match the grid")
        return PshAlmostComplex(struct)
    if t.startswith("sigma:"):
        try:
            m = int(t[len("sigma:"):])
            return SigmaM(n, m)
        except ValueError as e:
            raise CliError("spec: %s in %r" % (e, t)) from None
    for head in ("dual", "obstacle", "pullback"):
        if t.startswith(head + "(") and t.endswith(")"):
            body = t[len(head) + 1:-1]
            if head == "dual":
                return Dual(parse_spec(body, n, grid))
            left, right = _split_spec_args(body)
            inner = parse_spec(left, n, grid)
            path = _spec_file(right.strip())
            if head == "obstacle":
                if grid is None:
                    raise CliError("spec: obstacle(...) needs a grid context")
                f = read_field(path)
                if not grid.same_geometry(f.grid):
                    raise CliError("spec: %s lives on a different lattice" % path)
                return ObstacleRestrict(inner, f.values.ravel())
            try:
                equiv, egrid = load_jet_equivalence(path)
            except ValueError as e:
                raise CliError("spec: %s: %s" % (path, e)) from None
            if egrid is not None and grid is not None and not grid.same_geometry(egrid):
                raise CliError("spec: equivalence lattice does not match the grid")
            return Pullback(inner, equiv)
    raise CliError("spec: unrecognized spec text %r (grammar: %s)" % (t, SPEC_GRAMMAR))


# ---------------------------------------------------------------------------
# reports


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _compact(v):
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    if isinstance(v, float):
        return repr(v)
    return str(v)


class Report:
    """JSON-lines report accumulator; every line is echoed to stdout."""

    def __init__(self, path):
        self.path = path
        self.lines = []

    def add(self, **obj):
        obj = _plain(obj)
        self.lines.append(obj)
        print(" ".join("%s=%s" % (k, _compact(v)) for k, v in obj.items()))

    def write(self):
        with open(self.path, "w", encoding="ascii") as f:
            for obj in self.lines:
                f.write(json.dumps(obj, sort_keys=True) + "\n")


def _audit(report, ok, **kw):
    kw["pass"] = bool(ok)
    report.add(event="audit", **kw)
    return bool(ok)


# ---------------------------------------------------------------------------
# shared input plumbing


def _read_grid(path):
    try:
        return read_mask(path)
    except ParseError:
        raise
    except GridError as e:
        raise CliError("%s: %s" % (path, e)) from None


def _rehome_field(grid, path, flag):
    f = read_field(path)
    if not grid.same_geometry(f.grid):
        raise CliError("%s (%s): lattice does not match --grid" % (path, flag))
    if not np.array_equal(grid.mask, f.grid.mask):
        raise CliError("%s (%s): mask labels disagree with --grid" % (path, flag))
    return GridField(grid, f.values)


def _radii(grid):
    pts = np.stack([c.ravel() for c in grid.coordinate_arrays()], axis=1)
    return np.sqrt((pts ** 2).sum(axis=1)).reshape(grid.dims)


def _write(report, kind, obj, outdir, name, labels=None):
    path = os.path.join(outdir, name)
    if kind == "field":
        write_field(obj, path)
    else:
        write_mask(obj, path, labels=labels)
    report.add(event="output", kind=kind, path=path)
    return path


# ---------------------------------------------------------------------------
# subcommand runners (return True iff every audit passed)


def _run_envelope(cfg, report, outdir):
    grid = _read_grid(cfg["grid"])
    g = _rehome_field(grid, cfg["g"], "--g")
    spec = parse_spec(cfg["spec"], grid.n, grid)
    phi = cfg["phi"]
    if phi is not None:
        try:
            phi = float(phi)
        except ValueError:
            p = os.path.abspath(phi)
            if not os.path.isfile(p):
                raise CliError("--phi: neither a number nor an existing field file: %r"
                               % cfg["phi"]) from None
            phi = _rehome_field(grid, p, "--phi")
    if cfg["init"] not in ("minphi", "obstacle"):
        raise CliError("--init: must be minphi or obstacle, got %r" % cfg["init"])
    try:
        problem = EnvelopeProblem(spec, g, phi=phi, directions=cfg["directions"],
                                  samples=cfg["samples"], tol=cfg["tol"],
                                  max_iter=cfg["max_iter"])
    except (ConfigurationError, PreconditionError) as e:
        raise CliError("envelope: %s" % e) from None
    rep = solve_obstacle(problem, init=cfg["init"])
    _write(report, "field", rep["h"], outdir, "h.fld")
    report.add(event="result", spec=spec.describe(), iterations=rep["iterations"],
               residual=rep["residual"], converged=rep["converged"])
    ok = _audit(report, rep["converged"], invariant="converged",
                worst=rep["residual"], tol=cfg["tol"])
    for name, aud in rep["audits"].items():
        extras = {k: v for k, v in aud.items() if k != "pass"}
        ok &= _audit(report, aud["pass"], invariant=name, **extras)
    return ok


def _run_approximate(cfg, report, outdir):
    grid = _read_grid(cfg["grid"])
    u = _rehome_field(grid, cfg["u"], "--u")
    rho = _rehome_field(grid, cfg["rho"], "--rho")
    spec = parse_spec(cfg["spec"], grid.n, grid)
    try:
        run = ApproximationRun(u, rho, spec, cfg["ks"], cfg["eps"],
                               tol=cfg["tol"], directions=cfg["directions"],
                               samples=cfg["samples"], max_iter=cfg["max_iter"])
    except (ConfigurationError, PreconditionError) as e:
        raise CliError("approximate: %s" % e) from None
    res = run_pipeline(run)
    reports = res["reports"]

    _write(report, "field", res["tamed"], outdir, "tamed.fld")
    for i, (uk, vk) in enumerate(zip(res["outputs"], res["strictified"]), start=1):
        _write(report, "field", uk, outdir, "stage_%d.fld" % i)
        _write(report, "field", vk, outdir, "strict_%d.fld" % i)

    tam = reports["taming"]
    ok = _audit(report, tam["growth_pass"], stage=0, invariant="taming_growth",
                worst=tam["growth_min"], margin=tam["margin"],
                levels=tam["ladder_levels"])
    for st in reports["stages"]:
        report.add(event="stage", **st)
    for entry in reports["chain"]:
        for inv in ("below_family", "tail_equality", "dominates_sample",
                    "family_monotone", "stage_monotone"):
            if inv in entry:
                ok &= _audit(report, entry[inv + "_pass"], stage=entry["k"],
                             invariant=inv, worst=entry[inv])
    mon = reports["monitor"]
    ok &= _audit(report, mon["nonincreasing"], invariant="monitor_nonincreasing",
                 sups=mon["sups"], cells=mon["cells"])
    for a in reports["strictify"]:
        ok &= _audit(report, a["passed"], stage=a["k"], invariant="strict_margin",
                     worst=a["monitor_margin"], threshold=a["threshold"],
                     eps=a["eps"])
    return ok


def _run_hull(cfg, report, outdir):
    grid = _read_grid(cfg["grid"])
    kn, kdims, kh, korigin, lab = read_label_file(cfg["K"])
    if (kn, kdims, kh) != (grid.n, grid.dims, grid.h) \
            or not np.array_equal(korigin, grid.origin):
        raise CliError("%s (--K): header does not match --grid" % cfg["K"])
    try:
        K = CompactSet(grid, lab == INTERIOR)
    except ConfigurationError as e:
        raise CliError("%s (--K): %s" % (cfg["K"], e)) from None
    spec = parse_spec(cfg["spec"], grid.n, grid)
    theta = cfg["theta"]
    if not 0.0 < theta < 1.0:
        raise CliError("--theta: must lie in (0, 1), got %r" % theta)
    solver = dict(tol=cfg["tol"], directions=cfg["directions"],
                  samples=cfg["samples"], max_iter=cfg["max_iter"])

    uk = relative_extremal(grid, spec, K, **solver)
    Khat = hull(grid, spec, K, theta=theta, u=uk)
    _write(report, "field", uk, outdir, "u_K.fld")
    _write(report, "mask", grid, outdir, "hull.mask",
           labels=np.where(Khat.mask, INTERIOR, 0))
    report.add(event="result", spec=spec.describe(), theta=theta,
               k_cells=K.cells, hull_cells=Khat.cells)
    ok = True

    if cfg["oracle"] is not None:
        if cfg["oracle"] != "radial":
            raise CliError("--oracle: only 'radial' is supported, got %r" % cfg["oracle"])
        r = _radii(grid)
        rho_K = float(r[K.mask].max())
        if not 0.0 < rho_K < 1.0:
            raise CliError("--oracle radial: K radius %.3g is not inside the unit disc"
                           % rho_K)
        dom = grid.mask != EXTERIOR
        oracle = np.maximum(-1.0, np.log(np.maximum(r, 1e-300)) / np.log(1.0 / rho_K))
        sup_err = float(np.abs(uk.values[dom] - oracle[dom]).max())
        disc = (r <= rho_K + 1e-12) & (grid.mask == INTERIOR)
        diff = Khat.mask ^ disc
        worst = float(np.abs(r[diff] - rho_K).max() / grid.h) if diff.any() else 0.0
        ok &= _audit(report, sup_err <= cfg["oracle_tol"], invariant="oracle_extremal",
                     worst=sup_err, tol=cfg["oracle_tol"], rho=rho_K)
        ok &= _audit(report, worst <= 1.0, invariant="oracle_hull_mask",
                     worst=worst, cells=int(diff.sum()))

    if cfg["agree_radius"] is not None:
        res = hull_class_agreement(grid, spec, K, r=cfg["agree_radius"], theta=theta,
                                   eps=cfg["agree_eps"], budget=cfg["agree_budget"],
                                   **solver)
        rep = res["report"]
        sm = rep["smoothing"]
        ok &= _audit(report, sm["passed"], invariant="agreement_smoothing",
                     stage=sm.get("stage"), worst=sm.get("deep_margin"),
                     gate=sm.get("gate"))
        if rep["partial"]:
            ok &= _audit(report, False, invariant="class_agreement", partial=True,
                         k_cells=rep["k_cells"])
        else:
            _write(report, "mask", grid, outdir, "hull_family.mask",
                   labels=np.where(res["family_hull"].mask, INTERIOR, 0))
            raw = res["raw_hull"].mask
            ring = raw.copy()
            for a in range(raw.ndim):
                ring &= np.roll(raw, 1, axis=a) & np.roll(raw, -1, axis=a)
            ring = int((raw & ~ring).sum())
            sd = rep["symmetric_difference"]
            ok &= _audit(report, sd <= ring, invariant="class_agreement",
                         worst=sd, ring=ring, partial=False,
                         k_cells=rep["k_cells"], cells_raw=rep["cells_raw"],
                         cells_family=rep["cells_family"])
    return ok


def _run_audit_jet(cfg, report, outdir):
    u = read_field(cfg["u"])
    if cfg["grid"] is not None:
        grid = _read_grid(cfg["grid"])
        if not grid.same_geometry(u.grid) or not np.array_equal(grid.mask, u.grid.mask):
            raise CliError("%s (--u): lattice does not match --grid" % cfg["u"])
    spec = parse_spec(cfg["spec"], u.grid.n, u.grid)
    rep = is_field_subharmonic(u, spec, tol=cfg["tol"])
    extras = {k: v for k, v in rep.items() if k != "pass"}
    report.add(event="result", spec=spec.describe())
    return _audit(report, rep["pass"], invariant="jet_membership", **extras)


def _run_audit_spec(cfg, report, outdir):
    n = cfg["n"]
    if n not in (1, 2):
        raise CliError("--n: must be 1 or 2, got %r" % n)
    spec = parse_spec(cfg["spec"], n)
    samples, seed = cfg["samples"], cfg["seed"]
    report.add(event="result", spec=spec.describe(), samples=samples, seed=seed)
    try:
        audits = run_spec_audits(spec, samples=samples, seed=seed)
        summed = monotonicity_check(spec, spec, samples=samples, seed=seed)
    except ValueError as e:
        raise CliError("spec %r: %s" % (cfg["spec"], e)) from None

    pos = audits["positivity"]
    ok = _audit(report, pos["violations"] == 0 and pos["members_preserved"],
                invariant="positivity", worst=pos["worst_drop"],
                violations=pos["violations"])
    dd = audits["double_dual"]
    ok &= _audit(report, dd["agreement"] == 1.0, invariant="double_dual",
                 agreement=dd["agreement"], decided=dd["decided"],
                 worst=dd["max_margin_gap"])
    neg = audits["negativity"]
    ok &= _audit(report, neg["violations"] == 0, invariant="negativity",
                 violations=neg["violations"])
    ok &= _audit(report, summed["violations"] == 0, invariant="sum_closed",
                 worst=summed["worst_margin"], violations=summed["violations"])

    if cfg["nest_into"] is not None:
        outer = parse_spec(cfg["nest_into"], n)
        rng = np.random.default_rng(seed)
        R, P, A = sample_member_jets(spec, samples, rng)
        m = membership_batch(outer, None, R, P, A)
        bad = int((m < -1e-12).sum())
        ok &= _audit(report, bad == 0, invariant="nesting", into=outer.describe(),
                     worst=float(m.min()), violations=bad)
    if cfg["self_dual"]:
        rng = np.random.default_rng(seed)
        d = 2 * n
        R = rng.normal(0.0, 1.0, samples)
        P = rng.normal(0.0, 1.0, (samples, d))
        M = rng.normal(0.0, 1.0, (samples, d, d))
        A = 0.5 * (M + M.transpose(0, 2, 1))
        gap = np.abs(membership_batch(spec, None, R, P, A)
                     - membership_batch(Dual(spec), None, R, P, A))
        ok &= _audit(report, float(gap.max()) == 0.0, invariant="self_dual",
                     worst=float(gap.max()))
    return ok


def _run_smooth(cfg, report, outdir):
    u = read_field(cfg["u"])
    spec = parse_spec(cfg["spec"], u.grid.n, u.grid)
    try:
        res = smooth_with_budget(u, cfg["radius"], spec, cfg["budget"],
                                 directions=cfg["directions"], samples=cfg["samples"])
    except (ConfigurationError, PreconditionError) as e:
        raise CliError("smooth: %s" % e) from None
    _write(report, "field", res["field"], outdir, "smoothed.fld")
    rep = res["report"]
    extras = {k: v for k, v in rep.items() if k != "passed"}
    return _audit(report, rep["passed"], invariant="budget_margin", **extras)


_RUNNERS = {
    "envelope": _run_envelope,
    "approximate": _run_approximate,
    "hull": _run_hull,
    "audit-jet": _run_audit_jet,
    "audit-spec": _run_audit_spec,
    "smooth": _run_smooth,
}


# ---------------------------------------------------------------------------
# entry points


def run(argv):
    """Execute one subcommand; returns the process exit code."""
    parser = _build_parser()
    report = None
    try:
        ns = parser.parse_args(argv)
        if ns.subcommand is None:
            raise CliError("missing subcommand (one of: %s)" % ", ".join(SCHEMAS))
        cfg = _resolve_config(ns, ns.subcommand)
        outdir = os.path.abspath(cfg["out"])
        os.makedirs(outdir, exist_ok=True)
        report = Report(os.path.join(outdir, "report.jsonl"))
        echo = {k: cfg[k] for k in sorted(cfg)}
        report.add(event="config", subcommand=ns.subcommand, version=__version__,
                   threads=thread_count(), **echo)
        ok = _RUNNERS[ns.subcommand](cfg, report, outdir)
    except SystemExit as e:  # --help/--version print and stop
        return int(e.code or 0)
    except CliError as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    except (ParseError, GridError, ConfigurationError, PreconditionError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    except (ConvergenceError, TamingError, ScheduleError) as e:
        if report is not None:
            report.add(event="error", message=str(e), **{"pass": False})
            report.write()
        print("audit failure: %s" % e, file=sys.stderr)
        return 2
    report.write()
    return 0 if ok else 2


def main():
    sys.exit(run(sys.argv[1:]))
