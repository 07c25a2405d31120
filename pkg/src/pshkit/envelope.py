"""Largest subharmonic minorant of an obstacle by monotone sweep iteration.

The envelope of an obstacle g is computed as the fixed point of a Jacobi
update: at every Interior point the field is replaced by the smaller of g
and the least circle average over sampled complex tangent directions
(product-of-circle averages for sigma specs below top degree).  The update
is monotone (all interpolation weights are nonnegative), so iterates
started below the envelope increase toward it and iterates started at the
obstacle decrease toward it.

Boundary values are pinned to the boundary data for the whole iteration;
interpolation queries that leave the domain read the value at the nearest
Boundary cell.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import _kernels
from .grid import (
    BOUNDARY,
    EXTERIOR,
    INTERIOR,
    GridField,
    GridError,
    is_field_subharmonic,
    nearest_boundary_indices,
)
from .jets import (
    AlmostComplexStructure,
    Dual,
    ObstacleRestrict,
    PshAlmostComplex,
    PshStandard,
    SigmaM,
    dual_spec,
    standard_j,
)

__all__ = [
    "EnvelopeProblem",
    "sweep_step",
    "solve_obstacle",
    "verify_maximality",
    "comparison_check",
    "stencil_margins",
    "ConfigurationError",
    "PreconditionError",
    "ConvergenceError",
]


class ConfigurationError(ValueError):
    """Problem parameters the solver cannot work with."""


class PreconditionError(ValueError):
    """Input data violating a stated operation precondition."""


class ConvergenceError(RuntimeError):
    """Sweep iteration exhausted its budget without meeting the tolerance."""


# consistency-audit slack for the solved envelope: c1*h^2 + c2/D.
# c1 covers smooth-region truncation (interpolation bias and fourth
# derivatives); c2 covers direction sampling plus the O(1) second-difference
# dips at isolated free-boundary pixels where the clamped set staircases
# (those dips do not shrink with h; they scale with the obstacle's curvature
# jump across the contact interface).
CONSISTENCY_C1 = 8.0
CONSISTENCY_C2 = 6.0

_DIRECTION_SEED = 20413


def _contains_dual(spec):
    if isinstance(spec, Dual):
        return True
    inner = getattr(spec, "inner", None)
    return inner is not None and _contains_dual(inner)


def _collect_obstacle_arrays(spec, out):
    if isinstance(spec, ObstacleRestrict):
        out.append(spec.g)
    inner = getattr(spec, "inner", None)
    if inner is not None:
        _collect_obstacle_arrays(inner, out)


def _psh_directions(n, D):
    """Unit directions spanning the sampled complex tangent lines."""
    if n == 1:
        # v and -v trace the same curve, so a half turn of angles suffices
        ang = np.pi * np.arange(D) / D
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    dirs = [np.eye(4)[0], np.eye(4)[2]]
    rng = np.random.default_rng(_DIRECTION_SEED)
    while len(dirs) < D:
        v = rng.normal(size=4)
        nv = np.linalg.norm(v)
        if nv > 1e-6:
            dirs.append(v / nv)
    return np.stack(dirs[:D], axis=0)


def _corner_terms(c):
    # 1-D interpolation stencil of a point at (cell-unit) offset c
    b = int(np.floor(c))
    f = c - b
    if f == 0.0:
        return ((b, 1.0),)
    return ((b, 1.0 - f), (b + 1, f))


def _direction_taps(v, Jv, S):
    """Interpolation taps (cell offset -> weight) of one circle average."""
    taps = {}
    for j in range(S):
        th = 2.0 * np.pi * j / S
        w = np.cos(th) * v + np.sin(th) * Jv
        terms = [_corner_terms(c) for c in w]
        for combo in itertools.product(*terms):
            off = tuple(t[0] for t in combo)
            wt = 1.0 / S
            for t in combo:
                wt *= t[1]
            taps[off] = taps.get(off, 0.0) + wt
    return taps


def _circle_kernel_2d(S):
    """3x3 bilinear quadrature of the unit-radius circle average."""
    taps = _direction_taps(np.array([1.0, 0.0]), np.array([0.0, 1.0]), S)
    w = np.zeros((3, 3))
    for (ox, oy), wt in taps.items():
        w[ox + 1, oy + 1] += wt
    return w


class EnvelopeProblem:
    """Obstacle, boundary data, and sweep parameters for one envelope run.

    phi defaults to the obstacle's Boundary values and may be given as a
    GridField, an array over the Boundary cells (flat C order), or a
    scalar.  phi must not exceed the obstacle anywhere on the Boundary.
    """

    def __init__(self, spec, g, phi=None, directions=None, samples=16,
                 tol=1e-8, max_iter=200000):
        if not isinstance(g, GridField):
            raise ConfigurationError("obstacle must be a GridField")
        grid = g.grid
        if spec.n != grid.n:
            raise ConfigurationError("spec dimension does not match the grid")
        if _contains_dual(spec):
            raise ConfigurationError(
                "dual specs have no sweep geometry; solve the primal spec instead")
        prim = spec.core_primitive()
        if not isinstance(prim, (PshStandard, PshAlmostComplex, SigmaM)):
            raise ConfigurationError("spec %s has no sweep geometry" % spec.describe())
        if directions is None:
            directions = 16 if grid.n == 1 else 32
        directions = int(directions)
        if directions < 4 or directions < 2 * grid.n:
            raise ConfigurationError(
                "direction budget %d is below 2 per complex dimension (need >= %d)"
                % (directions, max(4, 2 * grid.n)))
        samples = int(samples)
        if samples < 8 or samples % 2:
            raise ConfigurationError("circle sample count must be even and >= 8")
        self.spec = spec
        self.g = g
        self.grid = grid
        self.directions = directions
        self.samples = samples
        self.tol = float(tol)
        self.max_iter = int(max_iter)

        bflat = grid.boundary_flat
        gvals = g.values.ravel()
        if phi is None:
            phi = gvals[bflat].copy()
        elif isinstance(phi, GridField):
            if not grid.same_geometry(phi.grid):
                raise ConfigurationError("boundary data lives on a different grid")
            phi = phi.values.ravel()[bflat].copy()
        else:
            phi = np.asarray(phi, dtype=float)
            if phi.ndim == 0:
                phi = np.full(bflat.size, float(phi))
            elif phi.shape != (bflat.size,):
                raise ConfigurationError(
                    "boundary data must have one value per Boundary cell (%d)" % bflat.size)
            phi = phi.copy()
        if not np.isfinite(phi).all():
            raise ConfigurationError("boundary data must be finite")

        geff = gvals.copy()
        extra = []
        _collect_obstacle_arrays(spec, extra)
        for arr in extra:
            if arr.shape != (grid.npts,):
                raise ConfigurationError(
                    "obstacle field inside the spec has %d values, grid has %d cells"
                    % (arr.size, grid.npts))
            np.minimum(geff, arr, out=geff)
        if (phi > geff[bflat]).any():
            worst = int(np.argmax(phi - geff[bflat]))
            raise PreconditionError(
                "boundary data exceeds the obstacle on Boundary (worst gap %.3g at %s)"
                % (float(phi[worst] - geff[bflat][worst]),
                   grid.multi_of(bflat[worst])))
        self.phi = phi
        self.phi.flags.writeable = False
        self._g_eff = geff
        self._ext_flat = np.flatnonzero(grid.mask.ravel() == EXTERIOR)
        nb = nearest_boundary_indices(grid)
        self._nb_flat = np.ravel_multi_index(nb, grid.dims).ravel()
        self._engine = None

    def effective_field(self, u):
        """Full-lattice values read by a sweep: u with Boundary pinned to
        phi and Exterior cells carrying their nearest Boundary value."""
        E = u.values.ravel().copy() if isinstance(u, GridField) else np.array(u, dtype=float)
        E[self.grid.boundary_flat] = self.phi
        ext = self._ext_flat
        E[ext] = E[self._nb_flat[ext]]
        return E

    def engine(self):
        if self._engine is None:
            self._engine = _SweepEngine(self)
        return self._engine


class _SweepEngine:
    """Precompiled sweep geometry for one problem."""

    def __init__(self, problem):
        grid = problem.grid
        self.grid = grid
        self.gobs = problem._g_eff
        self.interior = grid.interior_flat.astype(np.int64)
        self.S = problem.samples
        self.D = problem.directions
        prim = problem.spec.core_primitive()

        if isinstance(prim, SigmaM) and prim.m < prim.n:
            self._init_sigma_frame()
            return
        if isinstance(prim, PshAlmostComplex):
            struct = prim.J
        else:
            struct = AlmostComplexStructure.standard(grid.n)
        if not struct.constant:
            self._init_slow(struct)
            return
        Jc = struct.at(None)
        if grid.n == 1 and np.array_equal(Jc, standard_j(1)):
            # every direction traces the same circle: one aggregated stencil
            self._init_span2d()
            return
        dirs = _psh_directions(grid.n, self.D)
        tapsets = [_direction_taps(v, Jc @ v, self.S) for v in dirs]
        reach = max(abs(o) for taps in tapsets for off in taps for o in off)
        if self._offsets_fit(reach):
            self._init_offsets(tapsets)
        else:
            self._init_slow(struct)

    def _offsets_fit(self, reach):
        grid = self.grid
        multi = np.stack(np.unravel_index(self.interior, grid.dims), axis=1)
        lo = multi.min(axis=0)
        hi = multi.max(axis=0)
        dims = np.array(grid.dims)
        return bool((lo >= reach).all() and (hi <= dims - 1 - reach).all())

    def _init_span2d(self):
        grid = self.grid
        self.mode = "span2d"
        self.w33 = _circle_kernel_2d(self.S)
        self.spans = _kernels.interior_spans(grid.mask, INTERIOR)
        self.ncol = grid.dims[1]

    def _init_offsets(self, tapsets):
        grid = self.grid
        self.mode = "offsets"
        strides = np.array(
            [int(np.prod(grid.dims[a + 1:])) for a in range(len(grid.dims))],
            dtype=np.int64)
        K = max(len(t) for t in tapsets)
        offs = np.zeros((len(tapsets), K), dtype=np.int64)
        wts = np.zeros((len(tapsets), K))
        for d, taps in enumerate(tapsets):
            for k, off in enumerate(sorted(taps)):
                offs[d, k] = int(np.dot(off, strides))
                wts[d, k] = taps[off]
        self.offs = offs
        self.wts = wts

    def _init_sigma_frame(self):
        # full-frame torus average: separable circle kernels, one per plane
        grid = self.grid
        self.mode = "sigma1"
        self.wplane = _circle_kernel_2d(self.S)
        dims = grid.dims
        self.Epad = np.zeros(tuple(d + 2 for d in dims))
        self.tmp = np.zeros((dims[0] + 2, dims[1] + 2, dims[2], dims[3]))
        self.out = np.zeros(dims)

    def _init_slow(self, struct):
        grid = self.grid
        self.mode = "slow"
        d = 2 * grid.n
        self.dirs = _psh_directions(grid.n, self.D)
        if struct.constant:
            Jc = struct.at(None)
            self.Jv = np.broadcast_to(self.dirs @ Jc.T, (self.interior.size, self.D, d))
        else:
            Jint = struct.batch(self.interior)
            self.Jv = np.einsum("xij,dj->xdi", Jint, self.dirs)
        self.Xint = np.stack(np.unravel_index(self.interior, grid.dims), axis=1).astype(float)
        self.strides = np.array(
            [int(np.prod(grid.dims[a + 1:])) for a in range(len(grid.dims))],
            dtype=np.int64)
        self.maxcoord = np.array(grid.dims, dtype=float) - 1.0
        self.maxbase = np.array(grid.dims, dtype=np.int64) - 2
        self.bits = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)

    def sweep(self, E):
        """One Jacobi update of the full-lattice array E.

        Returns (new array, max interior change).  Boundary and Exterior
        entries are carried over unchanged.
        """
        return self.sweep_with(E, self.gobs)

    def sweep_with(self, E, gobs):
        """Sweep against an explicit per-cell obstacle array."""
        Enew = E.copy()
        if self.mode == "span2d":
            chg = _kernels.sweep_2d(E, Enew, gobs, self.spans, self.ncol, self.w33)
        elif self.mode == "offsets":
            chg = _kernels.sweep_offsets(E, Enew, gobs, self.interior, self.offs, self.wts)
        elif self.mode == "sigma1":
            chg = self._sweep_sigma(E, Enew, gobs)
        else:
            chg = self._sweep_slow(E, Enew, gobs)
        return Enew, float(chg)

    def _sweep_sigma(self, E, Enew, gobs):
        grid = self.grid
        pad = self.Epad
        nd = len(grid.dims)
        pad[(slice(1, -1),) * nd] = E.reshape(grid.dims)
        for a in range(nd):
            lo = [slice(None)] * nd
            hi = [slice(None)] * nd
            lo[a], hi[a] = 0, 1
            pad[tuple(lo)] = pad[tuple(hi)]
            lo[a], hi[a] = -1, -2
            pad[tuple(lo)] = pad[tuple(hi)]
        return _kernels.sweep_sigma1(
            pad, self.tmp, self.out, gobs, self.interior, E, Enew,
            self.wplane, self.wplane)

    def _sweep_slow(self, E, Enew, gobs):
        ni = self.interior.size
        S = self.S
        best = np.full(ni, np.inf)
        for d in range(self.dirs.shape[0]):
            v = self.dirs[d]
            Jv = self.Jv[:, d, :]
            acc = np.zeros(ni)
            for j in range(S):
                th = 2.0 * np.pi * j / S
                P = self.Xint + (np.cos(th) * v + np.sin(th) * Jv)
                np.clip(P, 0.0, self.maxcoord, out=P)
                base = np.floor(P).astype(np.int64)
                np.minimum(base, self.maxbase, out=base)
                frac = P - base
                flat0 = base @ self.strides
                for bits in self.bits:
                    wt = np.prod(np.where(bits.astype(bool), frac, 1.0 - frac), axis=1)
                    acc += wt * E[flat0 + int(bits @ self.strides)]
            np.minimum(best, acc / S, out=best)
        new_int = np.minimum(gobs[self.interior], best)
        chg = float(np.abs(new_int - E[self.interior]).max()) if ni else 0.0
        Enew[self.interior] = new_int
        return chg


def sweep_step(problem, u):
    """One monotone Jacobi sweep of the field u (Boundary values kept)."""
    grid = problem.grid
    if not isinstance(u, GridField) or not grid.same_geometry(u.grid):
        raise PreconditionError("field must live on the problem grid")
    if not np.array_equal(u.values.ravel()[grid.boundary_flat], problem.phi):
        raise PreconditionError("field must equal the boundary data on Boundary")
    E = problem.effective_field(u)
    Enew, _ = problem.engine().sweep(E)
    return GridField(grid, Enew)


def _initial_field(problem, init, frozen=None):
    grid = problem.grid
    E = np.empty(grid.npts)
    if isinstance(init, GridField):
        if init.grid is not problem.grid and init.grid.dims != problem.grid.dims:
            raise ConfigurationError("init field lives on a different lattice")
        E[:] = init.values.ravel()
    elif isinstance(init, np.ndarray):
        if init.size != grid.npts:
            raise ConfigurationError("init array does not match the lattice")
        E[:] = init.ravel()
    elif init == "minphi":
        dom = np.flatnonzero(grid.mask.ravel() != EXTERIOR)
        # taking the obstacle into the min keeps the start below the fixed
        # point, so the iterates increase monotonically
        E[:] = min(float(problem.phi.min()), float(problem._g_eff[dom].min()))
    elif init == "obstacle":
        E[:] = problem._g_eff
    else:
        raise ConfigurationError("init must be 'minphi', 'obstacle', or a field")
    E[grid.boundary_flat] = problem.phi
    ext = problem._ext_flat
    if frozen is None:
        E[ext] = E[problem._nb_flat[ext]]
    else:
        frozen = np.asarray(frozen, float).ravel()
        if frozen.size != grid.npts:
            raise ConfigurationError("frozen array does not match the lattice")
        E[ext] = frozen[ext]
    return E


def solve_obstacle(problem, init="minphi", frozen=None):
    """Iterate sweeps to the envelope fixed point.

    init may be 'minphi', 'obstacle', or an explicit starting field.  frozen,
    when given, pins Exterior cells to the supplied full-lattice values for
    the whole iteration instead of the nearest-Boundary projection; pocket
    solves use this so stencil taps that leave the pocket read the
    surrounding glue values exactly.

    Returns a report dict: h (the envelope GridField), iterations, residual
    (last sup-norm change), residuals (full history), converged, and the
    audits run on the returned field.
    """
    engine = problem.engine()
    u = _initial_field(problem, init, frozen)
    residuals = []
    converged = False
    iterations = 0
    for iterations in range(1, problem.max_iter + 1):
        u, chg = engine.sweep(u)
        residuals.append(chg)
        if chg <= problem.tol:
            converged = True
            break
    h = GridField(problem.grid, u)
    report = {
        "h": h,
        "iterations": iterations,
        "residual": residuals[-1] if residuals else 0.0,
        "residuals": np.array(residuals),
        "converged": converged,
    }
    report["audits"] = envelope_audits(problem, h)
    return report


def envelope_audits(problem, h):
    """A posteriori checks of an envelope candidate.

    subharmonic: interior jet-margin scan at slack c1*h^2 + c2/D;
    obstacle: h <= g + tol on the domain; boundary: h = phi bitwise.
    """
    grid = problem.grid
    hv = h.values.ravel()
    ctol = CONSISTENCY_C1 * grid.h ** 2 + CONSISTENCY_C2 / problem.directions
    sub = is_field_subharmonic(h, problem.spec, tol=ctol)
    sub["c1"] = CONSISTENCY_C1
    sub["c2"] = CONSISTENCY_C2
    # jets at cells whose stencil spans the staircased lattice boundary see
    # O(1/h) second-difference noise from the boundary-data pixelation; flag
    # when the worst margin sits on that ring so reports can say so
    wp = np.array(sub["worst_point"])
    on_rim = False
    for off in np.ndindex((3,) * len(grid.dims)):
        nb = wp + np.array(off) - 1
        if (nb >= 0).all() and (nb < np.array(grid.dims)).all():
            if grid.mask[tuple(nb)] == BOUNDARY:
                on_rim = True
                break
    sub["worst_on_rim_ring"] = on_rim
    dom = np.flatnonzero(grid.mask.ravel() != EXTERIOR)
    excess = float((hv[dom] - problem.g.values.ravel()[dom]).max())
    return {
        "subharmonic": sub,
        "obstacle": {"pass": bool(excess <= problem.tol), "max_excess": excess,
                     "tol": problem.tol},
        "boundary": {"pass": bool(np.array_equal(hv[grid.boundary_flat], problem.phi))},
    }


def verify_maximality(problem, h, u, jet_tol=0.0):
    """True iff the admissible competitor u stays below h (within tol).

    The competitor must pass the subharmonic audit at jet_tol, stay below
    the obstacle, and stay below the boundary data on Boundary; violations
    raise PreconditionError with the worst point.
    """
    grid = problem.grid
    if not isinstance(u, GridField) or not grid.same_geometry(u.grid):
        raise PreconditionError("competitor must live on the problem grid")
    rep = is_field_subharmonic(u, problem.spec, tol=jet_tol)
    if not rep["pass"]:
        raise PreconditionError(
            "competitor fails the subharmonic audit: margin %.3g at %s"
            % (rep["worst_margin"], rep["worst_point"]))
    uv = u.values.ravel()
    dom = np.flatnonzero(grid.mask.ravel() != EXTERIOR)
    gap = float((uv[dom] - problem._g_eff[dom]).max())
    if gap > problem.tol:
        raise PreconditionError("competitor exceeds the obstacle by %.3g" % gap)
    bgap = float((uv[grid.boundary_flat] - problem.phi).max())
    if bgap > problem.tol:
        raise PreconditionError("competitor exceeds the boundary data by %.3g" % bgap)
    hv = h.values.ravel()
    return bool((uv[dom] <= hv[dom] + problem.tol).all())


def comparison_check(u, v, spec, tol=1e-8, jet_tol=0.0):
    """Interior max of u+v must not beat the boundary max (plus tol).

    u is audited against spec and v against its dual first; an audit
    failure raises PreconditionError naming the worst point.
    """
    grid = u.grid
    if not grid.same_geometry(v.grid):
        raise GridError("u and v live on different grids")
    for name, field, sp in (("u", u, spec), ("v", v, dual_spec(spec))):
        rep = is_field_subharmonic(field, sp, tol=jet_tol)
        if not rep["pass"]:
            raise PreconditionError(
                "%s fails the %s audit: margin %.3g at %s"
                % (name, sp.describe(), rep["worst_margin"], rep["worst_point"]))
    s = u.values.ravel() + v.values.ravel()
    mi = float(s[grid.interior_flat].max())
    mb = float(s[grid.boundary_flat].max())
    return bool(mi <= mb + tol)


def stencil_margins(spec, field, directions=None, samples=16):
    """Membership margins measured with the sweep stencil itself.

    At each Interior cell the rise of the field's least directional circle
    average above the field is divided by the same rise for the reference
    quadratic |x|^2, and the ratio scales that quadratic's exact margin.
    The estimate is linear in the field and nonnegative on every fixed
    point of the sweep, on maxima of admissible fields, and on mollified
    admissible fields, so it stays clean at kinks where finite-difference
    jets see O(1/h) noise.  Obstacle restrictions inside the spec
    contribute their pointwise gap g - field through a min.

    Returns a dict: margins (one per cell of grid.interior_flat, nan where
    skipped), worst_margin, worst_point (multi-index), points, skipped
    (cells whose reference rise was not positive).
    """
    if not isinstance(field, GridField):
        raise ConfigurationError("field must be a GridField")
    grid = field.grid
    bflat = grid.boundary_flat
    extra = []
    _collect_obstacle_arrays(spec, extra)
    floor = float(field.values.ravel()[bflat].min())
    for arr in extra:
        floor = min(floor, float(arr[bflat].min()))
    prob = EnvelopeProblem(spec, field, phi=floor, directions=directions,
                           samples=samples)
    eng = prob.engine()
    interior = grid.interior_flat
    nofloor = np.full(grid.npts, np.inf)
    ext = prob._ext_flat

    def rise(vals):
        E = vals.copy()
        E[ext] = E[prob._nb_flat[ext]]
        resp, _ = eng.sweep_with(E, nofloor)
        return resp[interior] - E[interior]

    pts = np.stack([c.ravel() for c in grid.coordinate_arrays()], axis=1)
    num = rise(field.values.ravel())
    den = rise((pts * pts).sum(axis=1))
    ok = den > 0.0

    prim = spec.core_primitive()
    d = 2 * grid.n
    ni = interior.size
    A = np.broadcast_to(2.0 * np.eye(d), (ni, d, d))
    margin0 = prim.margin_batch(interior, np.zeros(ni), np.zeros((ni, d)), A)

    margins = np.full(ni, np.nan)
    margins[ok] = num[ok] / den[ok] * margin0[ok]
    fv = field.values.ravel()
    for arr in extra:
        gap = (arr - fv)[interior]
        margins[ok] = np.minimum(margins[ok], gap[ok])
    audited = np.flatnonzero(ok)
    if audited.size:
        w = audited[int(np.argmin(margins[audited]))]
        worst = float(margins[w])
        worst_pt = grid.multi_of(interior[w])
    else:
        worst, worst_pt = float("nan"), None
    return {
        "margins": margins,
        "worst_margin": worst,
        "worst_point": worst_pt,
        "points": int(audited.size),
        "skipped": int(ni - audited.size),
    }
