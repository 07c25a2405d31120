"""Rectangular lattice domains in R^{2n} with masks, discrete 2-jets, and
plain-text field I/O.

A Grid labels every lattice point Interior (2), Boundary (1), or Exterior
(0).  Interior points carry full central-difference Hessian stencils inside
Interior u Boundary; Boundary is the one-cell collar where Dirichlet data
lives.  Grids and fields are immutable after construction.

Field file format (text, one value per line, row-major with the last axis
fastest):

    #pshgrid v1
    n=<1|2> dims=<d1,...,d2n> h=<spacing> origin=<o1,...,o2n>
    mask=inline|file:<path>
    <value>
    ...

With ``mask=inline`` the value lines are followed by the same number of mask
label lines (0/1/2).  A standalone mask file uses the same header with the
labels as the values.  Structure manifests (almost complex structures, jet
equivalences) are key=value text files whose entries are either literal
constants or paths to component field files:

    #pshmanifest v1
    kind=almost-complex|jet-equivalence
    n=<1|2>
    J[0][1]=-1.0
    k[0][0]=k00.fld
    ...
"""

from __future__ import annotations

import math
import os

import numpy as np
import scipy.ndimage

from .jets import (
    AlmostComplexStructure,
    Jet2,
    JetEquivalence,
    membership_batch,
)

__all__ = [
    "EXTERIOR",
    "BOUNDARY",
    "INTERIOR",
    "GridError",
    "ResolutionError",
    "ParseError",
    "Grid",
    "GridField",
    "build_disc_domain",
    "discrete_jet",
    "discrete_jets_batch",
    "is_field_subharmonic",
    "check_strict_pseudoconvex",
    "read_field",
    "write_field",
    "read_mask",
    "read_label_file",
    "write_mask",
    "nearest_boundary_indices",
    "load_almost_complex",
    "load_jet_equivalence",
]

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2


class GridError(ValueError):
    pass


class ResolutionError(GridError):
    """Domain too coarse: the collar consumes the interior."""


class ParseError(GridError):
    """Malformed field/mask/manifest file; message names file and line."""

    def __init__(self, path, line_no, msg):
        super().__init__("%s:%d: %s" % (path, line_no, msg))
        self.path = str(path)
        self.line_no = line_no


def _hessian_offsets(d):
    """Axis and diagonal-pair offsets used by the central-difference jet."""
    offs = []
    for i in range(d):
        for s in (-1, 1):
            e = [0] * d
            e[i] = s
            offs.append(tuple(e))
    for i in range(d):
        for j in range(i + 1, d):
            for si in (-1, 1):
                for sj in (-1, 1):
                    e = [0] * d
                    e[i] = si
                    e[j] = sj
                    offs.append(tuple(e))
    return offs


class Grid:
    """Lattice discretization of a domain in R^{2n}.

    mask values: 0 Exterior, 1 Boundary, 2 Interior.  Invariants (validated):
    every Interior point's jet stencil stays inside Interior u Boundary, and
    Boundary is exactly the set of non-Interior points adjacent (through the
    same stencil) to Interior.
    """

    def __init__(self, n, origin, h, mask):
        if n not in (1, 2):
            raise GridError("complex dimension must be 1 or 2")
        mask = np.asarray(mask, dtype=np.uint8)
        if mask.ndim != 2 * n:
            raise GridError("mask must have 2n axes")
        if not np.isin(mask, (EXTERIOR, BOUNDARY, INTERIOR)).all():
            raise GridError("mask labels must be 0, 1, or 2")
        origin = np.asarray(origin, dtype=float).reshape(-1)
        if origin.size != 2 * n:
            raise GridError("origin must have 2n components")
        if not h > 0:
            raise GridError("spacing must be positive")
        self.n = int(n)
        self.h = float(h)
        self.origin = origin
        self.origin.flags.writeable = False
        self.dims = tuple(int(d) for d in mask.shape)
        self.mask = mask
        self.mask.flags.writeable = False
        self._validate()
        self._interior_flat = np.flatnonzero(self.mask.ravel() == INTERIOR)
        self._boundary_flat = np.flatnonzero(self.mask.ravel() == BOUNDARY)

    def _validate(self):
        d = 2 * self.n
        inner = self.mask == INTERIOR
        dom = self.mask != EXTERIOR
        adjacent = np.zeros_like(inner)
        for off in _hessian_offsets(d):
            sl_src = tuple(
                slice(max(0, -o), self.dims[a] - max(0, o)) for a, o in enumerate(off)
            )
            sl_dst = tuple(
                slice(max(0, o), self.dims[a] - max(0, -o)) for a, o in enumerate(off)
            )
            # interior points whose stencil leaves the lattice
            edge = inner.copy()
            edge[sl_dst] = False
            if edge.any():
                raise GridError("interior point with stencil outside the lattice")
            ok = np.zeros_like(inner)
            ok[sl_dst] = dom[sl_src]
            if (inner & ~ok).any():
                raise GridError("interior point with stencil touching Exterior")
            adjacent[sl_src] |= inner[sl_dst]
        expect_bnd = adjacent & ~inner
        if not np.array_equal(self.mask == BOUNDARY, expect_bnd):
            raise GridError("boundary must be exactly the non-interior points adjacent to interior")

    @property
    def npts(self):
        return int(np.prod(self.dims))

    @property
    def interior_flat(self):
        return self._interior_flat

    @property
    def boundary_flat(self):
        return self._boundary_flat

    def axes(self):
        return [self.origin[a] + self.h * np.arange(self.dims[a]) for a in range(2 * self.n)]

    def coordinate_arrays(self):
        """2n arrays of shape dims holding each coordinate."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return mesh

    def coords(self, multi):
        return self.origin + self.h * np.asarray(multi, dtype=float)

    def flat_of(self, multi):
        return int(np.ravel_multi_index(tuple(int(i) for i in multi), self.dims))

    def multi_of(self, flat):
        return tuple(int(i) for i in np.unravel_index(int(flat), self.dims))

    def same_geometry(self, other):
        return (
            self.n == other.n
            and self.dims == other.dims
            and self.h == other.h
            and np.array_equal(self.origin, other.origin)
        )

    def __repr__(self):
        return "Grid(n=%d, dims=%s, h=%g)" % (self.n, "x".join(map(str, self.dims)), self.h)


class GridField:
    """Real values attached to a grid; finite on Interior u Boundary.

    Exterior values are ignored by every operation and normalized to 0 so
    files never carry non-finite entries.
    """

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape == (grid.npts,):
            values = values.reshape(grid.dims)
        if values.shape != grid.dims:
            raise GridError("field shape %r does not match grid dims %r" % (values.shape, grid.dims))
        values = values.copy()
        dom = grid.mask != EXTERIOR
        if not np.isfinite(values[dom]).all():
            raise GridError("field has non-finite values on Interior or Boundary")
        values[~dom] = 0.0
        self.grid = grid
        self.values = values
        self.values.flags.writeable = False

    @classmethod
    def from_function(cls, grid, fn):
        """Evaluate fn on stacked coordinates (npts, 2n) -> (npts,)."""
        pts = np.stack([c.ravel() for c in grid.coordinate_arrays()], axis=1)
        return cls(grid, np.asarray(fn(pts), dtype=float).reshape(grid.dims))

    def with_values(self, values):
        return GridField(self.grid, values)

    def at(self, multi):
        return float(self.values[tuple(int(i) for i in multi)])


def build_disc_domain(n, radius, h):
    """Ball domain {|x| < radius} in R^{2n} with a one-cell boundary collar.

    The mask comes from the defining function |x|^2 - radius^2: Interior is
    the sublevel set minus the collar of points whose jet stencil would leave
    the sublevel set; that collar is the Boundary.
    """
    if n not in (1, 2):
        raise GridError("complex dimension must be 1 or 2")
    if not radius > 2 * h:
        raise ResolutionError("radius must exceed 2h (collar consumes the interior)")
    m = int(math.ceil(radius / h - 1e-12))
    dims = (2 * m + 1,) * (2 * n)
    origin = np.full(2 * n, -m * h)
    axes = [origin[a] + h * np.arange(dims[a]) for a in range(2 * n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    phi = sum(c * c for c in mesh) - radius * radius
    inside = phi < 0

    d = 2 * n
    inner = inside.copy()
    for off in _hessian_offsets(d):
        sl_src = tuple(slice(max(0, -o), dims[a] - max(0, o)) for a, o in enumerate(off))
        sl_dst = tuple(slice(max(0, o), dims[a] - max(0, -o)) for a, o in enumerate(off))
        ok = np.zeros_like(inside)
        ok[sl_dst] = inside[sl_src]
        inner &= ok
    adjacent = np.zeros_like(inner)
    for off in _hessian_offsets(d):
        sl_src = tuple(slice(max(0, -o), dims[a] - max(0, o)) for a, o in enumerate(off))
        sl_dst = tuple(slice(max(0, o), dims[a] - max(0, -o)) for a, o in enumerate(off))
        adjacent[sl_src] |= inner[sl_dst]
    mask = np.where(inner, INTERIOR, np.where(adjacent & ~inner, BOUNDARY, EXTERIOR)).astype(np.uint8)

    for a in range(d):
        span = np.unique(np.nonzero(mask == INTERIOR)[a])
        if span.size < 5:
            raise ResolutionError(
                "only %d interior lattice values along axis %d (need 5)" % (span.size, a)
            )
    return Grid(n, origin, h, mask)


def build_box_domain(n, halfwidth, h):
    """Box domain [-halfwidth, halfwidth]^{2n}: the inner lattice box is
    Interior and the stencil-adjacent part of the outermost shell is the
    Boundary.  Shell cells the stencil cannot reach (corners with three or
    more extreme coordinates) are Exterior."""
    if n not in (1, 2):
        raise GridError("complex dimension must be 1 or 2")
    if not halfwidth > 2 * h:
        raise ResolutionError("halfwidth must exceed 2h")
    m = int(round(halfwidth / h))
    d = 2 * n
    dims = (2 * m + 1,) * d
    origin = np.full(d, -m * h)
    inner = np.zeros(dims, dtype=bool)
    core = tuple(slice(1, dims[a] - 1) for a in range(d))
    inner[core] = True
    adjacent = np.zeros_like(inner)
    for off in _hessian_offsets(d):
        sl_src = tuple(slice(max(0, -o), dims[a] - max(0, o)) for a, o in enumerate(off))
        sl_dst = tuple(slice(max(0, o), dims[a] - max(0, -o)) for a, o in enumerate(off))
        adjacent[sl_src] |= inner[sl_dst]
    mask = np.where(inner, INTERIOR, np.where(adjacent, BOUNDARY, EXTERIOR)).astype(np.uint8)
    return Grid(n, origin, h, mask)


def _roll_view(values, off):
    """values sampled at x + off, computed by inverse roll; wrapped entries
    are never read for points whose stencil is in-lattice."""
    out = values
    for a, o in enumerate(off):
        if o:
            out = np.roll(out, -o, axis=a)
    return out


def discrete_jets_batch(field, flat_idx):
    """Stacked central-difference jets (R, P, A) at the given flat indices.

    Callers must ensure every requested point has its stencil inside the
    lattice (Interior always qualifies).
    """
    grid = field.grid
    d = 2 * grid.n
    h = grid.h
    u = field.values
    flat_idx = np.asarray(flat_idx, dtype=int)
    uf = u.ravel()
    R = uf[flat_idx]
    P = np.empty((flat_idx.size, d))
    A = np.empty((flat_idx.size, d, d))

    def shifted(off):
        return _roll_view(u, off).ravel()[flat_idx]

    for i in range(d):
        ep = [0] * d
        ep[i] = 1
        em = [0] * d
        em[i] = -1
        up, um = shifted(ep), shifted(em)
        P[:, i] = (up - um) / (2 * h)
        A[:, i, i] = (up - 2 * R + um) / (h * h)
    for i in range(d):
        for j in range(i + 1, d):
            vals = {}
            for si in (-1, 1):
                for sj in (-1, 1):
                    off = [0] * d
                    off[i] = si
                    off[j] = sj
                    vals[(si, sj)] = shifted(off)
            mixed = (vals[(1, 1)] - vals[(1, -1)] - vals[(-1, 1)] + vals[(-1, -1)]) / (4 * h * h)
            A[:, i, j] = mixed
            A[:, j, i] = mixed
    return R, P, A


def discrete_jet(field, x):
    """Central-difference 2-jet of a field at an Interior point.

    x is a flat index or multi-index.  Exact on quadratics; gradient and
    Hessian errors are O(h^2) on smooth fields.
    """
    grid = field.grid
    if not np.isscalar(x) and not isinstance(x, (int, np.integer)):
        x = grid.flat_of(x)
    x = int(x)
    if grid.mask.ravel()[x] != INTERIOR:
        raise GridError("jets are defined at Interior points only")
    R, P, A = discrete_jets_batch(field, np.array([x]))
    return Jet2(R[0], P[0], A[0])


def is_field_subharmonic(field, spec, tol=0.0):
    """Margin scan of discrete jets at every Interior point.

    Returns a report dict: pass iff the membership margin is >= -tol
    everywhere; reports the argmin point.
    """
    grid = field.grid
    if spec.n != grid.n:
        raise GridError("spec dimension does not match the grid")
    idx = grid.interior_flat
    R, P, A = discrete_jets_batch(field, idx)
    m = membership_batch(spec, idx, R, P, A)
    worst = int(np.argmin(m))
    return {
        "pass": bool(m[worst] >= -tol),
        "worst_margin": float(m[worst]),
        "worst_point": grid.multi_of(idx[worst]),
        "points": int(idx.size),
        "tol": float(tol),
    }


def _stencil_complete_flat(grid):
    """Interior u Boundary points whose full jet stencil stays inside
    Interior u Boundary (Exterior carries no usable values)."""
    d = 2 * grid.n
    dom = grid.mask != EXTERIOR
    ok = dom.copy()
    for off in _hessian_offsets(d):
        sl_src = tuple(slice(max(0, -o), grid.dims[a] - max(0, o)) for a, o in enumerate(off))
        sl_dst = tuple(slice(max(0, o), grid.dims[a] - max(0, -o)) for a, o in enumerate(off))
        nb = np.zeros_like(dom)
        nb[sl_src] = dom[sl_dst]
        ok &= nb
    return np.flatnonzero((dom & ok).ravel())


def check_strict_pseudoconvex(psi, spec, c):
    """True iff the defining field psi has membership margin > c at every
    Interior and Boundary point where the jet stencil can be evaluated.

    Boundary cells whose stencils touch Exterior are skipped (psi carries no
    usable values there); all Interior points qualify by the grid invariant.
    """
    grid = psi.grid
    if spec.n != grid.n:
        raise GridError("spec dimension does not match the grid")
    idx = _stencil_complete_flat(grid)
    R, P, A = discrete_jets_batch(psi, idx)
    m = membership_batch(spec, idx, R, P, A)
    return bool((m > c).all())


def strict_pseudoconvex_margin(psi, spec):
    """Smallest membership margin over all evaluable Interior u Boundary
    points (the quantity compared against c by check_strict_pseudoconvex)."""
    grid = psi.grid
    idx = _stencil_complete_flat(grid)
    R, P, A = discrete_jets_batch(psi, idx)
    m = membership_batch(spec, idx, R, P, A)
    return float(m.min())


def nearest_boundary_indices(grid):
    """For every lattice cell, the multi-index arrays of the nearest
    Boundary cell (Euclidean, grid spacing as sampling)."""
    not_boundary = grid.mask != BOUNDARY
    if not (~not_boundary).any():
        raise GridError("grid has no boundary cells")
    idx = scipy.ndimage.distance_transform_edt(
        not_boundary, sampling=grid.h, return_distances=False, return_indices=True
    )
    return tuple(idx)


# --- file I/O -------------------------------------------------------------

_MAGIC_FIELD = "#pshgrid v1"
_MAGIC_MANIFEST = "#pshmanifest v1"


def _fmt_floats(arr):
    return ",".join(repr(float(v)) for v in arr)


def _header_lines(grid, mask_ref):
    line2 = "n=%d dims=%s h=%s origin=%s" % (
        grid.n,
        ",".join(str(d) for d in grid.dims),
        repr(grid.h),
        _fmt_floats(grid.origin),
    )
    return [_MAGIC_FIELD, line2, "mask=%s" % mask_ref]


def _parse_header(path, lines):
    if len(lines) < 3:
        raise ParseError(path, len(lines), "truncated header")
    if lines[0].strip() != _MAGIC_FIELD:
        raise ParseError(path, 1, "bad magic, expected %r" % _MAGIC_FIELD)
    fields = {}
    for tok in lines[1].split():
        if "=" not in tok:
            raise ParseError(path, 2, "malformed header token %r" % tok)
        k, v = tok.split("=", 1)
        fields[k] = v
    for key in ("n", "dims", "h", "origin"):
        if key not in fields:
            raise ParseError(path, 2, "missing header key %r" % key)
    extra = set(fields) - {"n", "dims", "h", "origin"}
    if extra:
        raise ParseError(path, 2, "unknown header key %r" % sorted(extra)[0])
    try:
        n = int(fields["n"])
        dims = tuple(int(t) for t in fields["dims"].split(","))
        h = float(fields["h"])
        origin = np.array([float(t) for t in fields["origin"].split(",")])
    except ValueError as e:
        raise ParseError(path, 2, "unparsable header value (%s)" % e) from None
    if n not in (1, 2) or len(dims) != 2 * n or len(origin) != 2 * n:
        raise ParseError(path, 2, "inconsistent n/dims/origin")
    if not lines[2].startswith("mask="):
        raise ParseError(path, 3, "expected mask= line")
    mask_ref = lines[2][len("mask=") :].strip()
    if mask_ref != "inline" and not mask_ref.startswith("file:"):
        raise ParseError(path, 3, "mask must be 'inline' or 'file:<path>'")
    return n, dims, h, origin, mask_ref


def _read_lines(path):
    with open(path, "r", encoding="ascii") as f:
        return f.read().splitlines()


def _parse_values(path, lines, start, count, what="value"):
    vals = np.empty(count)
    for i in range(count):
        ln = start + i
        if ln >= len(lines):
            raise ParseError(path, len(lines), "expected %d %s lines, got %d" % (count, what, i))
        try:
            v = float(lines[ln])
        except ValueError:
            raise ParseError(path, ln + 1, "unparsable %s %r" % (what, lines[ln])) from None
        if not math.isfinite(v):
            raise ParseError(path, ln + 1, "non-finite %s %r" % (what, lines[ln]))
        vals[i] = v
    return vals


def write_field(field, path, mask="inline"):
    """Write a field; mask='inline' embeds labels, 'file:<p>' references a
    separately written mask file (not written here)."""
    grid = field.grid
    lines = _header_lines(grid, mask)
    lines += [repr(float(v)) for v in field.values.ravel()]
    if mask == "inline":
        lines += [str(int(v)) for v in grid.mask.ravel()]
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def write_mask(grid, path, labels=None):
    """Standalone mask file: header + one label line per point.

    labels defaults to the grid's own mask; pass an array to store other
    per-point label data (e.g. compact-set membership)."""
    lab = grid.mask if labels is None else np.asarray(labels)
    if lab.shape != grid.dims:
        raise GridError("labels shape does not match grid dims")
    lines = _header_lines(grid, "inline")
    lines += [str(int(v)) for v in lab.ravel()]
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def _read_labels(path, lines, start, count, dims):
    lab = np.empty(count, dtype=np.uint8)
    for i in range(count):
        ln = start + i
        if ln >= len(lines):
            raise ParseError(path, len(lines), "expected %d label lines, got %d" % (count, i))
        t = lines[ln].strip()
        if t not in ("0", "1", "2"):
            raise ParseError(path, ln + 1, "mask label must be 0, 1, or 2, got %r" % t)
        lab[i] = int(t)
    return lab.reshape(dims)


def _check_no_trailer(path, lines, used):
    for ln in range(used, len(lines)):
        if lines[ln].strip():
            raise ParseError(path, ln + 1, "trailing data beyond declared dims")


def read_label_file(path):
    """Read a standalone label file: returns (n, dims, h, origin, labels).

    The same on-disk format serves domain masks (labels are the mask) and
    compact-set masks (label 2 marks membership); no domain validation here.
    """
    lines = _read_lines(path)
    n, dims, h, origin, mask_ref = _parse_header(path, lines)
    if mask_ref != "inline":
        raise ParseError(path, 3, "a mask file cannot reference another mask file")
    count = int(np.prod(dims))
    lab = _read_labels(path, lines, 3, count, dims)
    _check_no_trailer(path, lines, 3 + count)
    return n, dims, h, origin, lab


def read_mask(path):
    """Read a standalone domain-mask file into a validated Grid."""
    n, dims, h, origin, lab = read_label_file(path)
    return Grid(n, origin, h, lab)


def read_field(path):
    """Read a field file (and its mask, inline or referenced)."""
    lines = _read_lines(path)
    n, dims, h, origin, mask_ref = _parse_header(path, lines)
    count = int(np.prod(dims))
    vals = _parse_values(path, lines, 3, count)
    if mask_ref == "inline":
        lab = _read_labels(path, lines, 3 + count, count, dims)
        _check_no_trailer(path, lines, 3 + 2 * count)
        grid = Grid(n, origin, h, lab)
    else:
        mask_path = os.path.join(os.path.dirname(os.path.abspath(path)), mask_ref[len("file:") :])
        grid = read_mask(mask_path)
        _check_no_trailer(path, lines, 3 + count)
        if (grid.n, grid.dims, grid.h) != (n, dims, h) or not np.array_equal(grid.origin, origin):
            raise ParseError(path, 2, "field header disagrees with mask file header")
    return GridField(grid, vals.reshape(dims))


# --- structure manifests ----------------------------------------------------


def _parse_manifest(path):
    lines = _read_lines(path)
    if not lines or lines[0].strip() != _MAGIC_MANIFEST:
        raise ParseError(path, 1, "bad magic, expected %r" % _MAGIC_MANIFEST)
    entries = {}
    meta = {}
    for ln, raw in enumerate(lines[1:], start=2):
        t = raw.strip()
        if not t or t.startswith("#"):
            continue
        if "=" not in t:
            raise ParseError(path, ln, "expected key=value")
        k, v = (s.strip() for s in t.split("=", 1))
        if k in ("kind", "n"):
            meta[k] = v
        else:
            entries[k] = (ln, v)
    for key in ("kind", "n"):
        if key not in meta:
            raise ParseError(path, 0, "missing %r line" % key)
    try:
        n = int(meta["n"])
    except ValueError:
        raise ParseError(path, 0, "n must be an integer") from None
    if n not in (1, 2):
        raise ParseError(path, 0, "n must be 1 or 2")
    return meta["kind"], n, entries


def _resolve_entry(path, ln, value, base_dir, fields_cache):
    """A manifest entry is a literal float or a field-file path."""
    try:
        return float(value), None
    except ValueError:
        pass
    fpath = os.path.join(base_dir, value)
    if not os.path.exists(fpath):
        raise ParseError(path, ln, "entry is neither a number nor an existing field file: %r" % value)
    if fpath not in fields_cache:
        fields_cache[fpath] = read_field(fpath)
    return None, fields_cache[fpath]


def _gather_components(path, entries, spec_keys):
    """Resolve all entries into constants or fields; returns (values, grid).

    spec_keys maps key -> index tuple in the component table."""
    base_dir = os.path.dirname(os.path.abspath(path))
    cache = {}
    grid = None
    comps = {}
    for key, (ln, value) in entries.items():
        if key not in spec_keys:
            raise ParseError(path, ln, "unknown manifest key %r" % key)
        const, field = _resolve_entry(path, ln, value, base_dir, cache)
        if field is not None:
            if grid is None:
                grid = field.grid
            elif not grid.same_geometry(field.grid):
                raise ParseError(path, ln, "component grids disagree for key %r" % key)
        comps[key] = const if field is None else field
    return comps, grid


def _nearest_domain_flat(grid):
    """Flat index of the nearest Interior u Boundary cell, per lattice cell."""
    idx = scipy.ndimage.distance_transform_edt(
        grid.mask == EXTERIOR, return_distances=False, return_indices=True
    )
    return np.ravel_multi_index(tuple(a.ravel() for a in idx), grid.dims)


def _component_array(comps, key, grid, default, fill_flat=None):
    v = comps.get(key, default)
    if isinstance(v, GridField):
        vals = v.values.ravel()
        # exterior cells carry no data (zeroed by GridField); borrow the
        # nearest domain cell so pointwise validation holds lattice-wide
        return vals[fill_flat] if fill_flat is not None else vals
    if grid is None:
        return float(v)
    return np.full(grid.npts, float(v))


def load_almost_complex(path):
    """Load an almost complex structure manifest.

    Keys J[i][j] for 0 <= i, j < 2n; all entries required.  Returns
    (structure, grid) with grid None when every entry is constant.
    """
    kind, n, entries = _parse_manifest(path)
    if kind != "almost-complex":
        raise ParseError(path, 0, "manifest kind must be 'almost-complex'")
    d = 2 * n
    keys = {"J[%d][%d]" % (i, j): (i, j) for i in range(d) for j in range(d)}
    missing = sorted(set(keys) - set(entries))
    if missing:
        raise ParseError(path, 0, "missing entry %r" % missing[0])
    comps, grid = _gather_components(path, entries, keys)
    if grid is None:
        J = np.array([[float(comps["J[%d][%d]" % (i, j)]) for j in range(d)] for i in range(d)])
        return AlmostComplexStructure(J, constant=True), None
    fill = _nearest_domain_flat(grid)
    mats = np.empty((grid.npts, d, d))
    for i in range(d):
        for j in range(d):
            mats[:, i, j] = _component_array(comps, "J[%d][%d]" % (i, j), grid, 0.0, fill)
    return AlmostComplexStructure.from_pointwise(mats), grid


def load_jet_equivalence(path):
    """Load a jet-equivalence manifest.

    Keys: r0, p0[i], A0[i][j], k[i][j], h[i][j], L[a][i][j]; unspecified
    entries default to the identity equivalence.  Returns (equiv, grid).
    """
    kind, n, entries = _parse_manifest(path)
    if kind != "jet-equivalence":
        raise ParseError(path, 0, "manifest kind must be 'jet-equivalence'")
    d = 2 * n
    keys = {"r0": ()}
    for i in range(d):
        keys["p0[%d]" % i] = (i,)
        for j in range(d):
            keys["A0[%d][%d]" % (i, j)] = (i, j)
            keys["k[%d][%d]" % (i, j)] = (i, j)
            keys["h[%d][%d]" % (i, j)] = (i, j)
            for a in range(d):
                keys["L[%d][%d][%d]" % (a, i, j)] = (a, i, j)
    comps, grid = _gather_components(path, entries, keys)
    npts = 1 if grid is None else grid.npts
    fill = None if grid is None else _nearest_domain_flat(grid)
    eye = np.eye(d)

    def tab(shape, default_fn, pattern, index_iter):
        out = np.empty((npts,) + shape)
        for idx in index_iter:
            key = pattern % idx
            default = default_fn(idx)
            col = _component_array(comps, key, grid, default, fill)
            out[(slice(None),) + idx] = col
        return out

    r0 = tab((), lambda i: 0.0, "r0", [()])
    p0 = tab((d,), lambda i: 0.0, "p0[%d]", [(i,) for i in range(d)])
    A0 = tab((d, d), lambda i: 0.0, "A0[%d][%d]", [(i, j) for i in range(d) for j in range(d)])
    k = tab((d, d), lambda i: eye[i], "k[%d][%d]", [(i, j) for i in range(d) for j in range(d)])
    hmat = tab((d, d), lambda i: eye[i], "h[%d][%d]", [(i, j) for i in range(d) for j in range(d)])
    L = tab(
        (d, d, d),
        lambda i: 0.0,
        "L[%d][%d][%d]",
        [(a, i, j) for a in range(d) for i in range(d) for j in range(d)],
    )
    if grid is None:
        eq = JetEquivalence(r0[0], p0[0], A0[0], k[0], hmat[0], L[0], constant=True)
    else:
        eq = JetEquivalence(r0, p0, A0, k, hmat, L, constant=False)
    return eq, grid
