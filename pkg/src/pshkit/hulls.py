"""Hulls of compact lattice sets through relative extremal envelopes.

The hull of K inside the domain is read off the relative extremal function
u_K: the largest membership-class field that is at most -1 on K and at most
0 on the boundary.  Cells where u_K stays within theta of -1 cannot be
separated from K by any admissible field, so they form the hull.  A second
hull computed from a strictified-and-mollified copy of u_K tests that the
answer does not depend on the regularity class of the witnesses.
"""

from __future__ import annotations

import numpy as np

from .approximate import smooth_with_budget, strictify
from .envelope import (
    ConfigurationError,
    ConvergenceError,
    EnvelopeProblem,
    solve_obstacle,
)
from .grid import INTERIOR, GridField

__all__ = [
    "CompactSet",
    "relative_extremal",
    "hull",
    "hull_class_agreement",
]


class CompactSet:
    """Nonempty set of Interior lattice cells, stored as a boolean mask."""

    def __init__(self, grid, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape == (grid.npts,):
            mask = mask.reshape(grid.dims)
        if mask.shape != grid.dims:
            raise ConfigurationError(
                "set mask shape %r does not match grid dims %r" % (mask.shape, grid.dims)
            )
        if not mask.any():
            raise ConfigurationError("compact set is empty")
        if (mask & (grid.mask != INTERIOR)).any():
            raise ConfigurationError("compact set must lie in the Interior")
        self.grid = grid
        self.mask = mask.copy()
        self.mask.flags.writeable = False

    @classmethod
    def from_predicate(cls, grid, fn):
        """Cells where fn(points) is true, restricted to the Interior."""
        pts = np.stack([c.ravel() for c in grid.coordinate_arrays()], axis=1)
        keep = np.asarray(fn(pts), dtype=bool).reshape(grid.dims)
        return cls(grid, keep & (grid.mask == INTERIOR))

    @property
    def cells(self):
        return int(self.mask.sum())

    def issubset(self, other):
        return bool((~self.mask | other.mask).all())

    def symmetric_difference(self, other):
        return int((self.mask ^ other.mask).sum())


def relative_extremal(grid, spec, K, tol=1e-8, directions=None, samples=16,
                      max_iter=200000):
    """Envelope with obstacle -1 on K and 0 elsewhere, boundary data 0.

    The result lies in [-1, 0] and equals -1 exactly on K (the constant -1
    is itself a competitor, and the envelope is clamped to the obstacle).
    Non-convergence raises instead of returning a partial field.
    """
    if not isinstance(K, CompactSet):
        raise ConfigurationError("K must be a CompactSet")
    if K.grid is not grid and not (
        grid.same_geometry(K.grid) and np.array_equal(grid.mask, K.grid.mask)
    ):
        raise ConfigurationError("K lives on a different lattice")
    g = np.zeros(grid.dims)
    g[K.mask] = -1.0
    problem = EnvelopeProblem(spec, GridField(grid, g),
                              phi=np.zeros(grid.boundary_flat.size),
                              directions=directions, samples=samples,
                              tol=tol, max_iter=max_iter)
    # start at the constant min(phi, -1): the enclosed region where u_K is
    # identically -1 is then exact from the first sweep, and the iterates
    # rise monotonically only where the extremal is above the floor
    rep = solve_obstacle(problem, init="minphi")
    if not rep["converged"]:
        raise ConvergenceError(
            "relative extremal did not converge within %d sweeps (residual %.3g)"
            % (max_iter, rep["residual"])
        )
    return rep["h"]


def _threshold_hull(grid, values, level):
    return CompactSet(grid, (grid.mask == INTERIOR) & (values <= level))


def hull(grid, spec, K, theta=0.05, u=None, **solver):
    """Cells the class cannot separate from K: {u_K <= -1 + theta}.

    K is always contained in its hull (u_K = -1 there exactly), and the
    hull is monotone in K through the order preservation of the envelope.
    Pass u to reuse an already computed relative extremal of K.
    """
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise ConfigurationError("theta must lie in (0, 1)")
    if u is None:
        u = relative_extremal(grid, spec, K, **solver)
    elif not isinstance(u, GridField) or not grid.same_geometry(u.grid):
        raise ConfigurationError("u must be a GridField on the same lattice")
    return _threshold_hull(grid, u.values, -1.0 + theta)


def hull_class_agreement(grid, spec, K, r, theta=0.05, eps=None, budget=None,
                         **solver):
    """Hull from the raw extremal versus the strictified-smoothed witness.

    The second witness is strictify(u_K, rho, eps) mollified by
    smooth_with_budget at radius r, where rho is the recentered square norm
    normalized to be <= 0 on the domain.  Its hull uses the same theta but
    relative to its own sup over K, which absorbs the uniform part of the
    eps shift.  If the smoothing audit fails the report is marked partial
    and only the raw hull is returned.  K size is always reported: very
    small K (a single cell) has lattice capacity artifacts the continuum
    statement does not constrain.
    """
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise ConfigurationError("theta must lie in (0, 1)")
    eps = theta if eps is None else float(eps)
    u = relative_extremal(grid, spec, K, **solver)
    raw = _threshold_hull(grid, u.values, -1.0 + theta)

    pts = np.stack([c.ravel() for c in grid.coordinate_arrays()], axis=1)
    q = (pts ** 2).sum(axis=1)
    dom = grid.mask.ravel() != 0
    rho = GridField(grid, q - q[dom].max())
    strict = strictify(u, rho, eps)
    c = eps if budget is None else float(budget)
    smoothed = smooth_with_budget(strict, r, spec, c,
                                  directions=solver.get("directions"),
                                  samples=solver.get("samples", 16))
    report = {
        "theta": theta,
        "eps": eps,
        "radius": float(r),
        "budget": c,
        "k_cells": K.cells,
        "cells_raw": raw.cells,
        "smoothing": smoothed["report"],
        "partial": not smoothed["report"]["passed"],
    }
    if report["partial"]:
        report.update(cells_family=None, symmetric_difference=None)
        return {"raw_hull": raw, "family_hull": None, "report": report}

    w = smoothed["field"].values
    sup_k = float(w[K.mask].max())
    family = _threshold_hull(grid, w, sup_k + theta)
    report.update(cells_family=family.cells,
                  symmetric_difference=raw.symmetric_difference(family))
    return {"raw_hull": raw, "family_hull": family, "report": report}
