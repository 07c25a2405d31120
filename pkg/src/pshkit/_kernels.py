"""Compiled Jacobi sweep kernels.

All kernels are single-threaded and read only their input field, so sweep
results are bit-reproducible regardless of how many threads the process was
allowed elsewhere.  numba is imported lazily on first use to keep pure
algebra entry points fast.
"""

from __future__ import annotations

import numpy as np

_compiled = {}


def _jit():
    import numba

    return numba.njit(cache=True, fastmath=False)


def _get(name, builder):
    if name not in _compiled:
        _compiled[name] = builder()
    return _compiled[name]


def _build_sweep_2d():
    jit = _jit()

    def sweep_2d(Eold, Enew, gobs, spans, ncol, w):
        w00 = w[0, 0]
        w01 = w[0, 1]
        w02 = w[0, 2]
        w10 = w[1, 0]
        w11 = w[1, 1]
        w12 = w[1, 2]
        w20 = w[2, 0]
        w21 = w[2, 1]
        w22 = w[2, 2]
        maxchg = 0.0
        for t in range(spans.shape[0]):
            r = spans[t, 0]
            c0 = spans[t, 1]
            c1 = spans[t, 2]
            base = r * ncol
            for c in range(c0, c1):
                i = base + c
                acc = (
                    w00 * Eold[i - ncol - 1]
                    + w01 * Eold[i - ncol]
                    + w02 * Eold[i - ncol + 1]
                    + w10 * Eold[i - 1]
                    + w11 * Eold[i]
                    + w12 * Eold[i + 1]
                    + w20 * Eold[i + ncol - 1]
                    + w21 * Eold[i + ncol]
                    + w22 * Eold[i + ncol + 1]
                )
                v = gobs[i]
                if acc < v:
                    v = acc
                d = v - Eold[i]
                if d < 0.0:
                    d = -d
                if d > maxchg:
                    maxchg = d
                Enew[i] = v
        return maxchg

    return jit(sweep_2d)


def _build_sweep_offsets():
    jit = _jit()

    def sweep_offsets(Eold, Enew, gobs, pts, offs, wts):
        # offs/wts: (ndir, ntap) flattened-lattice offsets and weights;
        # the update takes the min over directions of the tap sums
        ndir, ntap = offs.shape
        maxchg = 0.0
        for t in range(pts.shape[0]):
            i = pts[t]
            best = np.inf
            for d in range(ndir):
                acc = 0.0
                for k in range(ntap):
                    acc += wts[d, k] * Eold[i + offs[d, k]]
                if acc < best:
                    best = acc
            v = gobs[i]
            if best < v:
                v = best
            dlt = v - Eold[i]
            if dlt < 0.0:
                dlt = -dlt
            if dlt > maxchg:
                maxchg = dlt
            Enew[i] = v
        return maxchg

    return jit(sweep_offsets)


def _build_sweep_sigma1():
    jit = _jit()

    def sweep_sigma1(Epad, tmp, out, gobs, interior, Eold, Enew, w1, w2):
        # Epad: field padded by 1 on every axis (edge replicate).
        # stage 1: 9-point circle average over axes (2,3), kept on the full
        # padded range of axes (0,1); stage 2: same average over axes (0,1).
        n0, n1, n2, n3 = out.shape
        for a in range(n0 + 2):
            for b in range(n1 + 2):
                for c in range(n2):
                    for d in range(n3):
                        acc = 0.0
                        for p in range(3):
                            for q in range(3):
                                acc += w2[p, q] * Epad[a, b, c + p, d + q]
                        tmp[a, b, c, d] = acc
        for a in range(n0):
            for b in range(n1):
                for c in range(n2):
                    for d in range(n3):
                        acc = 0.0
                        for p in range(3):
                            for q in range(3):
                                acc += w1[p, q] * tmp[a + p, b + q, c, d]
                        out[a, b, c, d] = acc
        outf = out.reshape(-1)
        maxchg = 0.0
        for t in range(interior.shape[0]):
            i = interior[t]
            v = gobs[i]
            acc = outf[i]
            if acc < v:
                v = acc
            dlt = v - Eold[i]
            if dlt < 0.0:
                dlt = -dlt
            if dlt > maxchg:
                maxchg = dlt
            Enew[i] = v
        return maxchg

    return jit(sweep_sigma1)


def _build_supconv_pairs():
    jit = _jit()

    def supconv_pairs(vals, pts, ks, out):
        # out (nk, m): per slope k, max_j of vals[j] - k*|x_i - x_j|.
        # one shared distance per pair keeps the family monotone in k bit for bit
        m, d = pts.shape
        nk = ks.shape[0]
        for i in range(m):
            for q in range(nk):
                out[q, i] = vals[i]
            for j in range(m):
                s = 0.0
                for a in range(d):
                    df = pts[i, a] - pts[j, a]
                    s += df * df
                dist = np.sqrt(s)
                for q in range(nk):
                    cand = vals[j] - ks[q] * dist
                    if cand > out[q, i]:
                        out[q, i] = cand

    return jit(supconv_pairs)


def sweep_2d(Eold, Enew, gobs, spans, ncol, w):
    return _get("sweep_2d", _build_sweep_2d)(Eold, Enew, gobs, spans, ncol, w)


def supconv_pairs(vals, pts, ks, out):
    _get("supconv_pairs", _build_supconv_pairs)(vals, pts, ks, out)


def sweep_offsets(Eold, Enew, gobs, pts, offs, wts):
    return _get("sweep_offsets", _build_sweep_offsets)(Eold, Enew, gobs, pts, offs, wts)


def sweep_sigma1(Epad, tmp, out, gobs, interior, Eold, Enew, w1, w2):
    return _get("sweep_sigma1", _build_sweep_sigma1)(
        Epad, tmp, out, gobs, interior, Eold, Enew, w1, w2
    )


def interior_spans(mask2d, interior_label):
    """Contiguous interior runs per row: array of (row, col0, col1)."""
    spans = []
    nrow, ncol = mask2d.shape
    for r in range(nrow):
        row = mask2d[r] == interior_label
        c = 0
        while c < ncol:
            if row[c]:
                c0 = c
                while c < ncol and row[c]:
                    c += 1
                spans.append((r, c0, c))
            else:
                c += 1
    return np.asarray(spans, dtype=np.int64).reshape(-1, 3)
