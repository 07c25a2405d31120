"""Pointwise 2-jet algebra for cone subequations.

A 2-jet (r, p, A) collects the value, gradient, and symmetric Hessian of a
function at a point of R^{2n}, with R^{2n} carrying an almost complex
structure J (J^2 = -I).  Subequation specs are closed constraint cones on
jets; membership is reported as a signed margin in eigenvalue units
(>= 0 means the jet satisfies the constraint, the magnitude is the distance
to the constraint boundary in the fiber metric fixed below).

Primitives: PshStandard (smallest eigenvalue of the J-Hermitian part of A),
PshAlmostComplex (same against a spatially varying J), SigmaM (normalized
elementary symmetric polynomials of the complex Hessian eigenvalues up to
degree m).  Wrappers: Dual (margin of the negated jet, negated),
ObstacleRestrict (cap r by an obstacle field), Pullback (affine jet
equivalence applied first).

Margins against a varying J use the J-averaged Euclidean metric
G = (I + J^T J)/2; for orthogonal J this is the identity and the complex
eigenvalues are the paired real spectrum of the Hermitian part.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "Jet2",
    "AlmostComplexStructure",
    "JetEquivalence",
    "SubequationSpec",
    "PshStandard",
    "PshAlmostComplex",
    "SigmaM",
    "Dual",
    "ObstacleRestrict",
    "Pullback",
    "standard_j",
    "hermitian_part",
    "complex_eigenvalues",
    "sigma_l",
    "membership",
    "membership_batch",
    "dual_spec",
    "transform_jet",
    "monotonicity_check",
    "sample_member_jets",
    "run_spec_audits",
]

_J_TOL = 1e-10


def standard_j(n):
    """Block-diagonal standard complex structure on R^{2n}, coordinates
    ordered (x1, y1, ..., xn, yn)."""
    block = np.array([[0.0, -1.0], [1.0, 0.0]])
    J = np.zeros((2 * n, 2 * n))
    for i in range(n):
        J[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = block
    return J


def _symmetrize(A):
    return 0.5 * (A + A.T)


class Jet2:
    """A 2-jet (r, p, A) at a point of R^{2n}, n in {1, 2}.

    A is symmetrized on construction; p has length 2n and A is 2n x 2n.
    """

    __slots__ = ("r", "p", "A")

    def __init__(self, r, p, A):
        p = np.asarray(p, dtype=float).reshape(-1)
        A = np.asarray(A, dtype=float)
        if p.size not in (2, 4):
            raise ValueError("jet dimension must be 2n with n in {1, 2}, got p of length %d" % p.size)
        if A.shape != (p.size, p.size):
            raise ValueError("A must be %dx%d to match p, got %r" % (p.size, p.size, A.shape))
        if not (np.isfinite(r) and np.all(np.isfinite(p)) and np.all(np.isfinite(A))):
            raise ValueError("jet entries must be finite")
        self.r = float(r)
        self.p = p
        self.A = _symmetrize(A)

    @property
    def n(self):
        return self.p.size // 2

    def negate(self):
        return Jet2(-self.r, -self.p, -self.A)

    def add(self, other):
        return Jet2(self.r + other.r, self.p + other.p, self.A + other.A)

    def __repr__(self):
        return "Jet2(r=%.6g, n=%d)" % (self.r, self.n)


def hermitian_part(A, Jx):
    """J-Hermitian part H = (A + Jx^T A Jx)/2 of a symmetric matrix.

    H is symmetric and J-invariant (Jx^T H Jx = H) whenever Jx^2 = -I.
    """
    A = np.asarray(A, dtype=float)
    Jx = np.asarray(Jx, dtype=float)
    if A.shape != Jx.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A and Jx must be square matrices of equal shape")
    if not np.allclose(Jx @ Jx, -np.eye(Jx.shape[0]), atol=_J_TOL):
        raise ValueError("Jx is not an almost complex structure (Jx^2 != -I within 1e-10)")
    return _symmetrize(0.5 * (A + Jx.T @ A @ Jx))


def complex_eigenvalues(H, Jx, tol=1e-8):
    """Eigenvalues of a J-invariant symmetric H as a Hermitian form.

    Returns the n eigenvalues ascending.  They are computed against the
    J-averaged metric G = (I + Jx^T Jx)/2; for orthogonal Jx the real
    spectrum of H is exactly these values with multiplicity two.

    Raises ValueError if H is not Jx-invariant within `tol` (relative).
    """
    H = np.asarray(H, dtype=float)
    Jx = np.asarray(Jx, dtype=float)
    dev = np.linalg.norm(Jx.T @ H @ Jx - H)
    if dev > tol * max(1.0, np.linalg.norm(H)):
        raise ValueError("matrix is not invariant under the complex structure (deviation %.3g)" % dev)
    G = 0.5 * (np.eye(Jx.shape[0]) + Jx.T @ Jx)
    if np.allclose(G, np.eye(G.shape[0]), atol=1e-13):
        lams = np.linalg.eigvalsh(H)
    else:
        lams = scipy.linalg.eigh(H, G, eigvals_only=True)
    return np.sort(lams)[0::2]


def sigma_l(lams, l):
    """Elementary symmetric polynomial sigma_l of the given eigenvalues."""
    lams = np.asarray(lams, dtype=float).reshape(-1)
    n = lams.size
    if not 1 <= l <= n:
        raise ValueError("sigma degree l=%d out of range [1, %d]" % (l, n))
    # coefficient recurrence, walking from the top so each e_j uses the
    # previous stage; n <= 4 so cost is nil
    e = np.zeros(n + 1)
    e[0] = 1.0
    for lam in lams:
        for j in range(n, 0, -1):
            e[j] += lam * e[j - 1]
    return float(e[l])


class AlmostComplexStructure:
    """Field of real 2n x 2n matrices J_x with J_x^2 = -I.

    Either constant (one matrix for every point) or per grid point, indexed
    by the flat C-order lattice index.  Validated within 1e-10 on load.
    """

    def __init__(self, matrices, constant=True):
        arr = np.asarray(matrices, dtype=float)
        if constant:
            arr = arr.reshape((1,) + arr.shape[-2:])
        d = arr.shape[-1]
        if arr.ndim != 3 or arr.shape[-2] != d or d not in (2, 4):
            raise ValueError("expected matrices of shape (npts, 2n, 2n) with n in {1, 2}")
        eye = np.eye(d)
        dev = np.abs(np.einsum("kij,kjl->kil", arr, arr) + eye).max()
        if dev > _J_TOL:
            raise ValueError("J^2 deviates from -I by %.3g (> 1e-10)" % dev)
        self._arr = arr
        self.constant = constant
        self.n = d // 2

    @classmethod
    def standard(cls, n):
        return cls(standard_j(n), constant=True)

    @classmethod
    def from_pointwise(cls, matrices):
        return cls(matrices, constant=False)

    def at(self, x=None):
        """Matrix at flat lattice index x (any x, including None, if constant)."""
        if self.constant:
            return self._arr[0]
        if x is None:
            raise ValueError("point index required for a spatially varying structure")
        return self._arr[int(x)]

    def batch(self, xidx):
        if self.constant:
            return np.broadcast_to(self._arr[0], (len(xidx),) + self._arr.shape[-2:])
        return self._arr[np.asarray(xidx, dtype=int)]


class JetEquivalence:
    """Affine jet equivalence r' = r + r0(x), p' = k(x) p + p0(x),
    A' = h(x) A h(x)^T + L_x(p) + A0(x).

    k and h are invertible matrix fields, L_x is linear from R^{2n} to
    symmetric matrices (stored as a (2n, 2n, 2n) tensor per point,
    L_x(p)[i, j] = sum_a L[a, i, j] p[a]).  Fields are either constant or
    flat-indexed per grid point.
    """

    def __init__(self, r0, p0, A0, k, h, L, constant=True):
        def norm(a, shape):
            a = np.asarray(a, dtype=float)
            if constant:
                a = a.reshape((1,) + shape)
            if a.shape[1:] != shape:
                raise ValueError("component shape %r does not match %r" % (a.shape[1:], shape))
            if not np.all(np.isfinite(a)):
                raise ValueError("equivalence components must be finite")
            return a

        d = np.asarray(k, dtype=float).shape[-1]
        self.d = d
        self.r0 = norm(r0, ())
        self.p0 = norm(p0, (d,))
        self.A0 = norm(A0, (d, d))
        self.k = norm(k, (d, d))
        self.h = norm(h, (d, d))
        self.L = norm(L, (d, d, d))
        self.constant = constant
        conds = [np.linalg.cond(m) for m in self.k] + [np.linalg.cond(m) for m in self.h]
        self.max_condition = float(max(conds))
        if not np.isfinite(self.max_condition):
            raise ValueError("k or h is singular at some point")
        # symmetrize L output and A0 so transformed Hessians stay symmetric
        self.A0 = 0.5 * (self.A0 + self.A0.transpose(0, 2, 1))
        self.L = 0.5 * (self.L + self.L.transpose(0, 1, 3, 2))

    @classmethod
    def identity(cls, n):
        d = 2 * n
        return cls(0.0, np.zeros(d), np.zeros((d, d)), np.eye(d), np.eye(d), np.zeros((d, d, d)))

    @classmethod
    def obstacle_shift(cls, g_values, n):
        """Equivalence (r, p, A) -> (r - g(x), p, A) for an obstacle field."""
        d = 2 * n
        npts = len(g_values)
        eye = np.broadcast_to(np.eye(d), (npts, d, d)).copy()
        return cls(
            -np.asarray(g_values, dtype=float),
            np.zeros((npts, d)),
            np.zeros((npts, d, d)),
            eye,
            eye.copy(),
            np.zeros((npts, d, d, d)),
            constant=False,
        )

    def _at(self, x):
        if self.constant:
            i = 0
        elif x is None:
            raise ValueError("point index required for a spatially varying equivalence")
        else:
            i = int(x)
        return self.r0[i], self.p0[i], self.A0[i], self.k[i], self.h[i], self.L[i]

    def inverse(self):
        """Equivalence undoing this one (pointwise exact inverse)."""
        kinv = np.linalg.inv(self.k)
        hinv = np.linalg.inv(self.h)
        p0i = -np.einsum("xij,xj->xi", kinv, self.p0)
        # L'(q) = -hinv L(kinv q) hinv^T ;  A0' = -hinv (A0 + L(p0')) hinv^T
        Li = -np.einsum("xba,xbij,xci,xdj->xacd", kinv, self.L, hinv, hinv)
        Lp = np.einsum("xaij,xa->xij", self.L, p0i)
        A0i = -np.einsum("xic,xcd,xjd->xij", hinv, self.A0 + Lp, hinv)
        out = JetEquivalence.__new__(JetEquivalence)
        out.d = self.d
        out.r0 = -self.r0
        out.p0 = p0i
        out.A0 = 0.5 * (A0i + A0i.transpose(0, 2, 1))
        out.k = kinv
        out.h = hinv
        out.L = 0.5 * (Li + Li.transpose(0, 1, 3, 2))
        out.constant = self.constant
        out.max_condition = self.max_condition
        return out

    def lipschitz_report(self, grid):
        """Max per-axis difference quotients of k, h, L over the grid lattice.

        Finite bounds are part of the load contract for varying equivalences.
        """
        if self.constant:
            return {"k": 0.0, "h": 0.0, "L": 0.0}
        out = {}
        for name in ("k", "h", "L"):
            comp = getattr(self, name).reshape(grid.dims + getattr(self, name).shape[1:])
            worst = 0.0
            for ax in range(len(grid.dims)):
                d = np.abs(np.diff(comp, axis=ax)).max() / grid.h if comp.shape[ax] > 1 else 0.0
                worst = max(worst, float(d))
            out[name] = worst
        return out


def transform_jet(equiv, x, jet):
    """Apply an affine jet equivalence to a jet at flat lattice index x."""
    r0, p0, A0, k, h, L = equiv._at(x)
    r = jet.r + r0
    p = k @ jet.p + p0
    A = h @ jet.A @ h.T + np.einsum("aij,a->ij", L, jet.p) + A0
    return Jet2(r, p, A)


class SubequationSpec:
    """Base for constraint cones on 2-jets.  Subclasses implement margins."""

    n = None

    def margin(self, x, jet):
        raise NotImplementedError

    def margin_batch(self, xidx, R, P, A):
        # generic fallback: loop (subclasses override with vector paths)
        out = np.empty(len(R))
        for i in range(len(R)):
            xi = None if xidx is None else xidx[i]
            out[i] = self.margin(xi, Jet2(R[i], P[i], A[i]))
        return out

    def core_primitive(self):
        """Innermost Psh/SigmaM primitive (used for sweep geometry)."""
        return self

    def describe(self):
        return type(self).__name__


def _herm_batch(A, J):
    # A: (N, d, d), J: (d, d) or (N, d, d)
    if J.ndim == 2:
        JT_A_J = np.einsum("ji,njk,kl->nil", J, A, J)
    else:
        JT_A_J = np.einsum("nji,njk,nkl->nil", J, A, J)
    H = 0.5 * (A + JT_A_J)
    return 0.5 * (H + H.transpose(0, 2, 1))


class PshStandard(SubequationSpec):
    """Jets whose standard-J Hermitian Hessian part is positive semidefinite."""

    def __init__(self, n):
        if n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        self.n = n
        self._J = standard_j(n)

    def margin(self, x, jet):
        H = hermitian_part(jet.A, self._J)
        return float(np.linalg.eigvalsh(H)[0])

    def margin_batch(self, xidx, R, P, A):
        H = _herm_batch(A, self._J)
        return np.linalg.eigvalsh(H)[:, 0]

    def complex_spectrum_batch(self, A):
        H = _herm_batch(A, self._J)
        return np.linalg.eigvalsh(H)[:, 0::2]

    def describe(self):
        return "psh"


class PshAlmostComplex(SubequationSpec):
    """PshStandard against a supplied (possibly varying) complex structure."""

    def __init__(self, J):
        if not isinstance(J, AlmostComplexStructure):
            raise TypeError("J must be an AlmostComplexStructure")
        self.J = J
        self.n = J.n

    def margin(self, x, jet):
        Jx = self.J.at(x)
        H = hermitian_part(jet.A, Jx)
        lams = complex_eigenvalues(H, Jx)
        return float(lams[0])

    def margin_batch(self, xidx, R, P, A):
        if self.J.constant:
            Jx = self.J.at(None)
            G = 0.5 * (np.eye(2 * self.n) + Jx.T @ Jx)
            H = _herm_batch(A, Jx)
            if np.allclose(G, np.eye(G.shape[0]), atol=1e-13):
                return np.linalg.eigvalsh(H)[:, 0]
            return np.array([scipy.linalg.eigh(h, G, eigvals_only=True)[0] for h in H])
        Js = self.J.batch(xidx)
        H = _herm_batch(A, Js)
        out = np.empty(len(R))
        for i in range(len(R)):
            out[i] = complex_eigenvalues(H[i], Js[i])[0]
        return out

    def describe(self):
        return "psh-j"


_BINOM = {(1, 1): 1.0, (2, 1): 2.0, (2, 2): 1.0}


class SigmaM(SubequationSpec):
    """Normalized sigma_l(complex Hessian eigenvalues) >= 0 for l = 1..m.

    The complex structure and Kahler form are the standard flat ones; the
    margin is min over l <= m of sigma_l(lams) / C(n, l).
    """

    def __init__(self, n, m):
        if n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        if not 1 <= m <= n:
            raise ValueError("m must satisfy 1 <= m <= n")
        self.n = n
        self.m = m
        self._psh = PshStandard(n)

    def margin(self, x, jet):
        H = hermitian_part(jet.A, self._psh._J)
        lams = complex_eigenvalues(H, self._psh._J)
        return min(sigma_l(lams, l) / _BINOM[(self.n, l)] for l in range(1, self.m + 1))

    def margin_batch(self, xidx, R, P, A):
        lams = self._psh.complex_spectrum_batch(A)
        vals = []
        for l in range(1, self.m + 1):
            if l == 1:
                s = lams.sum(axis=1)
            elif l == 2:
                s = lams[:, 0] * lams[:, 1]
            vals.append(s / _BINOM[(self.n, l)])
        return np.min(np.stack(vals, axis=1), axis=1)

    def describe(self):
        return "sigma:%d" % self.m


class Dual(SubequationSpec):
    """Dual cone: jets whose negation is not interior to the inner cone."""

    def __init__(self, inner):
        self.inner = inner
        self.n = inner.n

    def margin(self, x, jet):
        return -self.inner.margin(x, jet.negate())

    def margin_batch(self, xidx, R, P, A):
        return -self.inner.margin_batch(xidx, -R, -P, -A)

    def core_primitive(self):
        return self.inner.core_primitive()

    def describe(self):
        return "dual(%s)" % self.inner.describe()


class ObstacleRestrict(SubequationSpec):
    """Inner cone intersected with r <= g(x) for an obstacle field g."""

    def __init__(self, inner, g_values):
        self.inner = inner
        self.n = inner.n
        self.g = np.asarray(g_values, dtype=float).reshape(-1)

    def margin(self, x, jet):
        if x is None:
            raise ValueError("obstacle specs need a grid point index")
        return min(self.inner.margin(x, jet), float(self.g[int(x)] - jet.r))

    def margin_batch(self, xidx, R, P, A):
        if xidx is None:
            raise ValueError("obstacle specs need grid point indices")
        inner = self.inner.margin_batch(xidx, R, P, A)
        return np.minimum(inner, self.g[np.asarray(xidx, dtype=int)] - R)

    def core_primitive(self):
        return self.inner.core_primitive()

    def describe(self):
        return "obstacle(%s)" % self.inner.describe()


class Pullback(SubequationSpec):
    """Inner cone pulled back through an affine jet equivalence."""

    def __init__(self, inner, equiv):
        self.inner = inner
        self.n = inner.n
        self.equiv = equiv

    def margin(self, x, jet):
        return self.inner.margin(x, transform_jet(self.equiv, x, jet))

    def margin_batch(self, xidx, R, P, A):
        eq = self.equiv
        if eq.constant:
            i = np.zeros(len(R), dtype=int)
        else:
            i = np.asarray(xidx, dtype=int)
        R2 = R + eq.r0[i]
        P2 = np.einsum("xij,xj->xi", eq.k[i], P) + eq.p0[i]
        A2 = (
            np.einsum("xij,xjk,xlk->xil", eq.h[i], A, eq.h[i])
            + np.einsum("xaij,xa->xij", eq.L[i], P)
            + eq.A0[i]
        )
        return self.inner.margin_batch(xidx, R2, P2, A2)

    def core_primitive(self):
        return self.inner.core_primitive()

    def describe(self):
        return "pullback(%s)" % self.inner.describe()


def membership(spec, x, jet):
    """Signed membership margin of a jet; >= 0 means member."""
    return spec.margin(x, jet)


def membership_batch(spec, xidx, R, P, A):
    """Vectorized margins for stacked jets (R: (N,), P: (N,2n), A: (N,2n,2n))."""
    return spec.margin_batch(xidx, np.asarray(R, float), np.asarray(P, float), np.asarray(A, float))


def dual_spec(spec):
    """Dual of a spec; Dual(Dual(spec)) agrees with spec away from margin 0."""
    return Dual(spec)


def _sample_jets(rng, n, count, scale=1.0):
    d = 2 * n
    R = rng.normal(0.0, scale, count)
    P = rng.normal(0.0, scale, (count, d))
    M = rng.normal(0.0, scale, (count, d, d))
    A = 0.5 * (M + M.transpose(0, 2, 1))
    return R, P, A


def sample_member_jets(spec, count, rng, xidx=None, max_rejections=10**6):
    """Rejection-sample `count` jets with nonnegative margin under `spec`.

    Deterministic given the generator state.  Raises RuntimeError if the
    rejection budget is exhausted before enough members are found.
    """
    n = spec.n
    got_R, got_P, got_A = [], [], []
    tried = 0
    batch = max(256, count)
    while sum(len(r) for r in got_R) < count:
        if tried > max_rejections:
            raise RuntimeError("member sampling exhausted %d rejections for %s" % (max_rejections, spec.describe()))
        R, P, A = _sample_jets(rng, n, batch)
        xi = None if xidx is None else np.full(batch, xidx, dtype=int)
        m = spec.margin_batch(xi, R, P, A)
        keep = m >= 0.0
        tried += batch
        got_R.append(R[keep])
        got_P.append(P[keep])
        got_A.append(A[keep])
    R = np.concatenate(got_R)[:count]
    P = np.concatenate(got_P)[:count]
    A = np.concatenate(got_A)[:count]
    return R, P, A


def monotonicity_check(specF, specM, samples=10000, seed=0, xidx=None, slack=1e-12):
    """Sampled audit of F + M subset F on jet sums.

    Draws member jets f of specF and m of specM, checks
    margin(specF, f + m) >= -slack.  Returns a report dict with the
    violation count and the worst offending margin.
    """
    rng = np.random.default_rng(seed)
    Rf, Pf, Af = sample_member_jets(specF, samples, rng, xidx=xidx)
    Rm, Pm, Am = sample_member_jets(specM, samples, rng, xidx=xidx)
    xi = None if xidx is None else np.full(samples, xidx, dtype=int)
    m = specF.margin_batch(xi, Rf + Rm, Pf + Pm, Af + Am)
    bad = m < -slack
    report = {
        "samples": int(samples),
        "violations": int(bad.sum()),
        "worst_margin": float(m.min()),
        "specF": specF.describe(),
        "specM": specM.describe(),
    }
    if bad.any():
        i = int(np.argmin(m))
        report["witness"] = {
            "f": (float(Rf[i]), Pf[i].tolist(), Af[i].tolist()),
            "m": (float(Rm[i]), Pm[i].tolist(), Am[i].tolist()),
        }
    return report


def _psd_bumps(rng, n, count, scale=1.0):
    d = 2 * n
    B = rng.normal(0.0, scale, (count, d, d))
    return np.einsum("xij,xkj->xik", B, B) / d


def run_spec_audits(spec, samples=10000, seed=0, xidx=None):
    """Randomized invariant audits for a spec; returns a dict of reports.

    positivity: margins of member jets do not decrease when a PSD matrix is
    added to A (the cone property F + P subset F), and membership is
    preserved.  double_dual: margins of Dual(Dual(spec)) equal the spec's on
    jets with |margin| > 1e-6.  negativity: margins do not decrease when r
    decreases.
    """
    rng = np.random.default_rng(seed)
    n = spec.n
    xi = None if xidx is None else np.full(samples, xidx, dtype=int)

    reports = {}

    R, P, A = sample_member_jets(spec, samples, rng, xidx=xidx)
    base = spec.margin_batch(xi, R, P, A)
    bump = _psd_bumps(rng, n, samples)
    bumped = spec.margin_batch(xi, R, P, A + bump)
    drop = base - bumped
    reports["positivity"] = {
        "samples": samples,
        "violations": int((drop > 1e-9).sum()),
        "worst_drop": float(drop.max()),
        "members_preserved": bool((bumped >= -1e-12).all()),
    }

    R, P, A = _sample_jets(rng, n, samples)
    m1 = spec.margin_batch(xi, R, P, A)
    m2 = Dual(Dual(spec)).margin_batch(xi, R, P, A)
    decided = np.abs(m1) > 1e-6
    agree = (m1[decided] >= 0) == (m2[decided] >= 0)
    reports["double_dual"] = {
        "samples": samples,
        "decided": int(decided.sum()),
        "agreement": float(agree.mean()) if decided.any() else 1.0,
        "max_margin_gap": float(np.abs(m1 - m2).max()),
    }

    dr = np.abs(rng.normal(0.0, 1.0, samples))
    try:
        lowered = spec.margin_batch(xi, R - dr, P, A)
        reports["negativity"] = {
            "samples": samples,
            "violations": int((lowered < m1 - 1e-12).sum()),
        }
    except ValueError:
        reports["negativity"] = {"samples": 0, "violations": 0}
    return reports
