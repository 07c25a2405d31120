import numpy as np
import pytest

from pshkit.jets import (
    AlmostComplexStructure,
    Dual,
    Jet2,
    JetEquivalence,
    ObstacleRestrict,
    PshAlmostComplex,
    PshStandard,
    Pullback,
    SigmaM,
    complex_eigenvalues,
    dual_spec,
    hermitian_part,
    membership,
    membership_batch,
    monotonicity_check,
    run_spec_audits,
    sample_member_jets,
    sigma_l,
    standard_j,
    transform_jet,
)


def jet(A, r=0.0, p=None):
    A = np.asarray(A, dtype=float)
    if p is None:
        p = np.zeros(A.shape[0])
    return Jet2(r, p, A)


class TestHermitianPart:
    def test_identity_fixed(self):
        J = standard_j(1)
        assert np.allclose(hermitian_part(np.eye(2), J), np.eye(2))

    def test_antiinvariant_killed(self):
        # diag(1,-1) is anti-invariant under the standard structure
        J = standard_j(1)
        assert np.allclose(hermitian_part(np.diag([1.0, -1.0]), J), 0.0)

    def test_n1_is_half_trace(self):
        rng = np.random.default_rng(3)
        J = standard_j(1)
        for _ in range(20):
            A = rng.normal(size=(2, 2))
            A = 0.5 * (A + A.T)
            H = hermitian_part(A, J)
            assert np.allclose(H, 0.5 * np.trace(A) * np.eye(2), atol=1e-12)

    def test_n2_block_invariant(self):
        J = standard_j(2)
        A = np.diag([1.0, 1.0, -1.0, -1.0])
        assert np.allclose(hermitian_part(A, J), A)

    def test_invariance_of_output(self):
        rng = np.random.default_rng(5)
        J = standard_j(2)
        A = rng.normal(size=(4, 4))
        A = 0.5 * (A + A.T)
        H = hermitian_part(A, J)
        assert np.allclose(J.T @ H @ J, H, atol=1e-12)

    def test_rejects_bad_structure(self):
        with pytest.raises(ValueError):
            hermitian_part(np.eye(2), np.eye(2))


class TestComplexEigenvalues:
    def test_identity(self):
        assert np.allclose(complex_eigenvalues(np.eye(4), standard_j(2)), [1.0, 1.0])

    def test_split_signs(self):
        H = np.diag([1.0, 1.0, -1.0, -1.0])
        assert np.allclose(complex_eigenvalues(H, standard_j(2)), [-1.0, 1.0])

    def test_pairing_against_full_spectrum(self):
        rng = np.random.default_rng(11)
        J = standard_j(2)
        for _ in range(25):
            A = rng.normal(size=(4, 4))
            H = hermitian_part(0.5 * (A + A.T), J)
            lams = complex_eigenvalues(H, J)
            full = np.linalg.eigvalsh(H)
            assert np.allclose(np.repeat(lams, 2), full, atol=1e-10)

    def test_non_orthogonal_structure(self):
        # J^2 = -I but J is not orthogonal; the invariant H below has real
        # spectrum {t, 4t} yet a doubled metric eigenvalue 8t/5
        t = 0.7
        J = np.array([[0.0, -2.0], [0.5, 0.0]])
        H = np.diag([t, 4 * t])
        assert np.allclose(J.T @ H @ J, H)
        lams = complex_eigenvalues(H, J)
        assert lams.shape == (1,)
        assert np.allclose(lams, [8 * t / 5])

    def test_rejects_non_invariant(self):
        with pytest.raises(ValueError):
            complex_eigenvalues(np.diag([1.0, 2.0]), standard_j(1))


class TestSigmaL:
    def test_values(self):
        assert sigma_l([2.0, -1.0], 1) == pytest.approx(1.0)
        assert sigma_l([2.0, -1.0], 2) == pytest.approx(-2.0)
        assert sigma_l([1.0, 1.0, 1.0], 2) == pytest.approx(3.0)

    def test_degree_range(self):
        with pytest.raises(ValueError):
            sigma_l([1.0, 2.0], 3)


class TestMembershipMargins:
    def test_psh_n1_values(self):
        spec = PshStandard(1)
        assert membership(spec, None, jet(np.diag([1.0, -2.0]))) == pytest.approx(-0.5)
        assert membership(spec, None, jet([[0.0, 3.0], [3.0, 0.0]])) == pytest.approx(0.0)
        assert membership(spec, None, jet(2 * np.eye(2))) == pytest.approx(2.0)

    def test_sigma_nesting_example(self):
        # complex eigenvalues (-1, 3): mean curvature positive, product negative
        A = np.diag([-1.0, -1.0, 3.0, 3.0])
        assert membership(SigmaM(2, 1), None, jet(A)) == pytest.approx(1.0)
        assert membership(SigmaM(2, 2), None, jet(A)) == pytest.approx(-3.0)

    def test_sigma_top_matches_psh_sign(self):
        rng = np.random.default_rng(7)
        psh = PshStandard(2)
        top = SigmaM(2, 2)
        R, P, A = rng.normal(size=100), rng.normal(size=(100, 4)), rng.normal(size=(100, 4, 4))
        A = 0.5 * (A + A.transpose(0, 2, 1))
        mp = membership_batch(psh, None, R, P, A)
        mt = membership_batch(top, None, R, P, A)
        decided = np.abs(mp) > 1e-9
        assert np.all((mp[decided] >= 0) == (mt[decided] >= 0))

    def test_dual_psh_is_max_eigenvalue(self):
        spec = Dual(PshStandard(1))
        assert membership(spec, None, jet(np.diag([3.0, -1.0]))) == pytest.approx(1.0)
        assert membership(spec, None, jet(-np.eye(2))) == pytest.approx(-1.0)

    def test_double_dual_margin_exact(self):
        rng = np.random.default_rng(13)
        spec = PshStandard(2)
        dd = Dual(Dual(spec))
        for _ in range(50):
            A = rng.normal(size=(4, 4))
            j = jet(0.5 * (A + A.T), r=rng.normal(), p=rng.normal(size=4))
            assert membership(dd, None, j) == membership(spec, None, j)

    def test_obstacle_margin(self):
        g = np.array([1.0, 0.0])
        spec = ObstacleRestrict(PshStandard(1), g)
        j = Jet2(3.0, np.zeros(2), np.eye(2))
        assert membership(spec, 0, j) == pytest.approx(-2.0)  # min(1, 1 - 3)
        j2 = Jet2(0.5, np.zeros(2), np.eye(2))
        assert membership(spec, 0, j2) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            membership(spec, None, j)

    def test_obstacle_dual_is_union(self):
        # dual of the obstacle cone: member iff r <= -g(x) or the jet is in
        # the dual of the inner cone
        g = np.array([0.25])
        spec = Dual(ObstacleRestrict(PshStandard(1), g))
        inner_dual = Dual(PshStandard(1))
        rng = np.random.default_rng(17)
        for _ in range(200):
            A = rng.normal(size=(2, 2))
            j = jet(0.5 * (A + A.T), r=rng.normal(), p=rng.normal(size=2))
            m = membership(spec, 0, j)
            expect = max(membership(inner_dual, None, j), -g[0] - j.r)
            assert m == pytest.approx(expect, abs=1e-12)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(19)
        g = rng.normal(size=8)
        eq = JetEquivalence.identity(1)
        specs = [
            PshStandard(1),
            PshStandard(2),
            SigmaM(2, 1),
            SigmaM(2, 2),
            Dual(SigmaM(2, 2)),
            ObstacleRestrict(PshStandard(1), g),
            Pullback(PshStandard(1), eq),
            PshAlmostComplex(AlmostComplexStructure.standard(2)),
        ]
        for spec in specs:
            d = 2 * spec.n
            N = 40
            R = rng.normal(size=N)
            P = rng.normal(size=(N, d))
            A = rng.normal(size=(N, d, d))
            A = 0.5 * (A + A.transpose(0, 2, 1))
            xidx = rng.integers(0, len(g), size=N)
            got = membership_batch(spec, xidx, R, P, A)
            want = [spec.margin(xidx[i], Jet2(R[i], P[i], A[i])) for i in range(N)]
            assert np.allclose(got, want, atol=1e-12), spec.describe()


class TestAlmostComplexStructure:
    def test_standard_roundtrip(self):
        J = AlmostComplexStructure.standard(2)
        assert J.constant and J.n == 2
        assert np.allclose(J.at(None), standard_j(2))

    def test_non_orthogonal_accepted(self):
        J = AlmostComplexStructure(np.array([[0.0, -2.0], [0.5, 0.0]]))
        assert J.n == 1

    def test_pointwise(self):
        mats = np.stack([standard_j(1), -standard_j(1)])
        J = AlmostComplexStructure.from_pointwise(mats)
        assert np.allclose(J.at(1), -standard_j(1))
        with pytest.raises(ValueError):
            J.at(None)

    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            AlmostComplexStructure(np.eye(2))

    def test_varying_margin(self):
        # flipping J's orientation swaps which anti-invariant part survives
        mats = np.stack([standard_j(1), np.array([[0.0, -2.0], [0.5, 0.0]])])
        spec = PshAlmostComplex(AlmostComplexStructure.from_pointwise(mats))
        A = np.diag([0.7, 2.8])
        m0 = spec.margin(0, jet(A))
        m1 = spec.margin(1, jet(A))
        assert m0 == pytest.approx(1.75)  # half trace
        assert m1 == pytest.approx(8 * 0.7 / 5)


class TestJetEquivalence:
    def random_equiv(self, rng, n=1, npts=None):
        d = 2 * n
        shape = () if npts is None else (npts,)
        k = np.eye(d) + 0.3 * rng.normal(size=shape + (d, d))
        h = np.eye(d) + 0.3 * rng.normal(size=shape + (d, d))
        L = rng.normal(size=shape + (d, d, d))
        A0 = rng.normal(size=shape + (d, d))
        p0 = rng.normal(size=shape + (d,))
        r0 = rng.normal(size=shape)
        return JetEquivalence(r0, p0, A0, k, h, L, constant=npts is None)

    def test_identity(self):
        eq = JetEquivalence.identity(2)
        j = Jet2(1.0, np.arange(4.0), np.eye(4))
        out = transform_jet(eq, None, j)
        assert out.r == j.r and np.allclose(out.p, j.p) and np.allclose(out.A, j.A)

    def test_obstacle_shift(self):
        eq = JetEquivalence.obstacle_shift([1.0, -2.0], n=1)
        j = Jet2(3.0, np.zeros(2), np.eye(2))
        assert transform_jet(eq, 0, j).r == pytest.approx(2.0)
        assert transform_jet(eq, 1, j).r == pytest.approx(5.0)
        assert np.allclose(transform_jet(eq, 0, j).A, j.A)

    def test_inverse_roundtrip_constant(self):
        rng = np.random.default_rng(23)
        for n in (1, 2):
            eq = self.random_equiv(rng, n=n)
            inv = eq.inverse()
            for _ in range(10):
                d = 2 * n
                A = rng.normal(size=(d, d))
                j = Jet2(rng.normal(), rng.normal(size=d), 0.5 * (A + A.T))
                back = transform_jet(inv, None, transform_jet(eq, None, j))
                assert abs(back.r - j.r) < 1e-10
                assert np.allclose(back.p, j.p, atol=1e-10)
                assert np.allclose(back.A, j.A, atol=1e-10)

    def test_inverse_roundtrip_pointwise(self):
        rng = np.random.default_rng(29)
        eq = self.random_equiv(rng, n=1, npts=5)
        inv = eq.inverse()
        for x in range(5):
            A = rng.normal(size=(2, 2))
            j = Jet2(rng.normal(), rng.normal(size=2), 0.5 * (A + A.T))
            back = transform_jet(inv, x, transform_jet(eq, x, j))
            assert abs(back.r - j.r) < 1e-10
            assert np.allclose(back.p, j.p, atol=1e-10)
            assert np.allclose(back.A, j.A, atol=1e-10)

    def test_condition_reported(self):
        eq = JetEquivalence.identity(1)
        assert eq.max_condition == pytest.approx(1.0)
        with pytest.raises(ValueError):
            JetEquivalence(0.0, np.zeros(2), np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), np.zeros((2, 2, 2)))

    def test_pullback_scaling(self):
        # h = 2I scales the Hessian by 4, so margins scale by 4
        eq = JetEquivalence(0.0, np.zeros(2), np.zeros((2, 2)), np.eye(2), 2 * np.eye(2), np.zeros((2, 2, 2)))
        spec = Pullback(PshStandard(1), eq)
        assert membership(spec, None, jet(np.diag([1.0, -2.0]))) == pytest.approx(-2.0)


class TestSamplingAudits:
    def test_member_sampler_margins(self):
        rng = np.random.default_rng(31)
        spec = SigmaM(2, 2)
        R, P, A = sample_member_jets(spec, 200, rng)
        m = membership_batch(spec, None, R, P, A)
        assert (m >= 0).all()

    def test_member_sampler_exhaustion(self):
        rng = np.random.default_rng(37)
        g = np.array([-1e9])
        spec = ObstacleRestrict(PshStandard(1), g)
        with pytest.raises(RuntimeError):
            sample_member_jets(spec, 10, rng, xidx=0, max_rejections=2000)

    def test_monotone_psh_plus_psh(self):
        rep = monotonicity_check(PshStandard(1), PshStandard(1), samples=2000, seed=0)
        assert rep["violations"] == 0

    def test_monotone_sigma_plus_psh(self):
        rep = monotonicity_check(SigmaM(2, 2), PshStandard(2), samples=2000, seed=1)
        assert rep["violations"] == 0

    def test_monotone_self_dual_n1(self):
        # in one complex dimension the Hermitian part is a multiple of the
        # identity, so the cone is its own dual and sums stay inside
        rep = monotonicity_check(PshStandard(1), Dual(PshStandard(1)), samples=2000, seed=2)
        assert rep["violations"] == 0

    def test_monotone_fails_with_dual(self):
        rep = monotonicity_check(PshStandard(2), Dual(PshStandard(2)), samples=2000, seed=2)
        assert rep["violations"] > 0
        assert "witness" in rep

    def test_spec_audits_clean(self):
        for spec in (PshStandard(1), PshStandard(2), SigmaM(2, 1), SigmaM(2, 2), Dual(PshStandard(2))):
            reps = run_spec_audits(spec, samples=2000, seed=5)
            assert reps["positivity"]["violations"] == 0, spec.describe()
            assert reps["positivity"]["members_preserved"]
            assert reps["double_dual"]["agreement"] == 1.0
            assert reps["negativity"]["violations"] == 0

    def test_dual_spec_helper(self):
        spec = dual_spec(PshStandard(1))
        assert isinstance(spec, Dual)
        assert spec.describe() == "dual(psh)"


class TestJetBasics:
    def test_validation(self):
        with pytest.raises(ValueError):
            Jet2(0.0, np.zeros(3), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            Jet2(np.nan, np.zeros(2), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            Jet2(0.0, np.zeros(2), np.zeros((2, 3)))

    def test_symmetrized(self):
        j = Jet2(0.0, np.zeros(2), [[0.0, 2.0], [0.0, 0.0]])
        assert np.allclose(j.A, [[0.0, 1.0], [1.0, 0.0]])

    def test_algebra(self):
        a = Jet2(1.0, [1.0, 0.0], np.eye(2))
        b = Jet2(2.0, [0.0, 1.0], -np.eye(2))
        s = a.add(b)
        assert s.r == 3.0 and np.allclose(s.p, [1.0, 1.0]) and np.allclose(s.A, 0.0)
        assert a.negate().r == -1.0
