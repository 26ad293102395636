import math

import numpy as np
import pytest

from slotnet.approx import (
    CompositionError,
    IntervalUnion,
    MinimaxPoly,
    RemezError,
    compose_sign,
    dump_poly,
    eval_poly_reference,
    inverse_approx,
    least_squares_poly,
    load_poly,
    relu_from_sign,
    remez,
)

SIGN_DOMAIN = IntervalUnion.symmetric_pair(2.0**-13, 1.0)


# ---------------------------------------------------------------------------
# an independent discrete exchange oracle: Remez restricted to a fixed grid


def grid_exchange_sign(lo, hi, degree, grid_points=1 << 20, iters=60):
    """Best odd approximation of sign on the +-[lo, hi] grid by discrete
    multi-point exchange; returns the levelled error magnitude."""
    t = np.cos(np.pi * np.arange(grid_points) / (grid_points - 1))[::-1]
    xs = (lo + hi) / 2 + (hi - lo) / 2 * t
    hull_hi = hi
    ks = list(range(1, degree + 1, 2))
    A = np.stack([np.cos(k * np.arccos(np.clip(xs / hull_hi, -1, 1))) for k in ks], axis=1)
    nref = len(ks) + 1
    refs = np.linspace(0, grid_points - 1, nref).astype(int)
    E = 0.0
    for _ in range(iters):
        M = np.zeros((nref, nref))
        M[:, :-1] = A[refs]
        M[:, -1] = [(-1) ** i for i in range(nref)]
        sol = np.linalg.solve(M, np.ones(nref))
        E = abs(sol[-1])
        err = 1.0 - A @ sol[:-1]
        # alternating selection of grid extrema
        cand = [0, grid_points - 1]
        d = np.sign(np.diff(err))
        cand += (np.nonzero(d[1:] * d[:-1] < 0)[0] + 1).tolist()
        cand.sort()
        filt = []
        for i in cand:
            if filt and np.sign(err[i]) == np.sign(err[filt[-1]]):
                if abs(err[i]) > abs(err[filt[-1]]):
                    filt[-1] = i
            else:
                filt.append(i)
        while len(filt) > nref:
            if len(filt) - nref == 1:
                filt.pop(0 if abs(err[filt[0]]) < abs(err[filt[-1]]) else -1)
            else:
                j = min(range(len(filt) - 1),
                        key=lambda k: max(abs(err[filt[k]]), abs(err[filt[k + 1]])))
                del filt[j : j + 2]
        new = np.array(filt)
        if np.array_equal(new, refs):
            break
        refs = new
    return float(np.max(np.abs(err)))


class TestRemez:
    def test_cubic_is_exact(self):
        p = remez(lambda x: x**3, IntervalUnion.of((-1.0, 1.0)), 3)
        assert p.achieved_error <= 1e-12
        xs = np.linspace(-1, 1, 101)
        assert np.max(np.abs(eval_poly_reference(p, xs) - xs**3)) <= 1e-12

    def test_sign_deg15_matches_grid_exchange_oracle(self):
        p = remez(np.sign, SIGN_DOMAIN, 15, "odd")
        oracle = grid_exchange_sign(2.0**-13, 1.0, 15)
        assert abs(p.achieved_error - oracle) <= 1e-10

    def test_cosine_window_fit_records_error(self):
        from slotnet.bootpipe import BootParams, build_mod_reducer

        red = build_mod_reducer(BootParams())
        assert red.p_cos.degree == 54
        assert 0.0 < red.p_cos.achieved_error < 1e-10

    def test_equioscillation_at_final_references(self):
        p = remez(np.sign, SIGN_DOMAIN, 15, "odd")
        e = np.sign(p.references) - eval_poly_reference(p, p.references)
        signs = np.sign(e)
        assert np.all(signs[1:] * signs[:-1] < 0)
        mags = np.abs(e)
        assert (mags.max() - mags.min()) / mags.max() <= 1e-6

    def test_odd_parity_coefficients_are_exact_zeros(self):
        p = remez(np.sign, SIGN_DOMAIN, 15, "odd")
        assert np.all(p.coeffs[0::2] == 0.0)

    def test_even_parity(self):
        dom = IntervalUnion.of((-1.0, 1.0))
        p = remez(np.cos, dom, 6, "even")
        assert np.all(p.coeffs[1::2] == 0.0)
        assert p.achieved_error < 1e-4

    def test_degenerate_domain_rejected(self):
        with pytest.raises(ValueError):
            remez(np.sign, IntervalUnion.of((0.5, 0.5)), 3)

    def test_non_convergence_reports_profile(self):
        with pytest.raises(RemezError) as exc:
            remez(np.sign, SIGN_DOMAIN, 15, "odd", max_iter=1, spread_tol=1e-15,
                  grid_per_interval=1 << 10)
        assert exc.value.references is not None

    def test_validate_reproduces_achieved_error(self):
        p = remez(np.sign, SIGN_DOMAIN, 15, "odd")
        assert p.validate(np.sign) == pytest.approx(p.achieved_error, rel=1e-12)


class TestCompositeSign:
    def test_alpha13_stage_degrees(self, sign13):
        assert sign13.stage_degrees == (15, 15, 27)
        assert len(sign13.stages) == 3
        assert all(s.parity == "odd" for s in sign13.stages)

    def test_composed_zero_at_origin(self, sign13):
        assert sign13(0.0) == 0.0

    def test_max_error_on_domain_grid(self, sign13):
        # half of the 2^21 +- grid; odd symmetry makes the negative side identical
        err = sign13.max_error_on(sign13.gap, 1.0, 1 << 20)
        assert err <= 2.0**-13

    def test_antisymmetry_exact(self, sign13, rng):
        x = rng.uniform(sign13.gap, 1.0, 1000)
        assert np.array_equal(sign13(-x), -sign13(x))

    def test_monotone_sandwich_on_domain(self, sign13, rng):
        x = np.linspace(sign13.gap, 1.0, 200001)
        g = sign13(x)
        assert np.all(g >= 1 - 2.0**-13)
        assert np.all(g <= 1 + 2.0**-13)

    def test_other_alpha_searches_degrees(self):
        comp = compose_sign(8)
        assert comp.achieved_error <= 2.0**-8
        assert all(d % 2 == 1 for d in comp.stage_degrees)

    def test_unreachable_alpha_reports_best(self):
        with pytest.raises(CompositionError) as exc:
            compose_sign(12, grid_per_interval=1 << 12, max_stages=1)
        assert exc.value.best_precision_bits is not None


class TestReluFromSign:
    def test_zero(self, sign13):
        assert relu_from_sign(sign13, 0.0) == 0.0

    def test_at_one(self, sign13):
        assert abs(relu_from_sign(sign13, 1.0) - 1.0) <= 2.0**-13 / 2

    def test_mean_precision(self, sign13):
        rng = np.random.default_rng(2024)
        x = rng.uniform(-1, 1, 10**6)
        err = np.abs(relu_from_sign(sign13, x) - np.maximum(x, 0.0))
        assert err.mean() <= 2.0**-16


class TestLeastSquares:
    def test_identity(self):
        p = least_squares_poly(lambda x: x, (-1.0, 1.0), 1)
        xs = np.linspace(-1, 1, 64)
        assert np.max(np.abs(eval_poly_reference(p, xs) - xs)) <= 1e-12

    def test_exp_against_gauss_legendre_oracle(self):
        p = least_squares_poly(np.exp, (-1.0, 1.0), 12)
        # independent oracle: Legendre projection under true Gauss-Legendre
        # nodes (scipy's fast rule; the module uses Chebyshev-node weights)
        from numpy.polynomial import legendre as L
        from scipy.special import roots_legendre

        nodes, w = roots_legendre(10_000)
        fx = np.exp(nodes)
        coeffs = np.array([
            (2 * k + 1) / 2 * np.sum(w * fx * L.legval(nodes, [0] * k + [1]))
            for k in range(13)
        ])
        xs = np.linspace(-1, 1, 1 << 14)
        oracle_max = float(np.max(np.abs(np.exp(xs) - L.legval(xs, coeffs))))
        mine = float(np.max(np.abs(np.exp(xs) - eval_poly_reference(p, xs))))
        assert mine <= oracle_max * (1 + 1e-9) + 1e-15
        assert abs(eval_poly_reference(p, 0.0) - 1.0) <= oracle_max

    def test_residual_orthogonal_to_basis(self):
        from numpy.polynomial import legendre as L
        from scipy.special import roots_legendre

        p = least_squares_poly(np.exp, (-1.0, 1.0), 12)
        nodes, w = roots_legendre(4000)
        resid = np.exp(nodes) - eval_poly_reference(p, nodes)
        for k in range(13):
            ip = float(np.sum(w * resid * L.legval(nodes, [0] * k + [1])))
            assert abs(ip) <= 1e-8

    def test_bad_interval(self):
        with pytest.raises(ValueError):
            least_squares_poly(np.exp, (1.0, -1.0), 3)


class TestInverse:
    def test_fixed_point(self):
        assert inverse_approx(1.0, 3) == 1.0

    def test_half_closed_form(self):
        assert abs(inverse_approx(0.5, 5) - 2.0) <= 2.0 * 0.5**32

    def test_three_halves(self):
        err_bound = abs((1 - 1.5)) ** (2**5) / 1.5
        assert abs(inverse_approx(1.5, 5) - 1 / 1.5) <= err_bound + 1e-15

    def test_domain(self):
        for bad in (0.0, -1.0, 2.0, 2.5):
            with pytest.raises(ValueError):
                inverse_approx(bad, 4)

    def test_error_squares_each_iteration(self):
        a = np.linspace(0.1, 1.9, 37)
        for n in (3, 4, 5):
            e_n = np.abs(inverse_approx(a, n) - 1 / a)
            e_next = np.abs(inverse_approx(a, n + 1) - 1 / a)
            assert np.all(e_next <= e_n**2 * a * (1 + 1e-9) + 1e-15)


class TestEvalReference:
    def test_constant(self):
        p = MinimaxPoly(IntervalUnion.of((-1.0, 1.0)), 0, np.array([3.5]), 0.0)
        assert eval_poly_reference(p, 0.123) == 3.5

    def test_t1_at_half(self):
        p = MinimaxPoly(IntervalUnion.of((-1.0, 1.0)), 1, np.array([0.0, 1.0]), 0.0)
        assert eval_poly_reference(p, 0.5) == pytest.approx(0.5, abs=1e-15)

    def test_against_monomial_horner(self, rng):
        # random polynomial drawn in the monomial basis (poly2cheb is the
        # well-conditioned direction, so both paths stay accurate)
        from numpy.polynomial import chebyshev as C

        mono = rng.standard_normal(28)
        p = MinimaxPoly(IntervalUnion.of((-1.0, 1.0)), 27, C.poly2cheb(mono), 0.0)
        xs = rng.uniform(-1, 1, 1000)
        horner = np.zeros_like(xs)
        for c in mono[::-1]:
            horner = horner * xs + c
        mine = eval_poly_reference(p, xs)
        scale = max(float(np.max(np.abs(horner))), 1.0)
        assert np.max(np.abs(mine - horner)) / scale <= 1e-10

    def test_extrapolation_flagged(self):
        p = MinimaxPoly(IntervalUnion.of((-1.0, 1.0)), 1, np.array([0.0, 1.0]), 0.0)
        with pytest.warns(RuntimeWarning):
            eval_poly_reference(p, 2.0)


class TestSerialization:
    def test_round_trip_exact(self, sign13):
        for st in sign13.stages:
            text = dump_poly(st)
            back = load_poly(text)
            assert back.degree == st.degree
            assert back.parity == st.parity
            assert np.array_equal(back.coeffs, st.coeffs)
            assert back.domain.intervals == st.domain.intervals

    def test_header_shape(self, sign13):
        line = dump_poly(sign13.stages[0]).splitlines()[0]
        deg, parity, n_iv = line.split()
        assert (int(deg), parity, int(n_iv)) == (15, "odd", 2)

    def test_bad_header(self):
        with pytest.raises(ValueError):
            load_poly("3 odd\n")


class TestIntervalUnion:
    def test_invariants(self):
        with pytest.raises(ValueError):
            IntervalUnion.of((1.0, 0.0))
        with pytest.raises(ValueError):
            IntervalUnion.of((0.0, 1.0), (0.5, 2.0))
        with pytest.raises(ValueError):
            IntervalUnion(())

    def test_hull_and_contains(self):
        u = IntervalUnion.of((-2.0, -1.0), (1.0, 2.0))
        assert u.hull == (-2.0, 2.0)
        assert u.contains(1.5) and not u.contains(0.0)
        assert u.is_symmetric()
