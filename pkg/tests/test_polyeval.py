import math

import numpy as np
import pytest

from slotnet.approx import IntervalUnion, MinimaxPoly, eval_poly_reference
from slotnet.heslots import LevelUnderflowError, SimConfig, SlotEngine
from slotnet.polyeval import bsgs_eval, explain, plan, plan_for_poly

CFG = SimConfig(n_slots=128, sparse_block=64)


def unit_poly(coeffs, parity="none"):
    coeffs = np.asarray(coeffs, dtype=float)
    return MinimaxPoly(IntervalUnion.of((-1.0, 1.0)), len(coeffs) - 1, coeffs, 0.0, parity)


def random_unit_poly(rng, degree, parity="none"):
    c = rng.standard_normal(degree + 1) / (1 + np.arange(degree + 1))
    if parity == "odd":
        c[0::2] = 0.0
        if degree % 2 == 0:
            c[degree] = 0.0
            c[degree - 1] = 1.0
    c[degree if parity != "odd" or degree % 2 else degree - 1] += 0.5
    return unit_poly(c, parity)


class TestPlan:
    def test_degree_one(self):
        pl = plan(1)
        assert pl.depth == 1
        assert pl.mult_count == 1

    def test_depth_lower_bound(self):
        for d in (1, 2, 5, 12, 15, 27, 31, 54, 63):
            pl = plan(d)
            assert pl.depth >= math.ceil(math.log2(d + 1))
            assert pl.depth <= math.ceil(math.log2(d + 1)) + 1

    def test_deg27_beats_naive_odd_horner(self):
        # naive odd Horner on 13 odd terms: 13 cipher + 13 scalar products
        pl = plan(27, "odd")
        assert pl.mult_count < 26

    def test_deg15_matches_brute_force_split_search(self):
        pl = plan(15, "odd")
        brute = min(plan(15, "odd", baby_steps=k).depth for k in range(2, 16, 2))
        assert pl.depth == brute

    def test_brute_force_all_degrees(self):
        for d in (5, 12, 27, 54):
            pl = plan(d)
            brute = min(plan(d, baby_steps=k).depth for k in range(2, d + 1))
            assert pl.depth == brute

    def test_odd_leaf_powers_are_odd(self):
        for d in (5, 15, 27, 31):
            pl = plan(d, "odd")
            assert all(i % 2 == 1 for i in pl.materialized_powers)

    def test_rejects_degree_zero(self):
        with pytest.raises(ValueError):
            plan(0)

    def test_explain_text(self):
        text = explain(plan(15, "odd"))
        assert "degree 15" in text and "depth" in text


class TestBsgsEval:
    def test_identity_t1(self, rng):
        e = SlotEngine(CFG)
        x = e.pack(rng.uniform(-1, 1, 64))
        p = unit_poly([0.0, 1.0], "odd")
        y = bsgs_eval(e, p, x)
        assert np.allclose(y.block(), x.block(), rtol=0, atol=1e-15)
        assert y.level == x.level - 1

    def test_composite_stage_against_clenshaw(self, sign13, rng):
        e = SlotEngine(SimConfig(n_slots=2048, sparse_block=1024))
        st = sign13.stages[2].normalized()
        x = e.pack(rng.uniform(-1, 1, 1024))
        y = bsgs_eval(e, st, x)
        ref = eval_poly_reference(st, x.block())
        assert np.max(np.abs(y.block() - ref)) <= 1e-9

    def test_level_consumption_equals_plan_depth(self, default_reducer, rng):
        # the window-cosine fit, pre-normalized for evaluation
        e = SlotEngine(CFG)
        p = default_reducer.p_cos.normalized()
        pl = plan_for_poly(p)
        x = e.pack(rng.uniform(-1, 1, 64))
        y = bsgs_eval(e, p, x)
        assert x.level - y.level == pl.depth

    def test_insufficient_level_raises(self, rng):
        e = SlotEngine(CFG)
        p = random_unit_poly(rng, 27, "odd")
        x = e.mod_switch(e.pack(rng.uniform(-1, 1, 64)), 2)
        with pytest.raises(LevelUnderflowError) as exc:
            bsgs_eval(e, p, x)
        assert exc.value.required is not None

    def test_non_unit_hull_rejected(self, sign13, rng):
        e = SlotEngine(CFG)
        x = e.pack(rng.uniform(-1, 1, 64))
        with pytest.raises(ValueError):
            bsgs_eval(e, sign13.stages[1], x)  # band-domain hull, not [-1, 1]

    def test_oracle_equivalence_degree_sweep(self, rng):
        # ~100 random polynomials across degrees 1..63 against Clenshaw
        e = SlotEngine(CFG)
        checked = 0
        for d in range(1, 64):
            variants = ("none", "odd") if d % 2 else ("none", "none")
            for parity in variants:
                p = random_unit_poly(rng, d, parity)
                x = e.pack(rng.uniform(-1, 1, 64))
                y = bsgs_eval(e, p, x)
                ref = eval_poly_reference(p, x.block())
                scale = max(1.0, float(np.max(np.abs(ref))))
                assert np.max(np.abs(y.block() - ref)) / scale <= 1e-9
                checked += 1
        assert checked >= 100

    def test_level_and_counter_determinism(self, rng):
        p = random_unit_poly(rng, 27, "odd")
        block = rng.uniform(-1, 1, 64)
        snaps = []
        levels = []
        for _ in range(2):
            e = SlotEngine(CFG)
            y = bsgs_eval(e, p, e.pack(block))
            snaps.append(e.counter.snapshot())
            levels.append(y.level)
        assert snaps[0] == snaps[1]
        assert levels[0] == levels[1]

    def test_executed_counts_match_plan(self, rng):
        p = random_unit_poly(rng, 27, "odd")
        pl = plan_for_poly(p)
        e = SlotEngine(CFG)
        bsgs_eval(e, p, e.pack(rng.uniform(-1, 1, 64)))
        assert e.counter.mults_cipher == pl.mults_cipher
        assert e.counter.mults_plain == pl.mults_plain
        assert e.counter.mults_cipher + e.counter.mults_plain == pl.mult_count

    def test_even_scaffolds_not_in_leaves(self, rng):
        pl = plan_for_poly(random_unit_poly(rng, 27, "odd"))
        assert all(i % 2 == 1 for i in pl.materialized_powers)
