"""Baby-step/giant-step Chebyshev evaluation on ciphertext vectors.

Polynomials evaluate in the Chebyshev basis throughout.  For an odd
series only odd baby powers are kept for the leaf combinations; the even
powers that scaffold their construction (a product of two odd Chebyshev
terms is even) are transient and never feed a leaf.

Level accounting: for a split with k baby steps the giant chain costs
ceil(log2(k)) + m levels (m = ceil(log2(ceil((d+1)/k))) squarings) and
the leaf coefficient multiplication adds one more when it sits on the
critical path.  ``plan`` dry-runs the shared evaluation routine over all
splits and keeps the lowest depth (ties broken toward fewer
multiplications), so

    ceil(log2(d+1)) <= depth <= ceil(log2(d+1)) + 1

exactly as executed.  Leaf products stay at doubled scale until one
shared rescale, so a run rescales far fewer times than it multiplies; a
pending root would save one more level (``depth_lazy``), which callers
can exploit by folding the final rescale into their next operation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .approx import MinimaxPoly
from .heslots import CipherVec, LevelUnderflowError, SlotEngine

__all__ = ["EvalPlan", "plan", "plan_for_poly", "bsgs_eval", "explain"]


@dataclass(frozen=True)
class EvalPlan:
    degree: int
    parity: str
    baby_steps: int
    giant_steps: int
    depth: int
    depth_lazy: int
    mult_count: int
    mults_cipher: int
    mults_plain: int
    materialized_powers: tuple[int, ...]


def _baby_count(degree: int) -> int:
    return 2 ** math.ceil(math.log2(math.ceil(math.sqrt(degree + 1))))


def _giant_count(degree: int, k: int) -> int:
    if degree < k:
        return 0
    return math.ceil(math.log2(math.ceil((degree + 1) / k)))


class _Tree:
    __slots__ = ("giant", "q", "r", "leaf")

    def __init__(self, giant=None, q=None, r=None, leaf=None):
        self.giant, self.q, self.r, self.leaf = giant, q, r, leaf


def _split(coeffs: np.ndarray, k: int) -> _Tree:
    deg = len(coeffs) - 1
    if deg < k:
        return _Tree(leaf=coeffs)
    g = k
    while g * 2 <= deg:
        g *= 2
    q = np.zeros(deg - g + 1)
    q[0] = coeffs[g]
    q[1:] = 2.0 * coeffs[g + 1 :]
    r = coeffs[:g].copy()
    for i in range(g + 1, deg + 1):
        r[2 * g - i] -= coeffs[i]
    return _Tree(giant=g, q=_split(q, k), r=_split(r, k))


def _leaf_indices(tree: _Tree) -> set[int]:
    if tree.leaf is not None:
        return {i for i in range(1, len(tree.leaf)) if tree.leaf[i] != 0.0}
    return _leaf_indices(tree.q) | _leaf_indices(tree.r)


class _Powers:
    """Chebyshev power cache; builds T_i on demand through the engine ops."""

    def __init__(self, ops, x):
        self.ops = ops
        self.cache = {1: x}

    def get(self, i: int):
        if i in self.cache:
            return self.cache[i]
        ops = self.ops
        if i % 2 == 0:
            h = self.get(i // 2)
            sq = ops.mul(h, h)
            t = ops.add_plain(ops.add(sq, sq), -1.0)
        else:
            a, b = (i + 1) // 2, i // 2
            pa, pb = self.get(a), self.get(b)
            prod = ops.mul_aligned(pa, pb)
            t = ops.sub_aligned(ops.add(prod, prod), self.get(1))
        self.cache[i] = t
        return t


def _const_leaf(tree: _Tree):
    """Value of a leaf that is a bare constant, else None."""
    if tree.leaf is None:
        return None
    if len(tree.leaf) > 1 and np.any(tree.leaf[1:] != 0.0):
        return None
    return float(tree.leaf[0]) if len(tree.leaf) else 0.0


def _eval_tree(tree: _Tree, powers: _Powers, ops):
    if tree.leaf is not None:
        return _eval_leaf(tree.leaf, powers, ops)
    rv = _eval_tree(tree.r, powers, ops)
    qc = _const_leaf(tree.q)
    if qc is not None:
        if qc == 0.0:
            return rv
        t = ops.mul_plain(powers.get(tree.giant), qc)
    else:
        qv = _eval_tree(tree.q, powers, ops)
        t = ops.mul_aligned(qv, powers.get(tree.giant))
    return ops.add_aligned(t, rv)


def _eval_leaf(coeffs: np.ndarray, powers: _Powers, ops):
    acc = None
    for i in range(1, len(coeffs)):
        if coeffs[i] == 0.0:
            continue
        part = ops.mul_plain(powers.get(i), coeffs[i], rescale=False)
        acc = part if acc is None else ops.add_aligned(acc, part)
    if acc is None:
        return ops.const(coeffs[0] if len(coeffs) else 0.0)
    acc = ops.rescale(acc)
    if coeffs[0] != 0.0:
        acc = ops.add_plain(acc, coeffs[0])
    return acc


class _EngineOps:
    def __init__(self, engine: SlotEngine):
        self.e = engine

    def mul(self, a, b):
        return self.e.mul(a, b)

    def mul_aligned(self, a, b):
        a, b = self.e.align(a, b)
        return self.e.mul(a, b)

    def mul_plain(self, a, c, rescale=True):
        return self.e.mul_plain(a, c, rescale=rescale)

    def add(self, a, b):
        return self.e.add(a, b)

    def add_aligned(self, a, b):
        a, b = self.e.align(a, b)
        return self.e.add(a, b)

    def sub_aligned(self, a, b):
        a, b = self.e.align(a, b)
        return self.e.sub(a, b)

    def add_plain(self, a, c):
        return self.e.add_plain(a, c)

    def rescale(self, a):
        return self.e.rescale(a)

    def const(self, c):
        block = np.full(self.e.config.sparse_block, float(c))
        return self.e.pack(block, level=self.e.config.level_budget)


class _CountVal:
    __slots__ = ("level", "pending")

    def __init__(self, level, pending=False):
        self.level = level
        self.pending = pending


class _CountOps:
    """Level/counter twin of the engine ops; used to derive plans."""

    def __init__(self, start_level: int):
        self.start = start_level
        self.mults_cipher = 0
        self.mults_plain = 0
        self.min_level = start_level

    def _consume(self, v: _CountVal) -> _CountVal:
        out = _CountVal(v.level - 1)
        self.min_level = min(self.min_level, out.level)
        return out

    def mul(self, a, b):
        self.mults_cipher += 1
        return self._consume(_CountVal(min(a.level, b.level)))

    mul_aligned = mul

    def mul_plain(self, a, c, rescale=True):
        self.mults_plain += 1
        if rescale:
            return self._consume(a)
        return _CountVal(a.level, pending=True)

    def add(self, a, b):
        return _CountVal(min(a.level, b.level), a.pending or b.pending)

    add_aligned = add

    def sub_aligned(self, a, b):
        return self.add(a, b)

    def add_plain(self, a, c):
        return a

    def rescale(self, a):
        if not a.pending:
            return a
        out = _CountVal(a.level - 1)
        self.min_level = min(self.min_level, out.level)
        return out

    def const(self, c):
        return _CountVal(self.start)


def _pattern_coeffs(degree: int, parity: str) -> np.ndarray:
    # distinct values so tree-split corrections cannot cancel a generic
    # polynomial's coefficients to zero
    c = np.arange(2.0, degree + 3.0)
    if parity == "odd":
        c[0::2] = 0.0
    elif parity == "even":
        c[1::2] = 0.0
    return c


def plan(degree: int, parity: str = "none", baby_steps: int | None = None) -> EvalPlan:
    """Derive the evaluation plan by dry-running the shared BSGS routine.

    ``baby_steps`` overrides the default power-of-two split (used to
    search the split space; the default must match the best split).
    """
    if degree < 1:
        raise ValueError("degree must be at least 1")
    return _plan_for(_pattern_coeffs(degree, parity), degree, parity, baby_steps)


def _plan_for(coeffs: np.ndarray, degree: int, parity: str,
              baby_steps: int | None = None) -> EvalPlan:
    """Dry-run plan; without a forced split, search k for minimal depth,
    breaking ties toward fewer multiplications (the leaf chain sometimes
    beats the sqrt-sized split by a level at the cost of extra products).
    """
    if baby_steps is not None:
        return _plan_single(coeffs, degree, parity, baby_steps)
    # even splits keep odd-index structure intact (an odd giant index would
    # shift leaf coefficients onto even powers)
    step = 2 if parity == "odd" else 1
    best = None
    for k in range(2, max(degree + 1, 3), step):
        cand = _plan_single(coeffs, degree, parity, k)
        key = (cand.depth, cand.mult_count, cand.baby_steps)
        if best is None or key < (best.depth, best.mult_count, best.baby_steps):
            best = cand
    return best


def _plan_single(coeffs: np.ndarray, degree: int, parity: str, k: int) -> EvalPlan:
    m = _giant_count(degree, k)
    tree = _split(np.asarray(coeffs, dtype=float), k)
    start = 64
    ops = _CountOps(start)
    powers = _Powers(ops, _CountVal(start))
    out = ops.rescale(_eval_tree(tree, powers, ops))
    depth = start - out.level
    return EvalPlan(
        degree=degree,
        parity=parity,
        baby_steps=k,
        giant_steps=m,
        depth=depth,
        depth_lazy=depth - 1,
        mult_count=ops.mults_cipher + ops.mults_plain,
        mults_cipher=ops.mults_cipher,
        mults_plain=ops.mults_plain,
        materialized_powers=tuple(sorted(_leaf_indices(tree))),
    )


def plan_for_poly(p: MinimaxPoly) -> EvalPlan:
    """Plan for a concrete polynomial (its zero pattern can beat the
    generic parity pattern, e.g. an odd series carrying one constant)."""
    return _plan_for(np.asarray(p.coeffs, dtype=float), p.degree, p.parity)


def bsgs_eval(engine: SlotEngine, p: MinimaxPoly, x: CipherVec) -> CipherVec:
    """Evaluate p on every slot of x; consumes exactly plan(p).depth levels.

    The polynomial's hull must already be [-1, 1] (fold domain scalings
    into adjacent plaintext constants and use ``MinimaxPoly.normalized``);
    a slot-value argument outside the hull evaluates like any polynomial.
    """
    lo, hi = p.hull
    if abs(lo + 1.0) > 1e-12 or abs(hi - 1.0) > 1e-12:
        raise ValueError(
            f"hull [{lo:g}, {hi:g}] is not [-1, 1]; evaluate p.normalized() on pre-scaled slots"
        )
    x = engine.rescale(x)
    pl = _plan_for(p.coeffs, p.degree, p.parity)
    if x.level < pl.depth:
        raise LevelUnderflowError(
            f"{x.tag}: level {x.level} below evaluation depth {pl.depth} "
            f"(degree {p.degree})",
            tag=x.tag,
            required=pl.depth,
        )
    if p.degree < 1:
        return engine.add_plain(engine.mul_plain(x, 0.0), float(p.coeffs[0]))
    tree = _split(p.coeffs.astype(float), pl.baby_steps)
    ops = _EngineOps(engine)
    powers = _Powers(ops, x)
    out = engine.rescale(_eval_tree(tree, powers, ops))
    # the tree never consumes more than the dry run predicts
    assert x.level - out.level == pl.depth, (x.level, out.level, pl.depth)
    return out


def explain(pl: EvalPlan) -> str:
    rows = [
        f"degree {pl.degree} ({pl.parity})",
        f"baby steps {pl.baby_steps}, giant squarings {pl.giant_steps}",
        f"depth {pl.depth} (lazy {pl.depth_lazy})",
        f"multiplications {pl.mult_count} "
        f"({pl.mults_cipher} cipher, {pl.mults_plain} plain)",
        f"leaf powers {list(pl.materialized_powers)}",
    ]
    return "\n".join(rows)
