"""Analytic failure probabilities for the modular-reduction boundary.

The mod-raise overflow integer is modeled as I = round(S) with S the sum
of h+1 independent uniforms on (-1/2, 1/2] (h key coefficients plus one
masking term).  Tails of S come from the Irwin-Hall CDF, evaluated in
exact integer/rational arithmetic: the alternating binomial series
cancels catastrophically in floating point at these depths, while at the
half-integer arguments we need it is an exact finite sum over Z, so the
result is exact down to float underflow.

Two boundary conventions are provided:

* ``"round"`` (default): failure when |I| >= K, i.e. Pr(|S| >= K - 1/2).
* ``"strict"``: failure when |I| > K, i.e. Pr(|S| >= K + 1/2).  This is
  the convention that reproduces the published boundary table exactly;
  the rounded convention lands one K higher across the whole table.
"""

from __future__ import annotations

import math
from fractions import Fraction

__all__ = [
    "tail_prob",
    "tail_prob_exact",
    "choose_K",
    "single_boot_failure",
    "network_failure",
    "boundary_table",
]

CONVENTIONS = ("round", "strict")


def _ih_cdf(w: Fraction, m: int) -> Fraction:
    """CDF at w of the sum of m uniforms on [0, 1], exact."""
    if w <= 0:
        return Fraction(0)
    if w >= m:
        return Fraction(1)
    total = Fraction(0)
    k = 0
    while k <= math.floor(w):
        total += (-1) ** k * math.comb(m, k) * (w - k) ** m
        k += 1
    return total / math.factorial(m)


def tail_prob_exact(h: int, K: int, convention: str = "round",
                    uniforms: int | None = None) -> Fraction:
    """Pr(|I| crosses the K boundary), as an exact rational."""
    if h < 1 or K < 1:
        raise ValueError("h and K must be positive")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    m = uniforms if uniforms is not None else h + 1
    x = Fraction(K) - Fraction(1, 2) if convention == "round" else Fraction(K) + Fraction(1, 2)
    # Pr(|S| >= x) for the centered sum S = W - m/2
    w = Fraction(m, 2) - x
    return 2 * _ih_cdf(w, m)


def tail_prob(h: int, K: int, convention: str = "round",
              uniforms: int | None = None) -> float:
    return float(tail_prob_exact(h, K, convention, uniforms))


def choose_K(h: int, target_p: float, convention: str = "round") -> int:
    """Smallest boundary K with tail_prob(h, K) <= target_p."""
    if not 0 < target_p < 1 and target_p != 1.0:
        raise ValueError("target probability must be in (0, 1]")
    target = Fraction(target_p)
    m = h + 1
    for K in range(1, (m + 3) // 2 + 1):
        if tail_prob_exact(h, K, convention) <= target:
            return K
    raise AssertionError("bounded support guarantees a boundary")


def single_boot_failure(p: float, n: int) -> tuple[float, float]:
    """One refresh fails when any of the 2n coefficients overflows.

    Returns (exact, linear) forms: 1 - (1-p)^(2n) and 2 n p.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("probability out of [0, 1]")
    if n < 1:
        raise ValueError("need at least one slot")
    exact = -math.expm1(2 * n * math.log1p(-p)) if p < 1.0 else 1.0
    return exact, 2.0 * n * p


def network_failure(p: float, n: int, n_boot: int) -> tuple[float, float, float]:
    """Whole-run failure over n_boot refreshes of 2n coefficients each.

    Returns (exact, linear, difference) where exact = 1 - (1-p)^(2 n n_boot)
    and linear = 2 * n_boot * n * p.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("probability out of [0, 1]")
    if n < 1 or n_boot < 1:
        raise ValueError("counts must be positive")
    exact = -math.expm1(2 * n * n_boot * math.log1p(-p)) if p < 1.0 else 1.0
    linear = 2.0 * n_boot * n * p
    return exact, linear, linear - exact


def boundary_table(hamming=(64, 128, 192), target_exps=(23, 30, 40),
                   convention: str = "round") -> dict:
    """K boundaries per (target probability row, Hamming-weight column)."""
    rows = {}
    for t in target_exps:
        rows[t] = {h: choose_K(h, 2.0 ** -t, convention) for h in hamming}
    return rows


def format_boundary_table(hamming=(64, 128, 192), target_exps=(23, 30, 40),
                          convention: str = "round",
                          network: tuple[int, int] | None = None) -> str:
    """Text table in the shape Pr-row x h-column, optionally with the
    whole-network linear failure estimate appended per row."""
    rows = boundary_table(hamming, target_exps, convention)
    head = ["Pr(|I|>=K)"] + [f"h={h}" for h in hamming]
    if network:
        head.append(f"2*Nb*n*p (Nb={network[0]}, n={network[1]})")
    lines = ["  ".join(f"{c:>12}" for c in head)]
    for t in target_exps:
        cells = [f"2^-{t}"] + [str(rows[t][h]) for h in hamming]
        if network:
            n_boot, n = network
            _, linear, _ = network_failure(2.0 ** -t, n, n_boot)
            cells.append(f"{linear:.6e}")
        lines.append("  ".join(f"{c:>12}" for c in cells))
    return "\n".join(lines) + "\n"
