"""Numeric model of the ciphertext-refresh pipeline.

Stations: mod-raise (message coefficients gain an Irwin-Hall-distributed
integer), the canonical-embedding transforms between coefficient and
slot representations, and approximate modular reduction built from a
cosine fit, repeated double-angle steps, and an arcsine correction.
Everything works on plain vectors in units of the base modulus; no level
accounting happens here.

Approximate modular reduction: with D = K - 1 + eps and w = t / D,

    s(t) = [C(w) - C(-w)] / 2,   C = double-angled cosine fit of
                                 cos(2*pi*(D*w - 1/4) / 2^ell)

so s approximates sin(2*pi*t) and is odd in t exactly (the two branches
swap and negate).  The arcsine-correction polynomial (odd) then returns
t - round(t).  The sine-extraction pairing costs a second cosine
evaluation but makes the whole reduction antisymmetric bit-for-bit,
matching the symmetry of the true residue map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .approx import IntervalUnion, MinimaxPoly, eval_poly_reference, remez

__all__ = [
    "BootParams",
    "ModRaiseResult",
    "simulate_mod_raise",
    "overflow_histogram",
    "coeff_to_slot",
    "slot_to_coeff",
    "ModReducer",
    "build_mod_reducer",
    "approx_mod_reduction",
    "PrecisionReport",
    "bootstrap_precision",
]


@dataclass(frozen=True)
class BootParams:
    K: int = 17
    eps_exp: int = 6
    h: int = 64
    cos_degree: int = 54
    asin_degree: int = 5
    double_angles: int = 2
    q0_exp: int = 60
    n_coeff: int = 1 << 11

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.eps_exp < 2:
            raise ValueError("eps must be below 1/2")
        if self.double_angles < 0:
            raise ValueError("double_angles must be non-negative")
        if self.n_coeff & (self.n_coeff - 1):
            raise ValueError("n_coeff must be a power of two")

    @property
    def eps(self) -> float:
        return 2.0 ** -self.eps_exp

    @property
    def region(self) -> IntervalUnion:
        e = self.eps
        return IntervalUnion(tuple((i - e, i + e) for i in range(-(self.K - 1), self.K)))


@dataclass
class ModRaiseResult:
    values: np.ndarray          # msg + I, in base-modulus units
    overflow: np.ndarray        # integers I
    failures: np.ndarray        # mask: |I| >= K (outside the reduction region)

    @property
    def failure_count(self) -> int:
        return int(self.failures.sum())


def simulate_mod_raise(msg_coeffs, params: BootParams, rng) -> ModRaiseResult:
    """Add the rounded (h+1)-uniform overflow integer to each coefficient.

    ``rng`` is a numpy Generator (or a seed).  Coefficients are expected
    pre-normalized to [-eps, eps].
    """
    msg = np.asarray(msg_coeffs, dtype=np.float64)
    if np.max(np.abs(msg), initial=0.0) > params.eps:
        raise ValueError("message coefficients exceed the eps window")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    I = _kernels.irwin_hall_draws(rng.bit_generator, msg.size, params.h + 1)
    fails = np.abs(I) >= params.K
    return ModRaiseResult(msg + I, I, fails)


def overflow_histogram(h: int, n_draws: int, seed: int, kmax: int = 64) -> np.ndarray:
    """counts[j] = draws with |I| == j (lumped at kmax); Monte-Carlo twin
    of the analytic tails."""
    rng = np.random.default_rng(seed)
    return _kernels.irwin_hall_histogram(rng.bit_generator, n_draws, h + 1, kmax)


# ---------------------------------------------------------------------------
# canonical embedding


@lru_cache(maxsize=8)
def _embedding_matrix(n: int) -> np.ndarray:
    """E[j, k] = zeta^(5^j k), zeta the primitive 2n-th root (n/2 rows)."""
    j = np.arange(n // 2)
    exps = np.empty(n // 2, dtype=np.int64)
    e = 1
    for i in range(n // 2):
        exps[i] = e
        e = (e * 5) % (2 * n)
    zeta = np.exp(1j * np.pi * np.arange(2 * n) / n)
    return zeta[np.outer(exps, np.arange(n)) % (2 * n)]


@lru_cache(maxsize=8)
def _root_exponents(n: int) -> np.ndarray:
    exps = np.empty(n // 2, dtype=np.int64)
    e = 1
    for i in range(n // 2):
        exps[i] = e
        e = (e * 5) % (2 * n)
    return exps


def coeff_to_slot(v, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient vector -> slot representation (evaluations at the odd
    roots and their conjugates).  The two returned vectors carry the full
    information for complex input; for real input the second is the
    conjugate of the first."""
    v = np.asarray(v, dtype=np.complex128)
    if v.shape[-1] != n:
        raise ValueError(f"expected {n} coefficients, got {v.shape[-1]}")
    E = _embedding_matrix(n)
    z1 = v @ E.T
    z2 = v @ np.conj(E).T
    return z1, z2


def slot_to_coeff(z1, z2, n: int) -> np.ndarray:
    """Inverse of :func:`coeff_to_slot` (rows of the embedding are
    orthogonal with squared norm n)."""
    z1 = np.asarray(z1, dtype=np.complex128)
    z2 = np.asarray(z2, dtype=np.complex128)
    if z1.shape[-1] != n // 2 or z2.shape[-1] != n // 2:
        raise ValueError(f"expected {n // 2} slots per half")
    E = _embedding_matrix(n)
    return (z1 @ np.conj(E) + z2 @ E) / n


def _batch_c2s(vmat: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """FFT evaluation of the same transform (used for large trial batches;
    equivalence with the dense matrices is pinned by tests)."""
    idx = _root_exponents(n)
    big = np.zeros(vmat.shape[:-1] + (2 * n,), dtype=np.complex128)
    big[..., :n] = vmat
    spec = np.fft.ifft(big, axis=-1) * (2 * n)
    return spec[..., idx], spec[..., (2 * n - idx) % (2 * n)]


def _batch_s2c(z1: np.ndarray, z2: np.ndarray, n: int) -> np.ndarray:
    idx = _root_exponents(n)
    a = np.zeros(z1.shape[:-1] + (2 * n,), dtype=np.complex128)
    b = np.zeros_like(a)
    a[..., idx] = z1
    b[..., (2 * n - idx) % (2 * n)] = z2
    out = np.fft.fft(a, axis=-1)[..., :n] + np.fft.fft(b, axis=-1)[..., :n]
    return out / n


# ---------------------------------------------------------------------------
# approximate modular reduction


@dataclass
class ModReducer:
    params: BootParams
    p_cos: MinimaxPoly            # over the normalized w domain, hull [-1, 1]
    p_asin: MinimaxPoly           # odd, over the sine band
    y_max: float
    max_error: float = field(default=0.0)

    def sine(self, t):
        w = np.asarray(t, dtype=np.float64) / self._scale
        return (self._chain(w) - self._chain(-w)) / 2.0

    @property
    def _scale(self) -> float:
        return self.params.K - 1 + self.params.eps

    def _chain(self, w):
        y = _kernels.clenshaw_chebyshev(self.p_cos.coeffs, w)
        for _ in range(self.params.double_angles):
            y = 2.0 * y * y - 1.0
        return y

    def reduce(self, t):
        """Approximate t - round(t); meaningful only on the (K, eps) region."""
        return eval_poly_reference(self.p_asin, self.sine(t))

    def reduce_flagged(self, t):
        """(values, flags); flags mark detectable region violations
        (|result| beyond eps plus the measured error)."""
        vals = self.reduce(t)
        flags = np.abs(vals) > self.params.eps + max(self.max_error, 1e-12)
        return vals, flags


def build_mod_reducer(params: BootParams, grid_per_interval: int = 1 << 13) -> ModReducer:
    D = params.K - 1 + params.eps
    ell = params.double_angles
    w_dom = IntervalUnion(
        tuple(((i - params.eps) / D, (i + params.eps) / D)
              for i in range(-(params.K - 1), params.K))
    )

    def f_cos(w):
        return np.cos(2.0 * np.pi * (D * np.asarray(w) - 0.25) / 2.0 ** ell)

    p_cos = remez(f_cos, w_dom, params.cos_degree, "none", grid_per_interval=grid_per_interval)

    # sine band: true amplitude plus the double-angle-amplified cosine error
    amp = (4.0 ** ell) * p_cos.achieved_error
    y_max = math.sin(2.0 * math.pi * params.eps) * (1.0 + 2.0 ** -16) + 2.0 * amp
    y_max = min(y_max, 1.0 - 1e-9)

    def f_asin(y):
        return np.arcsin(np.asarray(y)) / (2.0 * np.pi)

    p_asin = remez(
        f_asin, IntervalUnion.symmetric_pair(y_max * 1e-12, y_max),
        params.asin_degree, "odd", grid_per_interval=grid_per_interval,
    )

    red = ModReducer(params, p_cos, p_asin, y_max)
    # measured worst error over a deterministic region scan
    t = red.params.region.grid(1 << 10)
    err = np.abs(red.reduce(t) - (t - np.round(t)))
    red.max_error = float(err.max())
    return red


@lru_cache(maxsize=4)
def _cached_reducer(params: BootParams) -> ModReducer:
    return build_mod_reducer(params)


def approx_mod_reduction(t, params: BootParams | None = None):
    """Convenience single-shot reduction with a cached reducer."""
    red = _cached_reducer(params or BootParams())
    out = red.reduce(np.asarray(t, dtype=np.float64))
    return out


# ---------------------------------------------------------------------------
# end-to-end precision


@dataclass
class PrecisionReport:
    trials: int
    n_coeff: int
    mean_bits: float
    worst_bits: float
    mean_abs_error: float
    max_abs_error: float
    mod_raise_failures: int
    cos_error: float
    asin_error: float
    reduction_error: float

    def text(self) -> str:
        return (
            f"trials {self.trials}, coefficients {self.n_coeff}\n"
            f"mean precision  {self.mean_bits:.2f} bits "
            f"(mean |err| {self.mean_abs_error:.3e})\n"
            f"worst precision {self.worst_bits:.2f} bits "
            f"(max |err| {self.max_abs_error:.3e})\n"
            f"mod-raise region misses {self.mod_raise_failures}\n"
            f"stage errors: cosine {self.cos_error:.3e}, "
            f"arcsine {self.asin_error:.3e}, reduction {self.reduction_error:.3e}\n"
        )


def bootstrap_precision(params: BootParams, trials: int, rng_seed: int,
                        batch: int = 256) -> PrecisionReport:
    """Recovered-message precision of the full refresh pipeline.

    Per trial: message coefficients -> mod-raise -> coefficient/slot
    transform round-trip (the homomorphic transport of the coefficients
    into slots) -> per-slot modular reduction -> transform round-trip
    back -> compare to the message.  Trials use seeds spawned from
    ``rng_seed`` so any chunking or parallel split reproduces exactly.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    red = _cached_reducer(params)
    n = params.n_coeff
    eps = params.eps
    seeds = np.random.SeedSequence(rng_seed).spawn(trials)
    sum_abs = 0.0
    max_abs = 0.0
    failures = 0
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        msgs = np.empty((b, n))
        ts = np.empty((b, n))
        for i in range(b):
            rng = np.random.default_rng(seeds[done + i])
            msgs[i] = rng.uniform(-eps, eps, n)
            mr = simulate_mod_raise(msgs[i], params, rng)
            ts[i] = mr.values
            failures += mr.failure_count
        z1, z2 = _batch_c2s(ts.astype(np.complex128), n)
        carried = _batch_s2c(z1, z2, n).real
        reduced = red.reduce(carried)
        z1, z2 = _batch_c2s(reduced.astype(np.complex128), n)
        recovered = _batch_s2c(z1, z2, n).real
        err = np.abs(recovered - msgs)
        sum_abs += float(err.sum())
        max_abs = max(max_abs, float(err.max()))
        done += b
    mean_abs = sum_abs / (trials * n)
    return PrecisionReport(
        trials=trials,
        n_coeff=n,
        mean_bits=-math.log2(mean_abs) if mean_abs > 0 else math.inf,
        worst_bits=-math.log2(max_abs) if max_abs > 0 else math.inf,
        mean_abs_error=mean_abs,
        max_abs_error=max_abs,
        mod_raise_failures=failures,
        cos_error=red.p_cos.achieved_error,
        asin_error=red.p_asin.achieved_error,
        reduction_error=red.max_error,
    )
