"""Pure-numpy twins of the compiled kernels.

The Irwin-Hall samplers accumulate the uniforms column-by-column in the
same order the compiled loop consumes them, so both backends produce
bit-identical integers from the same bit generator state.
"""

import numpy as np

_CHUNK = 1 << 16


def irwin_hall_histogram(bit_generator, n_draws, n_uniforms, kmax):
    rng = np.random.Generator(bit_generator)
    counts = np.zeros(kmax + 1, dtype=np.int64)
    left = int(n_draws)
    while left:
        c = min(_CHUNK, left)
        left -= c
        u = rng.random((c, n_uniforms))
        s = u[:, 0] - 0.5
        for j in range(1, n_uniforms):
            s += u[:, j] - 0.5
        a = np.abs(np.rint(s)).astype(np.int64)
        np.clip(a, 0, kmax, out=a)
        counts += np.bincount(a, minlength=kmax + 1)
    return counts


def irwin_hall_draws(bit_generator, count, n_uniforms):
    rng = np.random.Generator(bit_generator)
    out = np.empty(int(count), dtype=np.int64)
    done = 0
    while done < count:
        c = min(_CHUNK, int(count) - done)
        u = rng.random((c, n_uniforms))
        s = u[:, 0] - 0.5
        for j in range(1, n_uniforms):
            s += u[:, j] - 0.5
        out[done : done + c] = np.rint(s).astype(np.int64)
        done += c
    return out


def clenshaw_chebyshev(coeffs, x):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b1 = np.zeros_like(x)
    b2 = np.zeros_like(x)
    for k in range(len(coeffs) - 1, 0, -1):
        b1, b2 = 2.0 * x * b1 - b2 + coeffs[k], b1
    return x * b1 - b2 + coeffs[0]
