"""Fused elementwise kernels for the activation channels.

numba compiles the polynomial bookkeeping when available; transcendentals
stay in numpy where they vectorize better.  Kernels treat the channel-stacked
value array as (C, m) with the bias already folded into the value channel.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco


@njit(cache=True)
def tanh_fwd(t, v, out, s, sp, spp, order):
    """Channel propagation given t = tanh(value channel + bias)."""
    C, m = v.shape
    for i in range(m):
        ti = t[i]
        si = 1.0 - ti * ti
        out[0, i] = ti
        s[i] = si
        sp[i] = -2.0 * ti * si
        if order == 2:
            spp[i] = -2.0 * si * si + 4.0 * ti * ti * si
    n_dir = C - 1 if order < 2 else 2
    for k in range(1, 1 + n_dir):
        for i in range(m):
            out[k, i] = s[i] * v[k, i]
    if order == 2:
        for i in range(m):
            out[3, i] = s[i] * v[3, i] + sp[i] * v[1, i] * v[1, i]
            out[4, i] = s[i] * v[4, i] + sp[i] * v[2, i] * v[2, i]


@njit(cache=True)
def repu_fwd(v0b, v, out, s, sp, spp, order, p, shifted):
    """Channel propagation for max(0, x)^p given the biased value channel."""
    C, m = v.shape
    pf = float(p)
    for i in range(m):
        x = v0b[i]
        f = 0.0
        si = 0.0
        spi = 0.0
        sppi = 0.0
        if x > 0.0:
            mp = x ** (p - 2)
            f = mp * x * x
            si = pf * mp * x
            spi = pf * (pf - 1.0) * mp
            if order == 2:
                sppi = pf * (pf - 1.0) * (pf - 2.0) * (x ** max(p - 3, 0))
        if shifted:
            y = x - 0.5
            if y > 0.0:
                mp = y ** (p - 2)
                f -= 2.0 * mp * y * y
                si -= 2.0 * pf * mp * y
                spi -= 2.0 * pf * (pf - 1.0) * mp
                if order == 2:
                    sppi -= 2.0 * pf * (pf - 1.0) * (pf - 2.0) * (y ** max(p - 3, 0))
        out[0, i] = f
        s[i] = si
        sp[i] = spi
        if order == 2:
            spp[i] = sppi
    n_dir = C - 1 if order < 2 else 2
    for k in range(1, 1 + n_dir):
        for i in range(m):
            out[k, i] = s[i] * v[k, i]
    if order == 2:
        for i in range(m):
            out[3, i] = s[i] * v[3, i] + sp[i] * v[1, i] * v[1, i]
            out[4, i] = s[i] * v[4, i] + sp[i] * v[2, i] * v[2, i]


@njit(cache=True)
def act_bwd(g, v, s, sp, spp, gz, order):
    C, m = v.shape
    n_dir = C - 1 if order < 2 else 2
    for i in range(m):
        acc = g[0, i] * s[i]
        for k in range(1, 1 + n_dir):
            acc += sp[i] * g[k, i] * v[k, i]
            gz[k, i] = g[k, i] * s[i]
        if order == 2:
            acc += g[3, i] * (sp[i] * v[3, i] + spp[i] * v[1, i] * v[1, i])
            acc += g[4, i] * (sp[i] * v[4, i] + spp[i] * v[2, i] * v[2, i])
            gz[1, i] += g[3, i] * 2.0 * sp[i] * v[1, i]
            gz[2, i] += g[4, i] * 2.0 * sp[i] * v[2, i]
            gz[3, i] = g[3, i] * s[i]
            gz[4, i] = g[4, i] * s[i]
        gz[0, i] = acc
