"""The five benchmark problems: coefficients, exact solutions, and the data
derived from them (sources, Dirichlet traces, interface jumps).

Sources were derived by computer algebra from the exact solutions and are
hard-coded; the test suite cross-checks them against finite differences of
the exact solutions.  All evaluators are vectorized over (n, 2) point arrays
and pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "ProblemSpec",
    "CoefficientField",
    "make_example",
    "eval_exact",
    "eval_source",
    "eval_jumps",
    "UnknownExampleError",
    "RegionMismatchError",
    "OnDiscontinuityError",
]

_INNER_HALF = 0.5


class UnknownExampleError(ValueError):
    pass


class RegionMismatchError(ValueError):
    pass


class OnDiscontinuityError(ValueError):
    pass


def _pts(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


@dataclass(frozen=True)
class CoefficientField:
    """Diagonal coefficient matrix entries and the derivative entries that the
    strong form needs; `lam`/`lam_max` bound the eigenvalues of A^2 on the
    domain."""

    a11: Callable
    a22: Callable
    da11sq_dx1: Callable
    da22sq_dx2: Callable
    lam: float
    lam_max: float


@dataclass(frozen=True)
class ProblemSpec:
    """One benchmark problem.

    `split` names the line the data branches on: "none", "sign_x2"
    (half-planes), or "square" (inner-square interface).  Region 1 is the
    upper half-plane or the inner square; region 2 the complement.  kappa1 /
    kappa2 are present only when the problem carries interface data.
    """

    id: int
    split: str
    coefficient: CoefficientField
    exact_fn: Callable = field(repr=False)
    grad_fn: Callable = field(repr=False)
    source_fn: Callable = field(repr=False)
    kappa1: Callable | None = field(default=None, repr=False)
    kappa2: Callable | None = field(default=None, repr=False)
    partition_lines: tuple = ()
    line_interface: bool = False  # kappa2 lives on the segment x2 = 0

    @property
    def has_interface(self):
        return self.split == "square"

    @property
    def two_sided(self):
        """True when the solution itself jumps across the interface."""
        return self.kappa1 is not None

    def infer_region(self, x):
        """Region tags from coordinates; raises on the split line where the
        branch is ambiguous."""
        x, _ = _pts(x)
        if self.split == "none":
            return np.ones(x.shape[0], dtype=int)
        if self.split == "sign_x2":
            on_line = x[:, 1] == 0.0
            if np.any(on_line):
                raise OnDiscontinuityError("point lies on the branch line x2 = 0; pass a region")
            return np.where(x[:, 1] > 0.0, 1, 2)
        dist = np.maximum(np.abs(x[:, 0]), np.abs(x[:, 1]))
        if np.any(dist == _INNER_HALF):
            raise OnDiscontinuityError("point lies on the interface; pass a region")
        return np.where(dist < _INNER_HALF, 1, 2)

    def check_region(self, x, region):
        """Validate that points lie in the closure of their named region."""
        x, _ = _pts(x)
        region = np.broadcast_to(np.asarray(region, dtype=int), (x.shape[0],))
        if self.split == "none":
            return region
        if self.split == "sign_x2":
            ok = np.where(region == 1, x[:, 1] >= 0.0, x[:, 1] <= 0.0)
        else:
            dist = np.maximum(np.abs(x[:, 0]), np.abs(x[:, 1]))
            ok = np.where(region == 1, dist <= _INNER_HALF, dist >= _INNER_HALF)
        if not np.all(ok):
            raise RegionMismatchError("point outside the closure of the requested region")
        return region

    def _region(self, x, region):
        if region is None:
            return self.infer_region(x)
        return self.check_region(x, region)

    def exact(self, x, region=None):
        x2d, single = _pts(x)
        out = self.exact_fn(x2d, self._region(x2d, region))
        return float(out[0]) if single else out

    def grad_exact(self, x, region=None):
        x2d, single = _pts(x)
        out = self.grad_fn(x2d, self._region(x2d, region))
        return out[0] if single else out

    def source(self, x, region=None):
        x2d, single = _pts(x)
        out = self.source_fn(x2d, self._region(x2d, region))
        return float(out[0]) if single else out

    def dirichlet(self, x):
        """Boundary data g = trace of the exact solution on Gamma (the outer
        region for interface problems)."""
        x2d, single = _pts(x)
        region = np.full(x2d.shape[0], 2 if self.split != "none" else 1)
        if self.split == "sign_x2":
            region = np.where(x2d[:, 1] >= 0.0, 1, 2)
        out = self.exact_fn(x2d, region)
        return float(out[0]) if single else out

    def a11(self, x, region=None):
        x2d, _ = _pts(x)
        return self.coefficient.a11(x2d, self._region(x2d, region))

    def a22(self, x, region=None):
        x2d, _ = _pts(x)
        return self.coefficient.a22(x2d, self._region(x2d, region))

    def da11sq_dx1(self, x, region=None):
        x2d, _ = _pts(x)
        return self.coefficient.da11sq_dx1(x2d, self._region(x2d, region))

    def da22sq_dx2(self, x, region=None):
        x2d, _ = _pts(x)
        return self.coefficient.da22sq_dx2(x2d, self._region(x2d, region))


# ---------------------------------------------------------------------------
# closed forms


def _example1():
    def exact(x, region):
        return x[:, 0] ** 2 + x[:, 1] ** 2 + np.sin(x[:, 0] + x[:, 1])

    def grad(x, region):
        c = np.cos(x[:, 0] + x[:, 1])
        return np.column_stack([2 * x[:, 0] + c, 2 * x[:, 1] + c])

    def source(x, region):
        return 2.0 * np.sin(x[:, 0] + x[:, 1]) - 4.0

    ones = lambda x, region: np.ones(x.shape[0])
    zeros = lambda x, region: np.zeros(x.shape[0])
    coef = CoefficientField(ones, ones, zeros, zeros, lam=1.0, lam_max=1.0)
    return ProblemSpec(1, "none", coef, exact, grad, source)


def _example2():
    def parts(x):
        p = x[:, 0] + x[:, 1] ** 2
        s, c = np.sin(p), np.cos(p)
        return s, c, np.exp(c)

    def exact(x, region):
        return parts(x)[2]

    def grad(x, region):
        s, _, u = parts(x)
        return np.column_stack([-s * u, -2 * x[:, 1] * s * u])

    def source(x, region):
        s, c, u = parts(x)
        a = 1 + x[:, 0] ** 2
        return 4 * x[:, 0] * a * s * u - a**2 * u * (s**2 - c) + 2 * s * u - 4 * x[:, 1] ** 2 * u * (s**2 - c)

    ones = lambda x, region: np.ones(x.shape[0])
    zeros = lambda x, region: np.zeros(x.shape[0])
    coef = CoefficientField(
        a11=lambda x, region: 1 + x[:, 0] ** 2,
        a22=ones,
        da11sq_dx1=lambda x, region: 4 * x[:, 0] * (1 + x[:, 0] ** 2),
        da22sq_dx2=zeros,
        lam=1.0,
        lam_max=4.0,
    )
    return ProblemSpec(2, "none", coef, exact, grad, source)


def _example3():
    # q = |x2| resolved through the region tag so two-sided limits at x2 = 0
    # stay well defined
    def _q_sgn(x, region):
        sgn = np.where(region == 1, 1.0, -1.0)
        return sgn * x[:, 1], sgn

    def parts(x, region):
        q, _ = _q_sgn(x, region)
        p = x[:, 0] + q**3
        s, c = np.sin(p), np.cos(p)
        return q, s, c, np.exp(c)

    def exact(x, region):
        return parts(x, region)[3]

    def grad(x, region):
        q, s, c, u = parts(x, region)
        _, sgn = _q_sgn(x, region)
        return np.column_stack([-s * u, -3 * q**2 * sgn * s * u])

    def source(x, region):
        q, s, c, u = parts(x, region)
        a = 1 + x[:, 0] ** 2
        return (
            4 * x[:, 0] * a * s * u
            - a**2 * u * (s**2 - c)
            + (6 * q * (1 + q) ** 2 + 6 * q**2 * (1 + q)) * s * u
            + 9 * q**4 * (1 + q) ** 2 * (c - s**2) * u
        )

    coef = CoefficientField(
        a11=lambda x, region: 1 + x[:, 0] ** 2,
        a22=lambda x, region: 1 + np.where(region == 1, x[:, 1], -x[:, 1]),
        da11sq_dx1=lambda x, region: 4 * x[:, 0] * (1 + x[:, 0] ** 2),
        da22sq_dx2=lambda x, region: np.where(region == 1, 1.0, -1.0)
        * 2
        * (1 + np.where(region == 1, x[:, 1], -x[:, 1])),
        lam=1.0,
        lam_max=4.0,
    )
    return ProblemSpec(3, "sign_x2", coef, exact, grad, source, partition_lines=(0.0,))


def _example4(interface=False):
    def exact(x, region):
        pa = x[:, 0] + x[:, 1]
        qb = np.where(region == 1, x[:, 1], -x[:, 1])
        pb = x[:, 0] + qb
        return np.exp(np.cos(pa)) + 0.5 * np.exp(np.cos(pb))

    def grad(x, region):
        pa = x[:, 0] + x[:, 1]
        sgn = np.where(region == 1, 1.0, -1.0)
        pb = x[:, 0] + sgn * x[:, 1]
        ea, eb = np.exp(np.cos(pa)), np.exp(np.cos(pb))
        sa, sb = np.sin(pa), np.sin(pb)
        return np.column_stack([-sa * ea - 0.5 * sb * eb, -sa * ea - 0.5 * sgn * sb * eb])

    def source(x, region):
        pa = x[:, 0] + x[:, 1]
        sa, ca = np.sin(pa), np.cos(pa)
        ea = np.exp(ca)
        upper = 13.0 / 6.0 * ea * (ca - sa**2)
        pb = x[:, 0] - x[:, 1]
        sb, cb = np.sin(pb), np.cos(pb)
        eb = np.exp(cb)
        lower = 5.0 * ea * (ca - sa**2) + 2.5 * eb * (cb - sb**2)
        return np.where(region == 1, upper, lower)

    def kappa2(x, n1):
        # conormal flux jump across x2 = 0, orientation independent
        s = np.sin(x[:, 0])
        e = np.exp(np.cos(x[:, 0]))
        jump_y = (4.0 / 3.0) * s * e  # (A^2 u_y)|upper - (A^2 u_y)|lower at the line
        n1 = np.atleast_2d(n1)
        return n1[:, 1] * jump_y

    ones = lambda x, region: np.ones(x.shape[0])
    zeros = lambda x, region: np.zeros(x.shape[0])
    coef = CoefficientField(
        a11=ones,
        a22=lambda x, region: np.where(region == 1, 2.0 / 3.0, 2.0),
        da11sq_dx1=zeros,
        da22sq_dx2=zeros,
        lam=4.0 / 9.0,
        lam_max=4.0,
    )
    return ProblemSpec(
        4,
        "sign_x2",
        coef,
        exact,
        grad,
        source,
        kappa2=kappa2 if interface else None,
        partition_lines=(0.0,),
        line_interface=interface,
    )


def _example5():
    def _u1(x):
        return 5.0 * np.exp(-(x[:, 0] ** 2 + x[:, 1] ** 2))

    def _u2(x):
        q = x[:, 0] ** 2 / 2 + x[:, 1] ** 2
        return 4.0 * np.exp(np.cos(q) - 1.0)

    def _grad1(x):
        u = _u1(x)
        return np.column_stack([-2 * x[:, 0] * u, -2 * x[:, 1] * u])

    def _grad2(x):
        q = x[:, 0] ** 2 / 2 + x[:, 1] ** 2
        s = np.sin(q)
        e = np.exp(np.cos(q) - 1.0)
        return np.column_stack([-4 * x[:, 0] * s * e, -8 * x[:, 1] * s * e])

    def exact(x, region):
        return np.where(region == 1, _u1(x), _u2(x))

    def grad(x, region):
        g1, g2 = _grad1(x), _grad2(x)
        m = (region == 1)[:, None]
        return np.where(m, g1, g2)

    def source(x, region):
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        f1 = 2000.0 * np.exp(-r2) * (1.0 - r2)
        q = x[:, 0] ** 2 / 2 + x[:, 1] ** 2
        s, c = np.sin(q), np.cos(q)
        e = np.exp(c - 1.0)
        a = 1 + x[:, 0] ** 2
        f2 = (
            4 * (4 * x[:, 0] ** 2 * a * s * e + a**2 * (s * e + x[:, 0] ** 2 * e * (c - s**2)))
            + 8 * s * e
            + 16 * x[:, 1] ** 2 * e * (c - s**2)
        )
        return np.where(region == 1, f1, f2)

    def kappa1(x):
        return _u1(x) - _u2(x)

    def kappa2(x, n1):
        flux1 = 100.0 * _grad1(x)
        a = 1 + x[:, 0] ** 2
        g2 = _grad2(x)
        flux2 = np.column_stack([a**2 * g2[:, 0], g2[:, 1]])
        n1 = np.atleast_2d(n1)
        return np.sum(n1 * (flux1 - flux2), axis=1)

    coef = CoefficientField(
        a11=lambda x, region: np.where(region == 1, 10.0, 1 + x[:, 0] ** 2),
        a22=lambda x, region: np.where(region == 1, 10.0, 1.0),
        da11sq_dx1=lambda x, region: np.where(region == 1, 0.0, 4 * x[:, 0] * (1 + x[:, 0] ** 2)),
        da22sq_dx2=lambda x, region: np.zeros(x.shape[0]),
        lam=1.0,
        lam_max=100.0,
    )
    return ProblemSpec(
        5,
        "square",
        coef,
        exact,
        grad,
        source,
        kappa1=kappa1,
        kappa2=kappa2,
        partition_lines=(-_INNER_HALF, _INNER_HALF),
    )


def make_example(example_id, interface=False):
    """Fully populated problem; `interface` routes Example 4 through the
    line-interface treatment (flux-jump data on x2 = 0)."""
    makers = {1: _example1, 2: _example2, 3: _example3, 5: _example5}
    if example_id == 4:
        return _example4(interface=interface)
    if example_id not in makers:
        raise UnknownExampleError(f"unknown example id {example_id!r}")
    return makers[example_id]()


def eval_exact(spec, x, region=None):
    return spec.exact(x, region)


def eval_source(spec, x, region=None):
    return spec.source(x, region)


def eval_jumps(spec, x, n1):
    """(kappa1, kappa2) at points on the interface with the segment normal n1
    (outward from region 1)."""
    if spec.kappa2 is None:
        raise ValueError(f"example {spec.id} carries no interface data")
    x2d, single = _pts(x)
    if spec.split == "square":
        dist = np.maximum(np.abs(x2d[:, 0]), np.abs(x2d[:, 1]))
        on = np.isclose(dist, _INNER_HALF, atol=1e-12) & (np.max(np.abs(x2d), axis=1) <= _INNER_HALF + 1e-12)
    else:
        on = x2d[:, 1] == 0.0
    if not np.all(on):
        raise ValueError("point not on the interface")
    k1 = spec.kappa1(x2d) if spec.kappa1 is not None else np.zeros(x2d.shape[0])
    k2 = spec.kappa2(x2d, n1)
    if single:
        return float(k1[0]), float(k2[0])
    return k1, k2


def with_dirichlet(spec, g_fn):
    """Copy of the problem with overridden boundary data (used by structural
    penalty-freeness checks; breaks g = trace consistency on purpose)."""

    class _Override(ProblemSpec):
        def dirichlet(self, x):
            x2d, single = _pts(x)
            out = np.asarray(g_fn(x2d), dtype=float)
            return float(out[0]) if single else out

    return _Override(**{f.name: getattr(spec, f.name) for f in spec.__dataclass_fields__.values()})
