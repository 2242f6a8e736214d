"""Training objectives: the three penalty-free stages, the penalty baselines,
and the post-hoc constant corrections.

Interior sums are evaluated in fixed-order chunks (exact gradients, bounded
tape memory); boundary and interface sums, which sit inside squared global
terms and the boundary mean, are always evaluated over their full sets.
Upstream networks enter later stages as plain arrays, so no gradient flows
backwards between stages unless the coupled variant is requested.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import network as nw

__all__ = [
    "NetPack",
    "SolutionTriplet",
    "StageValues",
    "LossResult",
    "Corrections",
    "loss_stage1",
    "loss_stage2",
    "loss_stage3",
    "natural_loss",
    "loss_drm",
    "loss_pinn",
    "constant_correction",
    "predict",
]

# interior sums are evaluated in fixed-order chunks: exact gradients, and a
# tape working set small enough to stay cache resident
_CHUNK = 384


@dataclass(frozen=True)
class NetPack:
    """One network with its parameters."""

    spec: nw.NetworkSpec
    theta: np.ndarray


@dataclass
class SolutionTriplet:
    """Trained stage networks plus the post-hoc constants."""

    u1: NetPack
    phi: NetPack
    uc: NetPack
    C: float = 0.0
    C1: float = 0.0
    C2: float = 0.0


class LossResult(NamedTuple):
    value: float
    grad: np.ndarray
    parts: dict
    c1: float


@dataclass(frozen=True)
class StageValues:
    """Per-stage objective values for one natural-method evaluation."""

    l1: float
    l2: float
    l3: float
    c1: float
    uniq1: float
    uniq2: float
    uniq3_boundary: float
    uniq3_interface: float
    parts: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.l1 + self.l2 + self.l3


def _providers(nets, watched):
    """One tape with the watched networks registered (in `watched` order) and
    all other networks passed through as plain arrays."""
    tape = ad.Tape()
    prov = {}
    for key in watched:
        prov[key] = nw.watch_params(tape, nets[key].spec, nets[key].theta)
    for key, pack in nets.items():
        if key not in prov:
            prov[key] = pack.theta
    return tape, prov


def _interior_batches(quad, batch):
    """(indices, weights) for the interior sum; mini-batches are reweighted
    so they estimate the full weighted sum."""
    if batch is None:
        idx = np.arange(quad.interior_x.shape[0])
        return idx, quad.interior_w
    idx = np.asarray(batch)
    w = quad.interior_w[idx]
    scale = quad.interior_w_sum / float(np.sum(w))
    return idx, w * scale


def _coeffs(problem, x, region, use_coefficients):
    if not use_coefficients:
        ones = np.ones(x.shape[0])
        return ones, ones
    return (
        np.asarray(problem.a11(x, region), dtype=float),
        np.asarray(problem.a22(x, region), dtype=float),
    )


def _chunks(n):
    for lo in range(0, n, _CHUNK):
        yield slice(lo, min(lo + _CHUNK, n))


def _fval(x):
    return float(x.value) if isinstance(x, ad.Num) else float(x)


def _accumulate(total_val, total_grad, tape, root):
    grad = ad.backprop(tape, root)
    return total_val + _fval(root), total_grad + grad


def _zeros_grad(nets, watched):
    return np.zeros(sum(nets[k].spec.n_params for k in watched))


# ---------------------------------------------------------------------------
# stage 1: coefficient-weighted energy with mean-gauge term


def _stage1(problem, quad, nets, watched, batch=None, use_coefficients=True):
    idx, w = _interior_batches(quad, batch)
    X = quad.interior_x[idx]
    region = quad.interior_region[idx]
    f = problem.source(X, region)
    a11, a22 = _coeffs(problem, X, region, use_coefficients)
    u1 = nets["u1"]

    value, grad = 0.0, _zeros_grad(nets, watched)
    interior = 0.0
    for sl in _chunks(X.shape[0]):
        tape, prov = _providers(nets, watched)
        d = nw.forward_dual(u1.spec, prov["u1"], X[sl], order=1)[0]
        ax = ad.mul(d.dx1, a11[sl])
        ay = ad.mul(d.dx2, a22[sl])
        energy = ad.mul(0.5, ad.add(ad.square(ax), ad.square(ay)))
        integrand = ad.sub(energy, ad.mul(d.val, f[sl]))
        root = ad.asum(ad.mul(integrand, w[sl]))
        value, grad = _accumulate(value, grad, tape, root)
        interior = value

    # boundary mean couples through c1; f and kappa2 weights are constants
    f_weight = float(np.dot(f, w))
    tape, prov = _providers(nets, watched)
    ub = nw.forward_dual(u1.spec, prov["u1"], quad.boundary_x, order=0)[0].val
    c1 = ad.mul(ad.asum(ad.mul(ub, quad.boundary_w)), 1.0 / quad.boundary_w_sum)
    root = ad.add(ad.mul(c1, f_weight), ad.square(c1))
    iface_val = 0.0
    if problem.kappa2 is not None and quad.has_interface:
        k2 = problem.kappa2(quad.interface_x, quad.interface_n)
        k2w = k2 * quad.interface_w
        u0 = nw.forward_dual(u1.spec, prov["u1"], quad.interface_x, order=0)[0].val
        iface = ad.add(ad.neg(ad.asum(ad.mul(u0, k2w))), ad.mul(c1, float(np.sum(k2w))))
        root = ad.add(root, iface)
        iface_val = _fval(iface)
    c1_val = _fval(c1)
    value, grad = _accumulate(value, grad, tape, root)

    parts = {
        "interior": interior,
        "interface": iface_val,
        "uniqueness": c1_val**2,
        "boundary": 0.0,
    }
    return LossResult(value, grad, parts, c1_val)


# ---------------------------------------------------------------------------
# stage 2: stream-function energy driven by tangential boundary data


def _stage2(problem, quad, nets, watched, batch=None, use_coefficients=True, frozen=None):
    idx, w = _interior_batches(quad, batch)
    X = quad.interior_x[idx]
    region = quad.interior_region[idx]
    a11, a22 = _coeffs(problem, X, region, use_coefficients)
    inv11, inv22 = 1.0 / a11, 1.0 / a22
    phi = nets["phi"]
    u1 = nets["u1"]

    value, grad = 0.0, _zeros_grad(nets, watched)
    for sl in _chunks(X.shape[0]):
        tape, prov = _providers(nets, watched)
        d = nw.forward_dual(phi.spec, prov["phi"], X[sl], order=1)[0]
        cx = ad.mul(d.dx2, inv11[sl])  # first curl component over a11
        cy = ad.mul(d.dx1, inv22[sl])  # second curl component over a22 (sign squares away)
        energy = ad.mul(0.5, ad.add(ad.square(cx), ad.square(cy)))
        root = ad.asum(ad.mul(energy, w[sl]))
        value, grad = _accumulate(value, grad, tape, root)
    interior = value

    tape, prov = _providers(nets, watched)
    g = problem.dirichlet(quad.boundary_x)
    db = nw.forward_dual(phi.spec, prov["phi"], quad.boundary_x, order=1, directions=quad.boundary_t)[0]
    dtphi = db.dx1
    if frozen is not None and "u1" not in watched:
        dtu1 = frozen["u1"]["boundary_dt"]
    else:
        du1 = nw.forward_dual(
            u1.spec, prov["u1"], quad.boundary_x, order=1, directions=quad.boundary_t
        )[0]
        dtu1 = du1.dx1
    bterm = ad.asum(ad.mul(ad.add(ad.mul(dtphi, g), ad.mul(dtu1, db.val)), quad.boundary_w))
    usum = ad.asum(ad.mul(db.val, quad.boundary_w))
    uniq = ad.square(usum)
    root = ad.add(bterm, uniq)
    iface_val = 0.0
    if problem.kappa1 is not None and quad.has_interface:
        k1 = problem.kappa1(quad.interface_x)
        d0 = nw.forward_dual(
            phi.spec, prov["phi"], quad.interface_x, order=1, directions=quad.interface_t
        )[0]
        iface = ad.asum(ad.mul(d0.dx1, k1 * quad.interface_w))
        root = ad.add(root, iface)
        iface_val = _fval(iface)
    value, grad = _accumulate(value, grad, tape, root)

    parts = {
        "interior": interior,
        "boundary": _fval(bterm),
        "interface": iface_val,
        "uniqueness": _fval(uniq),
    }
    return LossResult(value, grad, parts, 0.0)


# ---------------------------------------------------------------------------
# stage 3: potential recombination with mean-matching regularizers


def _stage3(problem, quad, nets, watched, batch=None, use_coefficients=True, frozen=None):
    idx, w = _interior_batches(quad, batch)
    X = quad.interior_x[idx]
    region = quad.interior_region[idx]
    a11, a22 = _coeffs(problem, X, region, use_coefficients)
    uc, u1, phi = nets["uc"], nets["u1"], nets["phi"]
    two_sided = problem.two_sided and uc.spec.output_dim == 2

    value, grad = 0.0, _zeros_grad(nets, watched)
    blocks = [(1, 0), (2, 1)] if two_sided else [(None, 0)]
    for reg, comp in blocks:
        mask = np.ones(X.shape[0], dtype=bool) if reg is None else region == reg
        sel = np.flatnonzero(mask)
        Xr, wr = X[sel], w[sel]
        a11r, a22r = a11[sel], a22[sel]
        for sl in _chunks(Xr.shape[0]):
            tape, prov = _providers(nets, watched)
            local = sel[sl]

            def upstream_grads(key, pack):
                if frozen is not None and key not in watched:
                    _, gx, gy = frozen[key]["interior"]
                    take = idx[local]
                    return gx[take], gy[take]
                d = nw.forward_dual(pack.spec, prov[key], X[local], order=1)[0]
                return d.dx1, d.dx2

            dc = nw.forward_dual(uc.spec, prov["uc"], Xr[sl], order=1)[comp]
            g1x, g1y = upstream_grads("u1", u1)
            gpx, gpy = upstream_grads("phi", phi)
            rx = ad.add(ad.mul(ad.sub(dc.dx1, g1x), a11r[sl]), ad.mul(gpy, 1.0 / a11r[sl]))
            ry = ad.sub(ad.mul(ad.sub(dc.dx2, g1y), a22r[sl]), ad.mul(gpx, 1.0 / a22r[sl]))
            root = ad.asum(ad.mul(ad.add(ad.square(rx), ad.square(ry)), wr[sl]))
            value, grad = _accumulate(value, grad, tape, root)
    interior = value

    tape, prov = _providers(nets, watched)
    g = problem.dirichlet(quad.boundary_x)
    outer = uc.spec.output_dim - 1
    ub = nw.forward_dual(uc.spec, prov["uc"], quad.boundary_x, order=0)[outer].val
    s = ad.asum(ad.mul(ad.sub(ub, g), quad.boundary_w))
    uniq_b = ad.square(s)
    root = uniq_b
    uniq_i_val = 0.0
    if two_sided and quad.has_interface:
        comps = nw.forward_dual(uc.spec, prov["uc"], quad.interface_x, order=0)
        k1 = problem.kappa1(quad.interface_x)
        s0 = ad.asum(ad.mul(ad.sub(ad.sub(comps[0].val, comps[1].val), k1), quad.interface_w))
        uniq_i = ad.square(s0)
        root = ad.add(root, uniq_i)
        uniq_i_val = _fval(uniq_i)
    value, grad = _accumulate(value, grad, tape, root)

    parts = {
        "interior": interior,
        "boundary": _fval(uniq_b),
        "interface": uniq_i_val,
        "uniqueness": _fval(uniq_b) + uniq_i_val,
    }
    return LossResult(value, grad, parts, 0.0)


# ---------------------------------------------------------------------------
# public wrappers (blocked gradients: each stage trains its own network)


def loss_stage1(problem, quad, spec_u1, theta_u1, batch=None, use_coefficients=True):
    nets = {"u1": NetPack(spec_u1, np.asarray(theta_u1, dtype=float))}
    return _stage1(problem, quad, nets, ("u1",), batch, use_coefficients)


def loss_stage2(problem, quad, spec_phi, theta_phi, u1, batch=None, use_coefficients=True):
    nets = {
        "phi": NetPack(spec_phi, np.asarray(theta_phi, dtype=float)),
        "u1": u1 if isinstance(u1, NetPack) else NetPack(*u1),
    }
    return _stage2(problem, quad, nets, ("phi",), batch, use_coefficients)


def loss_stage3(problem, quad, spec_uc, theta_uc, u1, phi, batch=None, use_coefficients=True):
    nets = {
        "uc": NetPack(spec_uc, np.asarray(theta_uc, dtype=float)),
        "u1": u1 if isinstance(u1, NetPack) else NetPack(*u1),
        "phi": phi if isinstance(phi, NetPack) else NetPack(*phi),
    }
    return _stage3(problem, quad, nets, ("uc",), batch, use_coefficients)


def precompute_frozen(problem, quad, triplet, keys=("u1", "phi")):
    """Plain-array dual evaluations of frozen networks over the full
    quadrature sets, reusable across many objective calls while those
    networks do not change."""
    nets = {"u1": triplet.u1, "phi": triplet.phi, "uc": triplet.uc}
    out = {}
    for key in keys:
        pack = nets[key]
        d = nw.forward_dual(pack.spec, pack.theta, quad.interior_x, order=1)[0]
        entry = {"interior": (np.asarray(d.val), np.asarray(d.dx1), np.asarray(d.dx2))}
        if key == "u1":
            db = nw.forward_dual(
                pack.spec, pack.theta, quad.boundary_x, order=1, directions=quad.boundary_t
            )[0]
            entry["boundary_dt"] = np.asarray(db.dx1)
        out[key] = entry
    return out


def stage_loss(problem, quad, triplet, which, batch=None, use_coefficients=True, frozen=None):
    """One stage objective with gradients for that stage's network only;
    `which` is "u1", "phi", or "uc".  A `frozen` cache from precompute_frozen
    avoids re-evaluating upstream networks on the full sets."""
    nets = {"u1": triplet.u1, "phi": triplet.phi, "uc": triplet.uc}
    if which == "u1":
        return _stage1(problem, quad, nets, ("u1",), batch, use_coefficients)
    fn = {"phi": _stage2, "uc": _stage3}[which]
    return fn(problem, quad, nets, (which,), batch, use_coefficients, frozen=frozen)


def natural_loss(problem, quad, triplet, batch=None, couple=False, use_coefficients=True):
    """All three stage objectives and their gradients.

    Blocked mode (default) gives each stage gradients only for its own
    network; the coupled variant lets every stage reach every network.
    Returns (StageValues, gradient) with the gradient laid out as
    [u1, phi, uc]."""
    nets = {"u1": triplet.u1, "phi": triplet.phi, "uc": triplet.uc}
    keys = ("u1", "phi", "uc")
    if couple:
        r1 = _stage1(problem, quad, nets, keys, batch, use_coefficients)
        r2 = _stage2(problem, quad, nets, keys, batch, use_coefficients)
        r3 = _stage3(problem, quad, nets, keys, batch, use_coefficients)
        grad = r1.grad + r2.grad + r3.grad
    else:
        r1 = _stage1(problem, quad, nets, ("u1",), batch, use_coefficients)
        r2 = _stage2(problem, quad, nets, ("phi",), batch, use_coefficients)
        r3 = _stage3(problem, quad, nets, ("uc",), batch, use_coefficients)
        grad = np.concatenate([r1.grad, r2.grad, r3.grad])
    values = StageValues(
        l1=r1.value,
        l2=r2.value,
        l3=r3.value,
        c1=r1.c1,
        uniq1=r1.c1**2,
        uniq2=r2.parts["uniqueness"],
        uniq3_boundary=r3.parts["boundary"],
        uniq3_interface=r3.parts["interface"],
        parts={"stage1": r1.parts, "stage2": r2.parts, "stage3": r3.parts},
    )
    return values, grad


# ---------------------------------------------------------------------------
# baselines


def loss_drm(problem, quad, spec, theta, beta, batch=None, weighted_penalty=True):
    """Penalty deep Ritz objective with boundary weight beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    nets = {"u": NetPack(spec, np.asarray(theta, dtype=float))}
    idx, w = _interior_batches(quad, batch)
    X = quad.interior_x[idx]
    region = quad.interior_region[idx]
    f = problem.source(X, region)
    a11, a22 = _coeffs(problem, X, region, True)

    value, grad = 0.0, _zeros_grad(nets, ("u",))
    for sl in _chunks(X.shape[0]):
        tape, prov = _providers(nets, ("u",))
        d = nw.forward_dual(spec, prov["u"], X[sl], order=1)[0]
        ax = ad.mul(d.dx1, a11[sl])
        ay = ad.mul(d.dx2, a22[sl])
        energy = ad.mul(0.5, ad.add(ad.square(ax), ad.square(ay)))
        root = ad.asum(ad.mul(ad.sub(energy, ad.mul(d.val, f[sl])), w[sl]))
        value, grad = _accumulate(value, grad, tape, root)
    interior = value

    tape, prov = _providers(nets, ("u",))
    g = problem.dirichlet(quad.boundary_x)
    ub = nw.forward_dual(spec, prov["u"], quad.boundary_x, order=0)[0].val
    sq = ad.square(ad.sub(ub, g))
    pen = ad.mul(beta, ad.asum(ad.mul(sq, quad.boundary_w) if weighted_penalty else sq))
    value, grad = _accumulate(value, grad, tape, pen)
    parts = {"interior": interior, "boundary": value - interior, "interface": 0.0, "uniqueness": 0.0}
    return LossResult(value, grad, parts, 0.0)


def loss_pinn(problem, quad, spec, theta, beta, batch=None, weighted_penalty=True):
    """Strong-form least squares with the same boundary penalty as the
    penalty deep Ritz baseline; needs twice-differentiable activations."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not nw.ACTIVATIONS[spec.activation].second_order_ok:
        raise ad.UnsupportedActivationError(
            f"{spec.activation} cannot form the strong-form residual"
        )
    nets = {"u": NetPack(spec, np.asarray(theta, dtype=float))}
    idx, w = _interior_batches(quad, batch)
    X = quad.interior_x[idx]
    region = quad.interior_region[idx]
    f = problem.source(X, region)
    a11sq = np.asarray(problem.a11(X, region), dtype=float) ** 2
    a22sq = np.asarray(problem.a22(X, region), dtype=float) ** 2
    d11 = np.asarray(problem.da11sq_dx1(X, region), dtype=float)
    d22 = np.asarray(problem.da22sq_dx2(X, region), dtype=float)

    value, grad = 0.0, _zeros_grad(nets, ("u",))
    for sl in _chunks(X.shape[0]):
        tape, prov = _providers(nets, ("u",))
        d = nw.forward_dual(spec, prov["u"], X[sl], order=2)[0]
        res = ad.add(
            ad.add(ad.mul(d.dx1, d11[sl]), ad.mul(d.dxx1, a11sq[sl])),
            ad.add(ad.mul(d.dx2, d22[sl]), ad.mul(d.dxx2, a22sq[sl])),
        )
        res = ad.add(res, f[sl])
        root = ad.asum(ad.mul(ad.square(res), w[sl]))
        value, grad = _accumulate(value, grad, tape, root)
    interior = value

    tape, prov = _providers(nets, ("u",))
    g = problem.dirichlet(quad.boundary_x)
    ub = nw.forward_dual(spec, prov["u"], quad.boundary_x, order=0)[0].val
    sq = ad.square(ad.sub(ub, g))
    pen = ad.mul(beta, ad.asum(ad.mul(sq, quad.boundary_w) if weighted_penalty else sq))
    value, grad = _accumulate(value, grad, tape, pen)
    parts = {"interior": interior, "boundary": value - interior, "interface": 0.0, "uniqueness": 0.0}
    return LossResult(value, grad, parts, 0.0)


# ---------------------------------------------------------------------------
# constant correction and prediction


@dataclass(frozen=True)
class Corrections:
    C: float = 0.0
    C1: float = 0.0
    C2: float = 0.0


def constant_correction(problem, quad, spec_uc, theta_uc):
    """Boundary-mean constants fixing the additive gauge of the stage-3
    network (region-wise for interface problems)."""
    if quad.boundary_x.shape[0] == 0:
        raise ValueError("empty boundary set")
    g = problem.dirichlet(quad.boundary_x)
    vals = nw.forward(spec_uc, theta_uc, quad.boundary_x)
    outer = spec_uc.output_dim - 1
    W = quad.boundary_w_sum
    c_outer = float(np.dot(vals[:, outer] - g, quad.boundary_w) / W)
    if not (problem.two_sided and spec_uc.output_dim == 2):
        return Corrections(C=c_outer)
    v0 = nw.forward(spec_uc, theta_uc, quad.interface_x)
    k1 = problem.kappa1(quad.interface_x)
    W0 = float(np.sum(quad.interface_w))
    C1 = float(np.dot(v0[:, 0] - (v0[:, 1] - c_outer) - k1, quad.interface_w) / W0)
    return Corrections(C=c_outer, C1=C1, C2=c_outer)


def predict(problem, spec_uc, theta_uc, X, corrections, region=None):
    """Corrected prediction u* at arbitrary points (region-resolved for
    interface problems; pass `region` for points on the interface)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    vals = nw.forward(spec_uc, theta_uc, X)
    if not (problem.two_sided and spec_uc.output_dim == 2):
        return vals[:, 0] - corrections.C
    if region is None:
        region = problem.infer_region(X)
    out = np.where(region == 1, vals[:, 0] - corrections.C1, vals[:, 1] - corrections.C2)
    return out
