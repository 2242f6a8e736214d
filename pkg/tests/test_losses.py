import dataclasses
import inspect
import logging

import numpy as np
import pytest
from scipy.interpolate import RegularGridInterpolator

from naturalritz import autodiff as ad
from naturalritz import fd_oracle as fo
from naturalritz import losses as ls
from naturalritz import network as nw
from naturalritz import optim as op
from naturalritz import problems as pb
from naturalritz import quadrature as qd

logging.getLogger("naturalritz").setLevel(logging.ERROR)


@pytest.fixture(scope="module")
def small_quad():
    return qd.build_quadrature(panels=4, order=3, boundary_panels=6, interface_panels=4, test_points=8)


@pytest.fixture(scope="module")
def iface_quad():
    q = qd.build_quadrature(
        panels=4, order=3, boundary_panels=6, interface_panels=4, with_interface=True, test_points=8
    )
    return q


def _net(width=6, blocks=2, seed=1, out=1, activation="tanh"):
    spec = nw.NetworkSpec(2, out, blocks, width, activation, seed)
    return spec, nw.init_params(spec).flat


def test_stage1_zero_network(small_quad):
    p = pb.make_example(1)
    spec, _ = _net()
    r = ls.loss_stage1(p, small_quad, spec, np.zeros(spec.n_params))
    assert r.value == 0.0 and r.c1 == 0.0


def test_stage1_zero_gradient_at_zero_network_with_zero_source(small_quad):
    # with f = 0 the quadratic energy and the gauge term are both flat at the
    # zero network
    p = dataclasses.replace(pb.make_example(1), source_fn=lambda x, r: np.zeros(x.shape[0]))
    spec, _ = _net()
    r = ls.loss_stage1(p, small_quad, spec, np.zeros(spec.n_params))
    assert r.value == 0.0
    assert np.max(np.abs(r.grad)) == 0.0


def test_stage1_constant_network_energy_gradient_vanishes(small_quad):
    # constants span the Neumann kernel: the interior-energy part of the
    # gradient vanishes at any constant network; only the mean-gauge term
    # c1^2 still pulls the constant toward zero
    p = dataclasses.replace(pb.make_example(1), source_fn=lambda x, r: np.zeros(x.shape[0]))
    spec, theta = _net()
    theta = np.zeros(spec.n_params)
    name, shape, off, size = spec.layout[-1]
    theta[off] = 0.7  # head bias: network identically 0.7
    r = ls.loss_stage1(p, small_quad, spec, theta)
    assert np.isclose(r.value, 0.7**2)
    # gradient equals the gauge-term gradient 2 c1 dc1/dtheta exactly
    def c1_of(t):
        return ls.loss_stage1(p, small_quad, spec, t).c1

    g_gauge = np.zeros_like(theta)
    h = 1e-6
    for j in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        g_gauge[j] = (c1_of(tp) ** 2 - c1_of(tm) ** 2) / (2 * h)
    assert np.max(np.abs(r.grad - g_gauge)) <= 1e-6


def test_stage1_shift_identity_exact(small_quad):
    p = pb.make_example(1)
    spec, theta = _net(seed=3)
    base = ls.loss_stage1(p, small_quad, spec, theta)
    shifted = theta.copy()
    name, shape, off, size = spec.layout[-1]
    shifted[off] += 0.37
    after = ls.loss_stage1(p, small_quad, spec, shifted)
    lhs = after.value - base.value
    rhs = (base.c1 + 0.37) ** 2 - base.c1**2
    assert abs(lhs - rhs) <= 1e-12


def test_stage2_zero_everything(small_quad):
    p = dataclasses.replace(pb.make_example(1))
    p = pb.with_dirichlet(p, lambda X: np.zeros(len(X)))
    spec, _ = _net()
    z = np.zeros(spec.n_params)
    r = ls.loss_stage2(p, small_quad, spec, z, (spec, z))
    assert r.value == 0.0


def test_stage2_boundary_terms_cancel_for_own_trace(small_quad):
    # g set to the trace of u1 makes the two boundary terms a closed-loop
    # integral of a tangential derivative
    p = pb.make_example(1)
    spec_u, theta_u = _net(seed=5)
    p = pb.with_dirichlet(p, lambda X: nw.forward(spec_u, theta_u, X)[:, 0])
    spec_p, theta_p = _net(seed=6)
    quad = qd.build_quadrature(panels=4, order=3, boundary_panels=30, interface_panels=4, test_points=8)
    r = ls.loss_stage2(p, quad, spec_p, theta_p, (spec_u, theta_u))
    assert abs(r.parts["boundary"]) <= 1e-8


def test_stage2_gauge_shift(small_quad):
    p = pb.make_example(1)
    spec_u, theta_u = _net(seed=7)
    spec_p, theta_p = _net(seed=8)
    base = ls.loss_stage2(p, small_quad, spec_p, theta_p, (spec_u, theta_u))
    shifted = theta_p.copy()
    name, shape, off, size = spec_p.layout[-1]
    shifted[off] += 0.5
    after = ls.loss_stage2(p, small_quad, spec_p, shifted, (spec_u, theta_u))
    # interior term invariant; uniqueness term strictly increases for a
    # non-mean-zero shift; boundary term moves only through the closed-loop
    # quadrature error
    assert abs(after.parts["interior"] - base.parts["interior"]) <= 1e-12
    assert after.parts["uniqueness"] > base.parts["uniqueness"]
    delta_uniq = after.parts["uniqueness"] - base.parts["uniqueness"]
    assert abs((after.value - base.value) - delta_uniq) <= 1e-7


def test_stage3_zero_at_matched_state(small_quad):
    p = pb.make_example(1)
    spec_u, theta_u = _net(seed=9)
    p = pb.with_dirichlet(p, lambda X: nw.forward(spec_u, theta_u, X)[:, 0])
    spec_c = spec_u
    zero = np.zeros(spec_u.n_params)
    r = ls.loss_stage3(p, small_quad, spec_c, theta_u, (spec_u, theta_u), (spec_u, zero))
    assert abs(r.value) <= 1e-24


def test_stage3_zero_networks_mean_zero_g(small_quad):
    p = pb.make_example(1)
    p = pb.with_dirichlet(p, lambda X: X[:, 0])  # odd, integrates to zero on the loop
    spec, _ = _net()
    z = np.zeros(spec.n_params)
    r = ls.loss_stage3(p, small_quad, spec, z, (spec, z), (spec, z))
    assert abs(r.value) <= 1e-24


def test_stage_decoupling_identically_zero(iface_quad):
    # blocked gradients: stages 2 and 3 contribute nothing to u1, stage 3
    # nothing to phi
    p = pb.make_example(5)
    iface_quad.interior_region = p.infer_region(iface_quad.interior_x)
    spec_u, theta_u = _net(seed=11)
    spec_p, theta_p = _net(seed=12)
    spec_c, theta_c = _net(seed=13, out=2)
    trip = ls.SolutionTriplet(
        ls.NetPack(spec_u, theta_u), ls.NetPack(spec_p, theta_p), ls.NetPack(spec_c, theta_c)
    )
    values, grad = ls.natural_loss(p, iface_quad, trip)
    r2 = ls.stage_loss(p, iface_quad, trip, "phi")
    r3 = ls.stage_loss(p, iface_quad, trip, "uc")
    # perturbing u1 must leave the stage-2/3 gradients w.r.t. their own
    # networks pointing the same way only through the frozen values; the
    # gradient vectors simply do not contain u1 entries
    assert grad.size == spec_u.n_params + spec_p.n_params + spec_c.n_params
    assert r2.grad.size == spec_p.n_params
    assert r3.grad.size == spec_c.n_params


def test_integration_by_parts_boundary_identity():
    # sum over the closed boundary of d/dt(g * phi) vanishes
    quadb = qd.build_quadrature(panels=3, order=5, boundary_panels=40)
    x, w, t = quadb.boundary_x, quadb.boundary_w, quadb.boundary_t
    g = np.sin(x[:, 0]) * np.cosh(x[:, 1])
    gg = np.column_stack([np.cos(x[:, 0]) * np.cosh(x[:, 1]), np.sin(x[:, 0]) * np.sinh(x[:, 1])])
    phi = np.exp(0.3 * x[:, 0] - 0.2 * x[:, 1])
    gp = np.column_stack([0.3 * phi, -0.2 * phi])
    dt_g = np.sum(gg * t, axis=1)
    dt_p = np.sum(gp * t, axis=1)
    val = float(np.sum((g * dt_p + dt_g * phi) * w))
    assert abs(val) <= 1e-10


def test_constant_correction_shift():
    p = pb.make_example(1)
    quad = qd.build_quadrature(panels=3, order=2, boundary_panels=6)
    spec, _ = _net()
    theta = np.zeros(spec.n_params)
    name, shape, off, size = spec.layout[-1]
    theta[off] = 3.0
    p3 = pb.with_dirichlet(p, lambda X: np.zeros(len(X)))
    corr = ls.constant_correction(p3, quad, spec, theta)
    assert np.isclose(corr.C, 3.0, atol=1e-12)


def test_constant_correction_interface_shifts(iface_quad):
    p = pb.make_example(5)

    def exact_plus_shift(x):
        # network playing u_c: region-1 output = exact + 2, region-2 = exact - 1
        v1 = p.exact(x, np.ones(len(x), dtype=int)) + 2.0
        v2 = p.exact(x, np.full(len(x), 2)) - 1.0
        return np.column_stack([v1, v2])

    class FakeSpec:
        output_dim = 2

    # bypass the network: evaluate corrections directly from the formulas
    g = p.dirichlet(iface_quad.boundary_x)
    vals_b = exact_plus_shift(iface_quad.boundary_x)
    W = iface_quad.boundary_w_sum
    C2 = float(np.dot(vals_b[:, 1] - g, iface_quad.boundary_w) / W)
    v0 = exact_plus_shift(iface_quad.interface_x)
    k1 = p.kappa1(iface_quad.interface_x)
    W0 = float(np.sum(iface_quad.interface_w))
    C1 = float(np.dot(v0[:, 0] - (v0[:, 1] - C2) - k1, iface_quad.interface_w) / W0)
    assert np.isclose(C2, -1.0, atol=1e-10)
    assert np.isclose(C1, 2.0, atol=1e-10)


def test_drm_values(small_quad):
    p = pb.make_example(1)
    spec, _ = _net()
    zero = np.zeros(spec.n_params)
    pz = pb.with_dirichlet(p, lambda X: np.zeros(len(X)))
    assert ls.loss_drm(pb.with_dirichlet(dataclasses.replace(p, source_fn=lambda x, r: np.zeros(x.shape[0])), lambda X: np.zeros(len(X))), small_quad, spec, zero, 1000.0).value == 0.0
    r = ls.loss_drm(pb.with_dirichlet(p, lambda X: np.ones(len(X))), small_quad, spec, zero, 1000.0)
    assert np.isclose(r.value, 8000.0, atol=1e-9)


def test_drm_rejects_nonpositive_beta(small_quad):
    p = pb.make_example(1)
    spec, theta = _net()
    with pytest.raises(ValueError):
        ls.loss_drm(p, small_quad, spec, theta, beta=-1.0)


def test_pinn_constant_source(small_quad):
    p = dataclasses.replace(pb.make_example(1), source_fn=lambda x, r: np.full(x.shape[0], 3.0))
    p = pb.with_dirichlet(p, lambda X: np.zeros(len(X)))
    spec, _ = _net()
    r = ls.loss_pinn(p, small_quad, spec, np.zeros(spec.n_params), 1000.0)
    assert np.isclose(r.value, 4 * 9.0, atol=1e-10)


def test_pinn_rejects_requ(small_quad):
    p = pb.make_example(1)
    spec, theta = _net(activation="requ")
    with pytest.raises(ad.UnsupportedActivationError):
        ls.loss_pinn(p, small_quad, spec, theta, 1000.0)


def test_pinn_residual_blows_up_across_kink():
    # centered finite differences straddling x2 = 0 see the line source of
    # the fourth benchmark: its exact solution is not a strong solution
    p = pb.make_example(4)
    h = 1e-3
    x1 = np.array([0.3])

    def u(x2):
        pts = np.column_stack([x1, [x2]])
        return p.exact(pts, np.array([1 if x2 > 0 else 2]))[0]

    for x2, expect_large in ((0.5, False), (h / 2, True)):
        uxx = (u(x2 + h) - 2 * u(x2) + u(x2 - h)) / h**2
        pts = np.column_stack([x1, [x2]])
        region = np.array([1])
        a22sq = p.a22(pts, region)[0] ** 2
        # x1 second derivative away from the kink by the closed form
        g = p.grad_exact(pts, region)[0]
        hh = 1e-4
        ux_p = p.grad_exact(np.column_stack([x1 + hh, [x2]]), region)[0, 0]
        ux_m = p.grad_exact(np.column_stack([x1 - hh, [x2]]), region)[0, 0]
        uxx1 = (ux_p - ux_m) / (2 * hh)
        res = abs(uxx1 + a22sq * uxx + p.source(pts, region)[0])
        if expect_large:
            assert res > 1e2
        else:
            assert res < 1e-2


def test_gradient_correctness_all_losses_small():
    quad = qd.build_quadrature(panels=3, order=2, boundary_panels=4, interface_panels=3, with_interface=True, test_points=5)
    p5 = pb.make_example(5)
    quad.interior_region = p5.infer_region(quad.interior_x)
    p1 = pb.make_example(1)
    worst = 0.0
    for seed in (0, 1, 2):
        for activation in ("tanh", "recu"):
            spec1, th = _net(width=5, blocks=2, seed=seed, activation=activation)
            spec2, thc = _net(width=5, blocks=2, seed=seed + 50, out=2, activation=activation)
            _, thb = _net(width=5, blocks=2, seed=seed + 100, activation=activation)
            checks = [
                lambda t: ls.loss_stage1(p5, quad, spec1, t)[:2],
                lambda t: ls.loss_stage2(p5, quad, spec1, t, (spec1, thb))[:2],
                lambda t: ls.loss_drm(p1, quad, spec1, t, 1000.0)[:2],
                lambda t: ls.loss_pinn(p1, quad, spec1, t, 1000.0)[:2],
            ]
            for fn in checks:
                worst = max(worst, ad.grad_check(fn, th, seed=seed, max_components=40))
            worst = max(
                worst,
                ad.grad_check(
                    lambda t: ls.loss_stage3(p5, quad, spec2, t, (spec1, th), (spec1, thb))[:2],
                    thc,
                    seed=seed,
                    max_components=40,
                ),
            )
    assert worst <= 1e-5


def test_penalty_freeness_structure(small_quad):
    # no beta-like parameter in the natural stage signatures
    for fn in (ls.loss_stage1, ls.loss_stage2, ls.loss_stage3):
        names = set(inspect.signature(fn).parameters)
        assert "beta" not in names and not any("penalty" in n for n in names)

    # interior parts never see the boundary data: swap g and compare
    p = pb.make_example(1)
    spec_u, theta_u = _net(seed=21)
    spec_p, theta_p = _net(seed=22)
    spec_c, theta_c = _net(seed=23)
    trip = ls.SolutionTriplet(
        ls.NetPack(spec_u, theta_u), ls.NetPack(spec_p, theta_p), ls.NetPack(spec_c, theta_c)
    )
    p_swapped = pb.with_dirichlet(p, lambda X: 100.0 + np.sin(5 * X[:, 0]))
    a, _ = ls.natural_loss(p, small_quad, trip)
    b, _ = ls.natural_loss(p_swapped, small_quad, trip)
    for stage in ("stage1", "stage2", "stage3"):
        assert a.parts[stage]["interior"] == b.parts[stage]["interior"]
    # stage 1 never references g at all
    assert a.l1 == b.l1


# ---------------------------------------------------------------------------
# oracle-matched values: fit networks to the composed finite-difference
# fields and evaluate the stage objectives there


@pytest.fixture(scope="module")
def oracle_fit():
    p = pb.make_example(1)
    comp = fo.natural_compose_fd(p, 65)  # internal fields live on the refined grid
    grid = comp.grid
    quad = qd.build_quadrature(panels=10, order=4, boundary_panels=25)

    def interp(values):
        return RegularGridInterpolator(
            (grid.xs, grid.xs), values.reshape(grid.n, grid.n), method="cubic"
        )

    fits = {}
    for name, field in (("u1", comp.u_tilde), ("phi", comp.phi), ("uc", comp.uc)):
        spec = nw.NetworkSpec(2, 1, 5, 20, "tanh", seed=hash(name) % 1000)
        theta = nw.init_params(spec).flat
        target = interp(field)(quad.interior_x)
        # the stage objectives consume derivatives, so fit those too
        f2 = field.reshape(grid.n, grid.n)
        gx, gy = np.gradient(f2, grid.xs, grid.xs)
        tgx = interp(gx.ravel())(quad.interior_x)
        tgy = interp(gy.ravel())(quad.interior_x)
        m = 1.0 / len(target)

        def obj(t, spec=spec, target=target, tgx=tgx, tgy=tgy, m=m):
            tape = ad.Tape()
            prov = nw.watch_params(tape, spec, t)
            d = nw.forward_dual(spec, prov, quad.interior_x, order=1)[0]
            root = ad.mul(
                m,
                ad.add(
                    ad.asum(ad.square(ad.sub(d.val, target))),
                    ad.add(
                        ad.asum(ad.square(ad.sub(d.dx1, tgx))),
                        ad.asum(ad.square(ad.sub(d.dx2, tgy))),
                    ),
                ),
            )
            return root.value, ad.backprop(tape, root)

        theta = op.lbfgs_run(obj, theta, outer_steps=10, inner_iters=60, history=50)

        def value_mse(t, spec=spec, target=target):
            val = nw.forward(spec, t, quad.interior_x)[:, 0]
            return float(np.mean((val - target) ** 2))

        fits[name] = (spec, theta, value_mse(theta))
    return p, comp, quad, fits


@pytest.mark.slow
def test_stage1_gradient_small_at_oracle_field(oracle_fit):
    p, comp, quad, fits = oracle_fit
    spec, theta, mse = fits["u1"]
    assert mse <= 1e-6
    # project onto the boundary-mean-zero gauge by shifting the head bias
    r0 = ls.loss_stage1(p, quad, spec, theta)
    theta = theta.copy()
    name, shape, off, size = spec.layout[-1]
    theta[off] -= r0.c1
    r = ls.loss_stage1(p, quad, spec, theta)
    assert np.linalg.norm(r.grad) <= 1e-2


@pytest.mark.slow
def test_stage2_value_close_to_fd_energy(oracle_fit):
    p, comp, quad, fits = oracle_fit
    spec_u, theta_u, _ = fits["u1"]
    spec_p, theta_p, mse = fits["phi"]
    assert mse <= 1e-6
    # shift the fitted phi to the boundary-mean-zero gauge
    vals = nw.forward(spec_p, theta_p, quad.boundary_x)[:, 0]
    shift = float(np.dot(vals, quad.boundary_w) / quad.boundary_w_sum)
    theta_p = theta_p.copy()
    name, shape, off, size = spec_p.layout[-1]
    theta_p[off] -= shift
    r = ls.loss_stage2(p, quad, spec_p, theta_p, (spec_u, theta_u))

    # discrete energy of the finite-difference stream function
    grid = comp.grid
    K2 = fo.assemble_stiffness(p, grid, swap=True)
    bl = fo.boundary_loop(grid)
    g = np.zeros(grid.n**2)
    g[bl.ids] = p.dirichlet(grid.points[bl.ids])
    rhs2 = np.zeros(grid.n**2)
    ids, load = fo._tangential_load(bl, g - comp.u_tilde)
    np.add.at(rhs2, ids, load)
    e_fd = 0.5 * comp.phi @ (K2 @ comp.phi) - rhs2 @ comp.phi
    assert abs(r.value - e_fd) <= 1e-3


@pytest.mark.slow
def test_stage3_small_at_oracle_triplet(oracle_fit):
    p, comp, quad, fits = oracle_fit
    spec_u, theta_u, _ = fits["u1"]
    spec_p, theta_p, _ = fits["phi"]
    spec_c, theta_c, _ = fits["uc"]
    r = ls.loss_stage3(p, quad, spec_c, theta_c, (spec_u, theta_u), (spec_p, theta_p))
    assert r.parts["interior"] <= 1e-3
