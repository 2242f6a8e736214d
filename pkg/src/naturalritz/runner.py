"""Experiment orchestration: configuration, training loops, metrics, and
artifact writing."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import fd_oracle as fo
from . import losses as ls
from . import network as nw
from . import optim as op
from . import problems as pb
from . import quadrature as qd

__all__ = [
    "ExperimentConfig",
    "MetricsRow",
    "ConfigError",
    "NumericFailureError",
    "parse_config",
    "run_experiment",
    "write_metrics_csv",
    "relative_errors",
    "METRICS_HEADER",
]

log = logging.getLogger(__name__)

METRICS_HEADER = [
    "phase",
    "step",
    "lr",
    "loss_total",
    "loss1",
    "loss2",
    "loss3",
    "rel_l2",
    "rel_linf",
    "rel_l2_boundary",
    "wall_ms",
]

_METHODS = ("natural", "drm", "pinn", "fd-oracle")
_DEFAULT_WIDTH = {"natural": 20, "drm": 35, "pinn": 35}


class ConfigError(ValueError):
    pass


class NumericFailureError(FloatingPointError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    epochs: int = 100
    batch: int = 200
    lr: float = 0.005
    eta_min: float = 0.0


@dataclass(frozen=True)
class LbfgsConfig:
    outer: int = 50
    history: int = 100
    inner: int = 60


@dataclass(frozen=True)
class QuadratureConfig:
    panels: int = 20
    order: int = 5
    boundary_panels: int = 50
    interface_panels: int = 25
    test_points: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    example: int = 1
    method: str = "natural"
    activation: str = "tanh"
    n_blocks: int = 5
    width: int | None = None
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    beta: float = 1000.0
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    couple_stages: bool = False
    weighted_penalty: bool = True
    example4_interface: bool = False
    grid: int = 129
    out_dir: str = "runs/out"
    log_figures: bool = True

    def resolved_width(self):
        return self.width if self.width is not None else _DEFAULT_WIDTH.get(self.method, 20)


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in cls.__dataclass_fields__.values()}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(f"unknown config key: {where}")
        sub = {"adam": AdamConfig, "lbfgs": LbfgsConfig, "quadrature": QuadratureConfig}.get(key)
        kwargs[key] = _build(sub, value, where) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _validate(cfg):
    def bad(path, msg):
        raise ConfigError(f"{path}: {msg}")

    if cfg.example not in (1, 2, 3, 4, 5):
        bad("example", f"must be 1..5, got {cfg.example}")
    if cfg.method not in _METHODS:
        bad("method", f"must be one of {_METHODS}")
    if cfg.activation not in nw.ACTIVATIONS:
        bad("activation", f"unknown activation {cfg.activation!r}")
    if cfg.method == "pinn" and not nw.ACTIVATIONS[cfg.activation].second_order_ok:
        bad("activation", f"{cfg.activation} has no continuous second derivative; pinn needs one")
    if cfg.method in ("drm", "pinn") and cfg.example == 5:
        bad("method", "penalty baselines support single-valued solutions only (examples 1-4)")
    if cfg.beta <= 0:
        bad("beta", "must be positive")
    if cfg.n_blocks < 1:
        bad("n_blocks", "must be >= 1")
    if cfg.width is not None and cfg.width < 1:
        bad("width", "must be >= 1")
    for name, value in [
        ("adam.epochs", cfg.adam.epochs),
        ("adam.batch", cfg.adam.batch),
        ("lbfgs.outer", cfg.lbfgs.outer),
        ("lbfgs.history", cfg.lbfgs.history),
        ("lbfgs.inner", cfg.lbfgs.inner),
        ("quadrature.panels", cfg.quadrature.panels),
        ("quadrature.order", cfg.quadrature.order),
        ("quadrature.boundary_panels", cfg.quadrature.boundary_panels),
        ("quadrature.interface_panels", cfg.quadrature.interface_panels),
    ]:
        if int(value) != value or value < 1:
            bad(name, "must be a positive integer")
    if cfg.adam.lr <= 0:
        bad("adam.lr", "must be positive")
    if cfg.adam.eta_min < 0:
        bad("adam.eta_min", "must be nonnegative")
    if cfg.quadrature.test_points < 2:
        bad("quadrature.test_points", "must be >= 2")
    if cfg.grid < 3:
        bad("grid", "must be >= 3")
    if cfg.method == "fd-oracle" and cfg.example in (3, 4, 5) and (cfg.grid - 1) % 4 != 0:
        bad("grid", "examples 3-5 need (grid - 1) divisible by 4 to align with the data")
    if cfg.example4_interface and cfg.example != 4:
        bad("example4_interface", "only meaningful for example 4")
    return cfg


def parse_config(source=None, overrides=None):
    """Config from a JSON file path / dict plus flag overrides; unknown keys
    are rejected with their field path."""
    data = {}
    if source is not None:
        if isinstance(source, dict):
            data = dict(source)
        else:
            with open(source) as fh:
                try:
                    data = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{source}: invalid JSON ({exc})") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        parts = key.split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    cfg = _build(ExperimentConfig, data, "")
    return _validate(cfg)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsRow:
    phase: str
    step: int
    lr: float | None
    loss_total: float
    loss1: float | None
    loss2: float | None
    loss3: float | None
    rel_l2: float
    rel_linf: float
    rel_l2_boundary: float
    wall_ms: float


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path, rows):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_HEADER)
            for r in rows:
                writer.writerow(
                    [
                        r.phase,
                        r.step,
                        _fmt(r.lr),
                        _fmt(r.loss_total),
                        _fmt(r.loss1),
                        _fmt(r.loss2),
                        _fmt(r.loss3),
                        _fmt(r.rel_l2),
                        _fmt(r.rel_linf),
                        _fmt(r.rel_l2_boundary),
                        _fmt(r.wall_ms),
                    ]
                )
    except OSError as exc:
        raise IOError(f"cannot write metrics to {path}: {exc}") from exc


def relative_errors(pred, exact, boundary_mask):
    """(rel_l2, rel_linf, rel_l2_boundary) over a test grid."""
    diff = pred - exact
    rel_l2 = float(np.linalg.norm(diff) / np.linalg.norm(exact))
    rel_linf = float(np.max(np.abs(diff)) / np.max(np.abs(exact)))
    nb = np.linalg.norm(exact[boundary_mask])
    rel_b = float(np.linalg.norm(diff[boundary_mask]) / nb)
    return rel_l2, rel_linf, rel_b


# ---------------------------------------------------------------------------
# experiment


def _build_quadrature(cfg, problem):
    q = cfg.quadrature
    qs = qd.build_quadrature(
        panels=q.panels,
        order=q.order,
        boundary_panels=q.boundary_panels,
        interface_panels=q.interface_panels,
        with_interface=problem.has_interface,
        partition_lines=problem.partition_lines,
        test_points=q.test_points,
    )
    if problem.line_interface:
        gx, gw, gn, gt, gseg = qd.build_line_interface(panels=q.boundary_panels, order=q.order)
        qs.interface_x, qs.interface_w = gx, gw
        qs.interface_n, qs.interface_t = gn, gt
        qs.interface_seg = gseg
    if problem.split != "none":
        qs.interior_region = problem.infer_region(qs.interior_x)
    return qs


def _test_regions(problem, X):
    if problem.split == "none":
        return np.ones(X.shape[0], dtype=int)
    if problem.split == "sign_x2":
        return np.where(X[:, 1] >= 0.0, 1, 2)
    dist = np.maximum(np.abs(X[:, 0]), np.abs(X[:, 1]))
    return np.where(dist < 0.5, 1, 2)


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list
    final: dict
    out_dir: object


def _metrics_for(problem, quad, spec_uc, theta_uc, exact, region, boundary_mask):
    corr = ls.constant_correction(problem, quad, spec_uc, theta_uc)
    pred = ls.predict(problem, spec_uc, theta_uc, quad.test_grid, corr, region=region)
    return corr, pred, relative_errors(pred, exact, boundary_mask)


def run_experiment(cfg, out_dir=None):
    """Train (or run the oracle), then write metrics.csv, solution.csv,
    checkpoints, figures, and a manifest into the output directory."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.method == "fd-oracle":
        return _run_oracle(cfg, out)
    return _run_training(cfg, out)


def _run_oracle(cfg, out):
    problem = pb.make_example(cfg.example, interface=cfg.example4_interface)
    t0 = time.perf_counter()
    grids = sorted({33, 65, cfg.grid})
    report = []
    last = None
    for n in grids:
        direct = fo.solve_dirichlet_fd(problem, n)
        comp = fo.natural_compose_fd(problem, n)
        gap = fo.rel_l2_gap(problem, comp.solution, direct)
        report.append(
            {
                "n": n,
                "gap_rel_l2": gap,
                "direct_vs_exact": fo.rel_l2_vs_exact(problem, direct),
                "compose_vs_exact": fo.rel_l2_vs_exact(problem, comp.solution),
            }
        )
        last = (direct, comp)
    for i in range(1, len(report)):
        report[i]["observed_order"] = float(
            np.log2(report[i - 1]["gap_rel_l2"] / report[i]["gap_rel_l2"])
        )
    with open(out / "oracle_report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["n", "gap_rel_l2", "direct_vs_exact", "compose_vs_exact", "observed_order"]
        )
        writer.writeheader()
        for row in report:
            writer.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in row.items()})
    direct, comp = last
    grid = direct.grid
    with open(out / "solution.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "u_compose", "u_direct", "abs_gap"])
        a = comp.solution.values
        b = direct.values
        for p, ai, bi in zip(grid.points, a, b):
            writer.writerow([repr(p[0]), repr(p[1]), repr(float(ai)), repr(float(bi)), repr(abs(float(ai - bi)))])
    if cfg.log_figures:
        from . import plots

        plots.oracle_figure(problem, direct, comp, out / "oracle_fields.png")
        plots.oracle_convergence(report, out / "oracle_convergence.png")
    manifest = {
        "config": _config_dict(cfg),
        "report": report,
        "wall_s": time.perf_counter() - t0,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    log.info("oracle report written to %s", out)
    return RunResult(cfg, [], {"report": report}, out)


def _config_dict(cfg):
    d = asdict(cfg)
    return d


def _spawn_seeds(seed, count):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def _run_training(cfg, out):
    problem = pb.make_example(cfg.example, interface=cfg.example4_interface)
    quad = _build_quadrature(cfg, problem)
    width = cfg.resolved_width()
    test_region = _test_regions(problem, quad.test_grid)
    exact = problem.exact(quad.test_grid, test_region)
    boundary_mask = np.max(np.abs(quad.test_grid), axis=1) >= 1.0 - 1e-12

    natural = cfg.method == "natural"
    if natural:
        s_u1, s_phi, s_uc = _spawn_seeds(cfg.seed, 3)
        spec_u1 = nw.NetworkSpec(2, 1, cfg.n_blocks, width, cfg.activation, s_u1)
        spec_phi = nw.NetworkSpec(2, 1, cfg.n_blocks, width, cfg.activation, s_phi)
        uc_out = 2 if problem.two_sided else 1
        spec_uc = nw.NetworkSpec(2, uc_out, cfg.n_blocks, width, cfg.activation, s_uc)
        thetas = [nw.init_params(s).flat for s in (spec_u1, spec_phi, spec_uc)]
        sizes = [spec_u1.n_params, spec_phi.n_params, spec_uc.n_params]
        spec_pred = spec_uc
    else:
        (s_net,) = _spawn_seeds(cfg.seed, 1)
        spec = nw.NetworkSpec(2, 1, cfg.n_blocks, width, cfg.activation, s_net)
        thetas = [nw.init_params(spec).flat]
        sizes = [spec.n_params]
        spec_pred = spec

    def split(flat):
        outp, off = [], 0
        for s in sizes:
            outp.append(flat[off : off + s])
            off += s
        return outp

    def triplet_of(flat):
        t = split(flat)
        return ls.SolutionTriplet(
            ls.NetPack(spec_u1, t[0]), ls.NetPack(spec_phi, t[1]), ls.NetPack(spec_uc, t[2])
        )

    def loss_and_grad(flat, batch=None):
        if natural:
            values, grad = ls.natural_loss(
                problem, quad, triplet_of(flat), batch=batch, couple=cfg.couple_stages
            )
            return values.total, grad, values
        fn = ls.loss_drm if cfg.method == "drm" else ls.loss_pinn
        r = fn(problem, quad, spec_pred, flat, cfg.beta, batch=batch, weighted_penalty=cfg.weighted_penalty)
        return r.value, r.grad, None

    flat = np.concatenate(thetas)
    rows = []
    t_start = time.perf_counter()

    def theta_uc_of(flat):
        return split(flat)[-1]

    def record(phase, step, lr, total, values):
        corr, pred, errs = _metrics_for(
            problem, quad, spec_pred, theta_uc_of(flat), exact, test_region, boundary_mask
        )
        rows.append(
            MetricsRow(
                phase=phase,
                step=step,
                lr=lr,
                loss_total=total,
                loss1=values.l1 if values is not None else None,
                loss2=values.l2 if values is not None else None,
                loss3=values.l3 if values is not None else None,
                rel_l2=errs[0],
                rel_linf=errs[1],
                rel_l2_boundary=errs[2],
                wall_ms=(time.perf_counter() - t_start) * 1e3,
            )
        )
        return errs

    # Adam phase: mini-batched interior, cosine-annealed learning rate
    n_interior = quad.interior_x.shape[0]
    batches_per_epoch = max(1, n_interior // cfg.adam.batch)
    total_steps = cfg.adam.epochs * batches_per_epoch
    adam = op.AdamState.init(flat.size)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3].generate_state(1)[0])
    step = 0
    try:
        for epoch in range(cfg.adam.epochs):
            perm = rng.permutation(n_interior)
            total, values = np.nan, None
            for b in range(batches_per_epoch):
                batch = perm[b * cfg.adam.batch : (b + 1) * cfg.adam.batch]
                lr = op.cosine_lr(step, total_steps, cfg.adam.lr, cfg.adam.eta_min)
                total, grad, values = loss_and_grad(flat, batch=batch)
                if not np.isfinite(total):
                    raise NumericFailureError(f"non-finite loss {total} at adam step {step}")
                flat = op.adam_step(adam, flat, grad, lr)
                step += 1
            errs = record("adam", epoch + 1, lr, total, values)
            if (epoch + 1) % 10 == 0:
                log.info("adam epoch %d/%d: loss=%.4e rel_l2=%.3e", epoch + 1, cfg.adam.epochs, total, errs[0])

        # L-BFGS phase: full-batch refinement, stage by stage within a sweep
        if natural:
            states = [op.LbfgsState(history=cfg.lbfgs.history) for _ in range(3)]

            def stage_obj(k, frozen):
                key = ("u1", "phi", "uc")[k]

                def obj(theta_k):
                    parts = split(flat)
                    parts[k] = theta_k
                    trip = ls.SolutionTriplet(
                        ls.NetPack(spec_u1, parts[0]),
                        ls.NetPack(spec_phi, parts[1]),
                        ls.NetPack(spec_uc, parts[2]),
                    )
                    r = ls.stage_loss(problem, quad, trip, key, frozen=frozen)
                    return r.value, r.grad

                return obj

            stage_vals = [np.inf, np.inf, np.inf]
            settled = [False, False, False]
            for outer in range(cfg.lbfgs.outer):
                t_sweep = time.perf_counter()
                for k in range(3):
                    if settled[k] and all(settled[:k]):
                        # converged stage whose upstream networks are settled
                        continue
                    parts = split(flat)
                    # the other two networks are frozen while this stage runs
                    frozen = None
                    if k > 0:
                        frozen = ls.precompute_frozen(
                            problem, quad, triplet_of(flat), keys=("u1",) if k == 1 else ("u1", "phi")
                        )
                    theta_k = op.lbfgs_run(
                        stage_obj(k, frozen),
                        parts[k],
                        outer_steps=1,
                        inner_iters=cfg.lbfgs.inner,
                        history=cfg.lbfgs.history,
                        state=states[k],
                    )
                    new_val = stage_obj(k, frozen)(theta_k)[0]
                    settled[k] = stage_vals[k] - new_val <= 1e-9 * (1.0 + abs(new_val))
                    stage_vals[k] = new_val
                    lo = sum(sizes[:k])
                    flat = flat.copy()
                    flat[lo : lo + sizes[k]] = theta_k
                values, _ = ls.natural_loss(problem, quad, triplet_of(flat))
                if not np.isfinite(values.total):
                    raise NumericFailureError(f"non-finite loss at lbfgs sweep {outer}")
                errs = record("lbfgs", outer + 1, None, values.total, values)
                log.info(
                    "lbfgs sweep %d: total=%.6e rel_l2=%.3e (%.1fs)",
                    outer + 1, values.total, errs[0], time.perf_counter() - t_sweep,
                )
                if all(settled):
                    break
        else:
            state = op.LbfgsState(history=cfg.lbfgs.history)

            def obj(theta):
                total, grad, _ = loss_and_grad(theta)
                return total, grad

            def after(outer, theta, fval):
                nonlocal flat
                flat = theta
                if not np.isfinite(fval):
                    raise NumericFailureError(f"non-finite loss at lbfgs step {outer}")
                record("lbfgs", outer + 1, None, fval, None)

            flat = op.lbfgs_run(
                obj,
                flat,
                outer_steps=cfg.lbfgs.outer,
                inner_iters=cfg.lbfgs.inner,
                history=cfg.lbfgs.history,
                state=state,
                on_outer_step=after,
                outer_rel_tol=1e-9,
            )
    except NumericFailureError:
        rows.append(
            MetricsRow("failed", step, None, float("nan"), None, None, None, float("nan"), float("nan"), float("nan"), (time.perf_counter() - t_start) * 1e3)
        )
        write_metrics_csv(out / "metrics.csv", rows)
        raise

    # final artifacts
    corr, pred, errs = _metrics_for(
        problem, quad, spec_pred, theta_uc_of(flat), exact, test_region, boundary_mask
    )
    write_metrics_csv(out / "metrics.csv", rows)
    with open(out / "solution.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "u_pred", "u_exact", "abs_err"])
        for p, up, ue in zip(quad.test_grid, pred, exact):
            writer.writerow([repr(p[0]), repr(p[1]), repr(float(up)), repr(float(ue)), repr(abs(float(up - ue)))])
    parts = split(flat)
    if natural:
        for name, spec_k, theta_k in zip(
            ("u1", "phi", "uc"), (spec_u1, spec_phi, spec_uc), parts
        ):
            nw.save_checkpoint(out / f"{name}.bin", nw.ParamSet(spec_k, theta_k))
    else:
        nw.save_checkpoint(out / "model.bin", nw.ParamSet(spec_pred, parts[0]))
    final = {
        "rel_l2": errs[0],
        "rel_linf": errs[1],
        "rel_l2_boundary": errs[2],
        "constants": {"C": corr.C, "C1": corr.C1, "C2": corr.C2},
        "wall_s": time.perf_counter() - t_start,
    }
    manifest = {"config": _config_dict(cfg), "seeds": _spawn_seeds(cfg.seed, 3 if natural else 1), "final": final}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    if cfg.log_figures:
        from . import plots

        plots.training_figure(rows, out / "training.png")
        plots.solution_figure(quad.test_grid, pred, exact, out / "solution.png")
    log.info("run complete: rel_l2=%.3e rel_linf=%.3e (%s)", errs[0], errs[1], out)
    return RunResult(cfg, rows, final, out)
