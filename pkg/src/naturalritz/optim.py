"""Adam with cosine-annealed learning rate, and L-BFGS refinement with a
backtracking Armijo line search."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "adam_step", "cosine_lr", "LbfgsState", "lbfgs_run", "NonFiniteGradientError"]

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n_params):
        return cls(m=np.zeros(n_params), v=np.zeros(n_params))


def adam_step(state, params, grads, lr):
    """One bias-corrected Adam update; aborts on non-finite gradients."""
    grads = np.asarray(grads, dtype=float)
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError(
            f"non-finite gradient at Adam step {state.step + 1} "
            f"(max |g| over finite entries: {np.max(np.abs(grads[np.isfinite(grads)]), initial=0.0):.3e})"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads**2
    m_hat = state.m / (1 - state.beta1**state.step)
    v_hat = state.v / (1 - state.beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def cosine_lr(step, total_steps, eta0, eta_min=0.0):
    """Cosine annealing from eta0 down to eta_min over total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError("step outside schedule range")
    return eta_min + 0.5 * (eta0 - eta_min) * (1.0 + np.cos(np.pi * step / total_steps))


@dataclass
class LbfgsState:
    """Curvature-pair history for the two-loop recursion."""

    history: int = 100
    s_list: list = field(default_factory=list)
    y_list: list = field(default_factory=list)
    rho_list: list = field(default_factory=list)

    def push(self, s, y):
        """Store a curvature pair; returns False (pair discarded) when the
        curvature is not usefully positive."""
        sy = float(np.dot(s, y))
        if sy <= 1e-10:
            return False  # keep the inverse-Hessian model positive definite
        self.s_list.append(s)
        self.y_list.append(y)
        self.rho_list.append(1.0 / sy)
        if len(self.s_list) > self.history:
            self.s_list.pop(0)
            self.y_list.pop(0)
            self.rho_list.pop(0)
        return True

    def clear(self):
        self.s_list.clear()
        self.y_list.clear()
        self.rho_list.clear()

    def direction(self, grad):
        q = grad.copy()
        alphas = []
        for s, y, rho in zip(reversed(self.s_list), reversed(self.y_list), reversed(self.rho_list)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if self.s_list:
            s, y = self.s_list[-1], self.y_list[-1]
            q *= np.dot(s, y) / np.dot(y, y)
        for (s, y, rho), a in zip(zip(self.s_list, self.y_list, self.rho_list), reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        return -q


def lbfgs_run(
    objective,
    params,
    outer_steps=50,
    history=100,
    inner_iters=60,
    state=None,
    on_outer_step=None,
    grad_tol=1e-12,
    armijo_c=1e-4,
    shrink=0.5,
    max_trials=25,
    outer_rel_tol=None,
):
    """L-BFGS with backtracking Armijo line search.

    `objective(theta)` returns (value, gradient) on the full quadrature set;
    mini-batching is not allowed in this phase.  Accepted steps never
    increase the objective; a failed line search keeps the parameters,
    clears the history, and continues.  `on_outer_step(k, params, value)`
    fires after each outer step.  With `outer_rel_tol` set, the run stops
    once a whole outer step improves the objective by less than
    outer_rel_tol * (1 + |f|).
    """
    params = np.asarray(params, dtype=float).copy()
    if state is None:
        state = LbfgsState(history=history)
    f, g = objective(params)
    rejected_pairs = 0
    stalled = 0
    for outer in range(outer_steps):
        f_outer = f
        for _ in range(inner_iters):
            gnorm = float(np.max(np.abs(g), initial=0.0))
            if gnorm <= grad_tol or stalled >= 3:
                break
            d = state.direction(g)
            slope = float(np.dot(g, d))
            if slope >= 0.0:  # stale curvature after an objective change
                state.clear()
                d = -g
                slope = -float(np.dot(g, g))
            alpha = 1.0
            accepted = False
            for _ in range(max_trials):
                trial = params + alpha * d
                f_trial, g_trial = objective(trial)
                if np.isfinite(f_trial) and f_trial <= f + armijo_c * alpha * slope:
                    accepted = True
                    break
                alpha *= shrink
            if not accepted:
                log.info("line search failed (|g|=%.3e); history cleared", gnorm)
                state.clear()
                break
            assert f_trial <= f, "Armijo acceptance must be monotone"
            # converged when the objective hits float resolution and the
            # gradient has stopped shrinking as well
            g_new = float(np.max(np.abs(g_trial), initial=0.0))
            no_f_progress = f - f_trial <= 1e-14 * (1.0 + abs(f))
            no_g_progress = g_new > 0.99 * gnorm
            stalled = stalled + 1 if (no_f_progress and no_g_progress) else 0
            if state.push(trial - params, g_trial - g):
                rejected_pairs = 0
            else:
                # Armijo alone cannot guarantee positive curvature; a stale
                # history then produces degenerate short steps, so drop it
                rejected_pairs += 1
                if rejected_pairs >= 2:
                    state.clear()
                    rejected_pairs = 0
            params, f, g = trial, f_trial, g_trial
        if on_outer_step is not None:
            on_outer_step(outer, params, f)
        if float(np.max(np.abs(g), initial=0.0)) <= grad_tol or stalled >= 3:
            break
        if outer_rel_tol is not None and f_outer - f <= outer_rel_tol * (1.0 + abs(f)):
            break
    return params
