"""Limited-memory BFGS with a strong-Wolfe line search, and Adam.

Both optimizers minimise a callable ``fun_grad(x) -> (value, gradient)`` over
a flat float64 parameter vector and are fully deterministic.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

FunGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    n_fev: int
    history: list = field(default_factory=list)
    converged: bool = False
    warning: str | None = None

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


class _Evaluator:
    """Counts evaluations and remembers the best point seen."""

    def __init__(self, fun_grad: FunGrad):
        self.fun_grad = fun_grad
        self.n = 0

    def __call__(self, x):
        self.n += 1
        f, g = self.fun_grad(x)
        return float(f), np.asarray(g, dtype=float)


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic interpolating (a, fa, da), (b, fb, db); None if undefined."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if np.isfinite(t) else None


def strong_wolfe(evaluate, x, f0, g0, d, alpha1, c1=1e-4, c2=0.9, max_eval=20):
    """Line search along ``d`` satisfying the strong Wolfe conditions.

    Returns ``(alpha, f, g, ok)``. When the conditions cannot be met within
    ``max_eval`` evaluations, the lowest point with sufficient decrease is
    returned with ``ok=False``; ``alpha`` is 0 when no decrease was found.
    """
    dphi0 = float(g0 @ d)
    best = (0.0, f0, g0)
    n = 0

    def phi(a):
        nonlocal n, best
        n += 1
        f, g = evaluate(x + a * d)
        if f < best[1] and f <= f0 + c1 * a * dphi0:
            best = (a, f, g)
        return f, g, float(g @ d)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while n < max_eval:
            a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            lo_, hi_ = min(lo, hi), max(lo, hi)
            margin = 0.1 * (hi_ - lo_)
            if a is None or not (lo_ + margin <= a <= hi_ - margin):
                a = 0.5 * (lo + hi)
            f, g, da = phi(a)
            if f > f0 + c1 * a * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, da
            else:
                if abs(da) <= -c2 * dphi0:
                    return a, f, g, True
                if da * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, da
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = alpha1
    while n < max_eval:
        f, g, da = phi(a)
        if not np.isfinite(f):
            # overshoot into a non-finite region: shrink and retry
            a = 0.5 * (a_prev + a)
            continue
        if f > f0 + c1 * a * dphi0 or (n > 1 and f >= f_prev):
            out = zoom(a_prev, f_prev, d_prev, a, f, da)
            break
        if abs(da) <= -c2 * dphi0:
            return a, f, g, True
        if da >= 0:
            out = zoom(a, f, da, a_prev, f_prev, d_prev)
            break
        a_prev, f_prev, d_prev = a, f, da
        a = 2.0 * a
    else:
        out = None
    if out is not None:
        return out
    a, f, g = best
    return a, f, g, False


def lbfgs(fun_grad: FunGrad, x0, max_iter: int = 500, gtol: float = 1e-6, memory: int = 10,
          max_ls: int = 20, ftol: float = 0.0, callback=None) -> OptimizeResult:
    """Minimise with L-BFGS (two-loop recursion, strong-Wolfe steps).

    Stops when ``max|grad| < gtol``, after ``max_iter`` iterations, or when the
    relative decrease of an accepted step falls below ``ftol``. A failed line
    search is retried once along the steepest-descent direction with the
    curvature memory cleared; a second consecutive failure ends the run with a
    warning and the best iterate.
    """
    evaluate = _Evaluator(fun_grad)
    x = np.array(x0, dtype=float)
    f, g = evaluate(x)
    history = [f]
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    warning = None
    converged = bool(np.max(np.abs(g), initial=0.0) < gtol)
    it = 0
    retried = False
    while not converged and it < max_iter:
        if S and not retried:
            q = g.copy()
            rhos, alphas = [], []
            for s, y in zip(reversed(S), reversed(Y)):
                rho = 1.0 / float(y @ s)
                a = rho * float(s @ q)
                q -= a * y
                rhos.append(rho)
                alphas.append(a)
            q *= float(S[-1] @ Y[-1]) / float(Y[-1] @ Y[-1])
            for (s, y), rho, a in zip(zip(S, Y), reversed(rhos), reversed(alphas)):
                q += (a - rho * float(y @ q)) * s
            d = -q
            alpha1 = 1.0
        else:
            d = -g
            alpha1 = 1.0 / max(np.linalg.norm(g), 1e-300)
        if float(g @ d) >= 0:
            d = -g
            alpha1 = 1.0 / max(np.linalg.norm(g), 1e-300)
        alpha, f_new, g_new, ok = strong_wolfe(evaluate, x, f, g, d, alpha1, max_eval=max_ls)
        if alpha == 0.0:
            if retried or not S:
                warning = "line search failed"
                break
            S.clear()
            Y.clear()
            retried = True
            continue
        s = alpha * d
        y = g_new - g
        if float(s @ y) > 1e-12 * float(y @ y):
            S.append(s)
            Y.append(y)
        x = x + s
        decrease = f - f_new
        f, g = f_new, g_new
        history.append(f)
        it += 1
        retried = False
        if callback is not None:
            callback(x, f)
        converged = bool(np.max(np.abs(g)) < gtol)
        if not converged and ftol > 0 and decrease <= ftol * max(abs(f), abs(f + decrease), 1.0):
            break
    if warning:
        # failing after negligible progress means a kink or the rounding floor was reached
        recent = history[-6:]
        stalled = len(recent) > 1 and recent[0] - recent[-1] <= 1e-8 * max(abs(f), 1e-300)
        log.log(logging.INFO if stalled else logging.WARNING,
                "L-BFGS stopped after %d iterations: %s", it, warning)
    return OptimizeResult(x, f, g, it, evaluate.n, history, converged, warning)


def adam(fun_grad: FunGrad, x0, lr: float = 1e-3, max_iter: int = 1000, gtol: float = 0.0,
         beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizeResult:
    """Full-batch Adam. The returned point is the best iterate visited."""
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    f, g = fun_grad(x)
    history = [float(f)]
    best = (float(f), x.copy(), np.array(g, dtype=float))
    n = 1
    it = 0
    while it < max_iter and not np.max(np.abs(g), initial=0.0) <= gtol:
        it += 1
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**it)
        vhat = v / (1 - beta2**it)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        f, g = fun_grad(x)
        n += 1
        history.append(float(f))
        if f < best[0]:
            best = (float(f), x.copy(), np.array(g, dtype=float))
    f, x, g = best
    return OptimizeResult(x, f, g, it, n, history, bool(np.max(np.abs(g), initial=0.0) <= gtol))
