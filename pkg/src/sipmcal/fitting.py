"""Weighted least squares shared by both calibration models.

``nonlinear_least_squares`` is a Levenberg-Marquardt minimiser of
sum(((y - f(x, p)) / sigma)**2). Bounded parameters are mapped to an
unbounded internal variable (logistic for two-sided intervals, exponential
for one-sided ones) so the iteration itself is unconstrained. Covariances are
always reported for the external parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, FitError

Model = Callable[[np.ndarray, np.ndarray], np.ndarray]
Jacobian = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FitResult:
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool
    n_iterations: int
    chi2_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")


def weighted_constant_fit(x: Sequence[float], y: Sequence[float], sigma: Sequence[float]) -> FitResult:
    """Inverse-variance weighted mean of ``y``; ``x`` only labels the points."""
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(sigma, dtype=np.float64)
    if y.size == 0 or y.shape != s.shape or np.shape(x) != y.shape:
        raise DomainError("x, y and sigma must be non-empty and of equal length")
    if np.any(~(s > 0)):
        raise DomainError("all sigma values must be > 0")
    w = 1.0 / s**2
    value = float(w @ y / w.sum())
    chi2 = float(w @ (y - value) ** 2)
    return FitResult(
        params=np.array([value]),
        covariance=np.array([[1.0 / w.sum()]]),
        chi2=chi2,
        dof=y.size - 1,
        converged=True,
        n_iterations=0,
    )


def propagate_errors(jacobian: np.ndarray, covariance: np.ndarray) -> np.ndarray:
    """Linear error propagation J C J^T."""
    j = np.atleast_2d(np.asarray(jacobian, dtype=np.float64))
    c = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
    if c.shape[0] != c.shape[1] or j.shape[1] != c.shape[0]:
        raise DomainError(f"cannot propagate covariance {c.shape} through jacobian {j.shape}")
    out = j @ c @ j.T
    return 0.5 * (out + out.T)


# --------------------------------------------------------------------------
# Parameter transforms
# --------------------------------------------------------------------------
class _Transform:
    """Maps one external parameter to an unbounded internal value."""

    def __init__(self, lo: float, hi: float):
        self.lo, self.hi = lo, hi
        lo_f, hi_f = math.isfinite(lo), math.isfinite(hi)
        if lo_f and hi_f:
            self.kind = "logistic"
        elif lo_f:
            self.kind = "lower"
        elif hi_f:
            self.kind = "upper"
        else:
            self.kind = "free"

    def to_internal(self, p: float) -> float:
        lo, hi = self.lo, self.hi
        if self.kind == "logistic":
            span = hi - lo
            t = min(max((p - lo) / span, 1e-12), 1.0 - 1e-12)
            return math.log(t / (1.0 - t))
        if self.kind == "lower":
            return math.log(max(p - lo, 1e-300))
        if self.kind == "upper":
            return math.log(max(hi - p, 1e-300))
        return p

    def to_external(self, u: float) -> float:
        if self.kind == "logistic":
            return self.lo + (self.hi - self.lo) * _expit(u)
        if self.kind == "lower":
            return self.lo + math.exp(min(u, 700.0))
        if self.kind == "upper":
            return self.hi - math.exp(min(u, 700.0))
        return u

    def derivative(self, u: float) -> float:
        """dp/du."""
        if self.kind == "logistic":
            s = _expit(u)
            return (self.hi - self.lo) * s * (1.0 - s)
        if self.kind == "lower":
            return math.exp(min(u, 700.0))
        if self.kind == "upper":
            return -math.exp(min(u, 700.0))
        return 1.0


def _expit(u: float) -> float:
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


def _numeric_jacobian(fun: Callable[[np.ndarray], np.ndarray], u: np.ndarray, f0: np.ndarray) -> np.ndarray:
    jac = np.empty((f0.size, u.size))
    for i in range(u.size):
        h = 1e-6 * max(abs(u[i]), 1.0)
        up, dn = u.copy(), u.copy()
        up[i] += h
        dn[i] -= h
        jac[:, i] = (fun(up) - fun(dn)) / (2.0 * h)
    return jac


def nonlinear_least_squares(
    model: Model,
    x: Sequence[float],
    y: Sequence[float],
    sigma: Sequence[float],
    init: Sequence[float],
    *,
    fixed: Sequence[bool] | None = None,
    bounds: Sequence[tuple[float, float]] | None = None,
    jac: Jacobian | None = None,
    max_iter: int = 10_000,
    rtol_chi2: float = 1e-10,
    step_tol: float = 1e-12,
) -> FitResult:
    """Minimise the weighted residual sum of squares of ``model(x, p)``.

    ``jac(x, p)`` may return the analytic derivative of the model with respect
    to all parameters (shape ``(len(x), len(p))``); without it a central
    difference in the internal variables is used.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(sigma, dtype=np.float64)
    p0 = np.array(init, dtype=np.float64)
    npar = p0.size
    if y.shape != s.shape:
        raise DomainError("y and sigma must have the same shape")
    if np.any(~(s > 0)):
        raise DomainError("all sigma values must be > 0")
    fixed_mask = np.zeros(npar, dtype=bool) if fixed is None else np.asarray(fixed, dtype=bool)
    if fixed_mask.shape != (npar,):
        raise DomainError("fixed mask must match the number of parameters")
    if bounds is None:
        bounds = [(-math.inf, math.inf)] * npar
    if len(bounds) != npar:
        raise DomainError("bounds must match the number of parameters")
    for i, (lo, hi) in enumerate(bounds):
        if not lo <= p0[i] <= hi:
            raise DomainError(f"initial value of parameter {i} ({p0[i]}) outside bounds {lo, hi}")
    free = np.flatnonzero(~fixed_mask)
    nfree = free.size
    if nfree == 0:
        raise DomainError("no free parameters")
    if y.size < nfree:
        raise DomainError(f"{y.size} points cannot constrain {nfree} free parameters")

    transforms = [_Transform(*bounds[i]) for i in free]

    def external(u: np.ndarray) -> np.ndarray:
        p = p0.copy()
        for k, i in enumerate(free):
            p[i] = transforms[k].to_external(u[k])
        return p

    def residual(u: np.ndarray) -> np.ndarray:
        return (y - model(x, external(u))) / s

    def internal_jacobian(u: np.ndarray, r: np.ndarray) -> np.ndarray:
        if jac is None:
            return _numeric_jacobian(residual, u, r)
        p = external(u)
        dpdu = np.array([t.derivative(uk) for t, uk in zip(transforms, u)])
        return -np.asarray(jac(x, p))[:, free] * dpdu / s[:, None]

    u = np.array([t.to_internal(p0[i]) for t, i in zip(transforms, free)])
    r = residual(u)
    if not np.all(np.isfinite(r)):
        raise FitError("model is not finite at the initial parameters")
    chi2 = float(r @ r)
    history = [chi2]
    lam = 1e-3
    converged = False
    it = 0

    while it < max_iter:
        it += 1
        J = internal_jacobian(u, r)
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        dead = diag <= 0
        if np.any(dead):
            names = ", ".join(str(free[k]) for k in np.flatnonzero(dead))
            raise FitError(f"singular normal equations: parameter(s) {names} do not affect the model")
        if chi2 == 0.0:
            converged = True
            break
        improved = False
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError as exc:
                raise FitError(f"singular normal equations ({exc})") from None
            u_new = u + step
            r_new = residual(u_new)
            chi2_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            step_norm = float(np.linalg.norm(step))
            if chi2_new <= chi2:
                improved = True
                rel = (chi2 - chi2_new) / max(chi2_new, 1e-300)
                u, r, chi2 = u_new, r_new, chi2_new
                history.append(chi2)
                lam = max(lam / 10.0, 1e-15)
                if rel < rtol_chi2 or step_norm < step_tol:
                    converged = True
                break
            lam *= 10.0
            if step_norm < step_tol or lam > 1e30:
                # no descent left within round-off of the current point
                converged = True
                break
        if converged or not improved:
            break

    if converged and chi2 > 0.0:
        # chi2 is flat at the minimum, so the chi2 test stops ~1e-5 sigma short;
        # a few undamped Gauss-Newton steps land on the optimum itself. Steps
        # this small change chi2 by less than its rounding, so only a real
        # increase rejects them.
        for _ in range(5):
            J = internal_jacobian(u, r)
            try:
                step = np.linalg.lstsq(J, -r, rcond=None)[0]
            except np.linalg.LinAlgError:
                break
            r_new = residual(u + step)
            if not np.all(np.isfinite(r_new)):
                break
            chi2_new = float(r_new @ r_new)
            if chi2_new > chi2 * (1.0 + 1e-12):
                break
            u, r, chi2 = u + step, r_new, min(chi2, chi2_new)
            history.append(chi2)
            if float(np.linalg.norm(step)) <= 1e-12 * max(1.0, float(np.linalg.norm(u))):
                break

    p = external(u)
    if jac is not None:
        Jp = np.asarray(jac(x, p))[:, free] / s[:, None]
    else:
        dpdu = np.array([t.derivative(uk) for t, uk in zip(transforms, u)])
        if np.any(dpdu == 0):
            raise FitError("parameter pinned to a bound; covariance undefined")
        Jp = -_numeric_jacobian(residual, u, r) / dpdu
    cov = _covariance(Jp, free, npar)
    return FitResult(
        params=p,
        covariance=cov,
        chi2=chi2,
        dof=y.size - nfree,
        converged=converged,
        n_iterations=it,
        chi2_history=tuple(history),
    )


def _covariance(Jp: np.ndarray, free: np.ndarray, npar: int) -> np.ndarray:
    A = Jp.T @ Jp
    scale = np.sqrt(np.diag(A))
    if np.any(scale == 0) or not np.all(np.isfinite(A)):
        raise FitError("singular normal equations at the optimum")
    An = A / np.outer(scale, scale)
    if np.linalg.cond(An) > 1e15:
        raise FitError("singular normal equations at the optimum (parameters degenerate)")
    inv = np.linalg.inv(An) / np.outer(scale, scale)
    cov = np.zeros((npar, npar))
    cov[np.ix_(free, free)] = 0.5 * (inv + inv.T)
    return cov


__all__ = [
    "FitResult",
    "weighted_constant_fit",
    "nonlinear_least_squares",
    "propagate_errors",
]
