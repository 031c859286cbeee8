"""High-accuracy radial ground truth.

Contains the exact scaled-Einstein solutions on the unit ball, the radial
reduction of the homotopy tensor on flat backgrounds, and a Chebyshev
collocation solver for the radial boundary-value problem with damped Newton
and parameter continuation.  The collocation solver is the independent
oracle the finite-difference continuation solver is checked against, so it
shares no discretization machinery with it.
"""

from dataclasses import dataclass, field as dc_field
from math import comb, log

import numpy as np

from .symfun import sigma_all

__all__ = [
    "RadialProfile",
    "BvpFailure",
    "radial_eigenvalues",
    "sigma_pair",
    "einstein_exact",
    "einstein_exact_radial",
    "einstein_boundary_constant",
    "bvp_solve",
]


class BvpFailure(RuntimeError):
    """Raised when the collocation Newton iteration fails to converge."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class RadialProfile:
    """Radial solution samples w, w', w'' at collocation nodes."""

    r: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    d2w: np.ndarray
    trace: list = dc_field(default_factory=list)

    def interp(self, r_eval):
        """Barycentric evaluation of the collocation polynomial."""
        return _barycentric(self.r, self.w, np.asarray(r_eval, dtype=float))


def radial_eigenvalues(w, dw, d2w, r, t, k, m, rhs_scale=1.0):
    """Radial and tangential eigenvalues of g^{-1} W_t for radial w, flat g.

    lambda_rad = (1-t) lam + (m-1)(w'' + w'/r),
    lambda_tan = (1-t) lam + w'' + (2m-3) w'/r + (m-2) w'^2,
    where lam is the t = 0 anchor.  At r = 0 the removable w'/r is replaced
    by its limit w''(0); this requires the regularity condition w'(0) = 0.
    """
    anchor = (rhs_scale / comb(m, k)) ** (1.0 / k)
    w, dw, d2w, r = np.broadcast_arrays(
        np.asarray(w, float), np.asarray(dw, float),
        np.asarray(d2w, float), np.asarray(r, float),
    )
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    at_origin = r == 0.0
    if np.any(at_origin) and np.any(np.abs(dw[at_origin]) > 1e-12):
        raise ValueError("r = 0 requires the regularity condition w'(0) = 0")
    dw_over_r = np.where(at_origin, d2w, dw / np.where(at_origin, 1.0, r))
    base = (1.0 - t) * anchor
    lam_rad = base + (m - 1) * (d2w + dw_over_r)
    lam_tan = base + d2w + (2 * m - 3) * dw_over_r + (m - 2) * dw**2
    return lam_rad, lam_tan


def sigma_pair(a, b, k, m):
    """sigma_k of the multiset {a x1, b x(m-1)}.

    Closed form: C(m-1, k) b^k + C(m-1, k-1) a b^{k-1}.
    """
    out = comb(m - 1, k) * b**k if k <= m - 1 else np.zeros_like(b)
    return out + comb(m - 1, k - 1) * a * b ** (k - 1)


def _sigma_pair_margin(a, b, k, m):
    """min over j <= k of sigma_j({a, b x (m-1)})."""
    lams = np.stack([a] + [b] * (m - 1), axis=-1)
    e = np.apply_along_axis(sigma_all, -1, lams)
    return e[..., 1 : k + 1].min(axis=-1)


def einstein_boundary_constant(m, k):
    """Limit of w* + ln(r) at the boundary of the unit ball.

    Equals (1/2) ln(m-1) + (1/2k) ln C(m,k); the second term vanishes only
    for k = m.
    """
    return 0.5 * log(m - 1) + log(comb(m, k)) / (2.0 * k)


def einstein_exact(m, k, x):
    """Exact solution of the complete sigma_k problem on the unit ball.

    w*(x) = -ln(1-|x|^2) + ln 2 + (1/2) ln(m-1) + (1/2k) ln C(m,k); the
    metric e^{2 w*} delta is the suitably scaled hyperbolic metric.
    """
    x = np.asarray(x, dtype=float)
    s2 = np.sum(x * x, axis=-1) if x.ndim else x * x
    return einstein_exact_radial(m, k, np.sqrt(s2))


def einstein_exact_radial(m, k, s, derivatives=False):
    """einstein_exact as a function of s = |x| < 1, optionally with w', w''."""
    s = np.asarray(s, dtype=float)
    if np.any(s >= 1.0):
        raise ValueError("einstein_exact is defined on the open unit ball")
    c = log(2.0) + 0.5 * log(m - 1) + log(comb(m, k)) / (2.0 * k)
    w = -np.log1p(-(s * s)) + c
    if not derivatives:
        return w
    q = 1.0 - s * s
    dw = 2.0 * s / q
    d2w = 2.0 / q + 4.0 * s * s / q**2
    return w, dw, d2w


def _cheb_nodes_and_diff(n):
    """Chebyshev-Gauss-Lobatto points on [-1, 1] and differentiation matrix."""
    j = np.arange(n + 1)
    x = np.cos(np.pi * j / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** j
    X = np.tile(x, (n + 1, 1)).T
    dX = X - X.T + np.eye(n + 1)
    D = np.outer(c, 1.0 / c) / dX
    D -= np.diag(D.sum(axis=1))
    return x, D


def _barycentric(xn, yn, xe):
    n = xn.size - 1
    wgt = np.ones(n + 1)
    wgt[0] = wgt[-1] = 0.5
    wgt *= (-1.0) ** np.arange(n + 1)
    out = np.empty_like(xe, dtype=float)
    for i, xv in np.ndenumerate(xe):
        d = xv - xn
        hit = np.argmin(np.abs(d))
        if abs(d[hit]) < 1e-14:
            out[i] = yn[hit]
            continue
        t = wgt / d
        out[i] = (t @ yn) / t.sum()
    return out


def bvp_solve(r0, r1, m, k, j1, j0=None, rhs_scale=1.0, n=96, tol=1e-10,
              max_newton=60):
    """Radial sigma_k Dirichlet solve by Chebyshev collocation.

    Solves sigma_k({lam_rad, lam_tan x (m-1)}) = rhs_scale e^{2kw} on
    [r0, r1] with w(r1) = j1 and, on annuli, w(r0) = j0; on balls (r0 = 0)
    the regularity condition w'(0) = 0 replaces the inner datum.  The
    nonlinear collocated system is solved by damped Newton with continuation
    first in the homotopy parameter t and then in the boundary data.
    """
    if r0 < 0 or r1 <= r0:
        raise ValueError("need 0 <= r0 < r1")
    is_ball = r0 == 0.0
    if not is_ball and j0 is None:
        raise ValueError("annulus solves need the inner boundary datum j0")
    xi, Dxi = _cheb_nodes_and_diff(n)
    # map [-1, 1] onto [r0, r1] with index 0 at the outer boundary
    r = r0 + (r1 - r0) * (1.0 + xi) / 2.0
    D = Dxi * (2.0 / (r1 - r0))
    D2 = D @ D
    w = np.zeros(n + 1)
    trace = []

    def newton(t, b1, b0, w):
        for it in range(max_newton):
            F, J = _collocation_system(
                w, r, D, D2, t, k, m, rhs_scale, b1, b0, is_ball
            )
            res = np.max(np.abs(F))
            if res <= tol:
                return w, it, res
            h = np.linalg.solve(J, -F)
            s = 1.0
            while s >= 1e-8:
                w_new = w + s * h
                ok, res_new = _admissible_residual(
                    w_new, r, D, D2, t, k, m, rhs_scale, b1, b0, is_ball
                )
                if ok and (res_new < res or res_new <= tol):
                    break
                s *= 0.5
            else:
                # backtracking found no descent direction: the iterate sits
                # at the floor set by conditioning of the dense collocation
                # system (or, for steep boundary layers, by the resolution).
                # Accept it if the residual is already small; the error tests
                # validate accuracy independently.
                if res <= max(100.0 * tol, 1e-5):
                    return w, it, res
                raise BvpFailure(
                    f"damping underflow at t={t:.4f}, residual {res:.2e}",
                    trace,
                )
            w = w_new
        raise BvpFailure(f"Newton stagnated at t={t:.4f}", trace)

    # continuation in t with the anchor boundary data 0
    t, step = 0.0, 0.25
    while t < 1.0:
        t_try = min(1.0, t + step)
        try:
            w_new, its, res = newton(t_try, 0.0, 0.0, w.copy())
        except BvpFailure:
            step *= 0.5
            if step < 1e-6:
                raise
            continue
        w, t = w_new, t_try
        trace.append((t, its, res))
    # ramp the boundary data at t = 1
    s, step = 0.0, 0.25
    while s < 1.0:
        s_try = min(1.0, s + step)
        try:
            w_new, its, res = newton(
                1.0, s_try * j1, s_try * (j0 or 0.0), w.copy()
            )
        except BvpFailure:
            step *= 0.5
            if step < 1e-6:
                raise
            continue
        w, s = w_new, s_try
        trace.append((1.0 + s, its, res))
    dw, d2w = D @ w, D2 @ w
    order = np.argsort(r)
    return RadialProfile(
        r[order], w[order], dw[order], d2w[order], trace
    )


def _collocation_system(w, r, D, D2, t, k, m, rhs_scale, b1, b0, is_ball):
    n1 = w.size
    dw, d2w = D @ w, D2 @ w
    r_safe = np.where(r == 0.0, 1.0, r)
    inv_r = np.where(r == 0.0, 0.0, 1.0 / r_safe)
    dw_over_r = np.where(r == 0.0, d2w, dw * inv_r)
    anchor = (rhs_scale / comb(m, k)) ** (1.0 / k)
    base = (1.0 - t) * anchor
    a = base + (m - 1) * (d2w + dw_over_r)
    b = base + d2w + (2 * m - 3) * dw_over_r + (m - 2) * dw**2
    e2kw = np.exp(2.0 * k * w)
    F = sigma_pair(a, b, k, m) - rhs_scale * e2kw
    # row scaling: keeps the residual tolerance meaningful when the
    # right-hand side e^{2kw} spans many orders of magnitude
    scale = 1.0 + rhs_scale * e2kw
    # dF = sa * da + sb * db - 2k rhs e^{2kw} dw_coeff
    sa = comb(m - 1, k - 1) * b ** (k - 1)
    sb = (
        comb(m - 1, k) * k * b ** (k - 1) if k <= m - 1 else np.zeros_like(b)
    )
    if k >= 2:
        sb = sb + comb(m - 1, k - 1) * (k - 1) * a * b ** (k - 2)
    over_r_op = np.where(r == 0.0, 0.0, inv_r)[:, None] * D
    over_r_op[r == 0.0] = D2[r == 0.0]
    da = (m - 1) * (D2 + over_r_op)
    db = (
        D2
        + (2 * m - 3) * over_r_op
        + 2 * (m - 2) * dw[:, None] * D
    )
    J = sa[:, None] * da + sb[:, None] * db
    J -= np.diag(2.0 * k * rhs_scale * e2kw)
    F = F / scale
    J = J / scale[:, None]
    # boundary rows: r is descending from r1 at index 0 to r0 at index -1
    F[0] = w[0] - b1
    J[0] = 0.0
    J[0, 0] = 1.0
    if is_ball:
        F[-1] = dw[-1]
        J[-1] = D[-1]
    else:
        F[-1] = w[-1] - b0
        J[-1] = 0.0
        J[-1, -1] = 1.0
    return F, J


def _admissible_residual(w, r, D, D2, t, k, m, rhs_scale, b1, b0, is_ball):
    dw, d2w = D @ w, D2 @ w
    r_safe = np.where(r == 0.0, 1.0, r)
    dw_over_r = np.where(r == 0.0, d2w, dw / r_safe)
    anchor = (rhs_scale / comb(m, k)) ** (1.0 / k)
    base = (1.0 - t) * anchor
    a = base + (m - 1) * (d2w + dw_over_r)
    b = base + d2w + (2 * m - 3) * dw_over_r + (m - 2) * dw**2
    if np.any(_sigma_pair_margin(a, b, k, m) <= 0.0):
        return False, np.inf
    e2kw = np.exp(2.0 * k * w)
    F = (sigma_pair(a, b, k, m) - rhs_scale * e2kw) / (1.0 + rhs_scale * e2kw)
    F[0] = w[0] - b1
    F[-1] = dw[-1] if is_ball else w[-1] - b0
    return True, np.max(np.abs(F))
