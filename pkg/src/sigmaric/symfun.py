"""Elementary symmetric functions, Newton transformations and Garding cones.

Everything here is pointwise linear algebra on small symmetric matrices or
eigenvalue vectors.  These routines are the algebraic kernel shared by the
conformal operators, the linearization and the solvers.
"""

from math import comb

import numpy as np

__all__ = [
    "sigma_k",
    "sigma_all",
    "sigma_from_matrix",
    "newton_transform",
    "sigma_all_batch",
    "cone_contains",
    "cone_margin",
    "maclaurin_ratios",
]


def _as_vector(lam):
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1 or lam.size < 1:
        raise ValueError("eigenvalue vector must be 1-d and nonempty")
    if not np.all(np.isfinite(lam)):
        raise ValueError("eigenvalue vector must be finite")
    return lam


def sigma_all(lam):
    """All elementary symmetric polynomials e_0..e_m of the entries of lam.

    Uses the stable one-root-at-a-time recurrence (polynomial expansion),
    which is exact for integer inputs up to rounding.
    """
    lam = _as_vector(lam)
    m = lam.size
    e = np.zeros(m + 1)
    e[0] = 1.0
    for x in lam:
        # e_j <- e_j + x * e_{j-1}, updated in place from the top
        e[1:] = e[1:] + x * e[:-1]
    return e


def sigma_k(lam, k):
    """k-th elementary symmetric polynomial of the eigenvalue vector lam."""
    lam = _as_vector(lam)
    m = lam.size
    if not 1 <= k <= m:
        raise ValueError(f"order k={k} out of range 1..{m}")
    return sigma_all(lam)[k]


def _power_traces(W, kmax):
    m = W.shape[0]
    p = np.empty(kmax + 1)
    Wp = np.eye(m)
    p[0] = m
    for j in range(1, kmax + 1):
        Wp = Wp @ W
        p[j] = np.trace(Wp)
    return p


def sigma_from_matrix(W, k):
    """sigma_k of the eigenvalues of W via Newton's identities on traces.

    Basis free: no eigendecomposition, hence robust near repeated spectra.
    """
    W = np.asarray(W, dtype=float)
    m = W.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"order k={k} out of range 1..{m}")
    p = _power_traces(W, k)
    e = np.zeros(k + 1)
    e[0] = 1.0
    for j in range(1, k + 1):
        s = 0.0
        for i in range(1, j + 1):
            s += (-1) ** (i - 1) * e[j - i] * p[i]
        e[j] = s / j
    return e[k]


def newton_transform(W, k):
    """Newton transformation T_k(W) = sigma_k(W) I - T_{k-1}(W) W, T_0 = I.

    Satisfies tr(T_{k-1}(W) W) = k sigma_k(W); T_{k-1} supplies the elliptic
    coefficients of the linearized sigma_k operator.
    """
    W = np.asarray(W, dtype=float)
    m = W.shape[0]
    if W.shape != (m, m):
        raise ValueError("W must be square")
    if not 0 <= k <= m - 1:
        raise ValueError(f"order k={k} out of range 0..{m - 1}")
    T = np.eye(m)
    for j in range(1, k + 1):
        T = sigma_from_matrix(W, j) * np.eye(m) - T @ W
    return T


def cone_margin(lam, k):
    """min_{1<=j<=k} sigma_j(lam); positive iff lam is in the Gamma_k+ cone."""
    lam = _as_vector(lam)
    if not 1 <= k <= lam.size:
        raise ValueError(f"order k={k} out of range 1..{lam.size}")
    return float(np.min(sigma_all(lam)[1 : k + 1]))


def cone_contains(lam, k):
    """Gamma_k+ membership test: sigma_j(lam) > 0 for all j <= k.

    Returns (contained, margin) where margin = min_j sigma_j(lam).
    """
    margin = cone_margin(lam, k)
    return margin > 0.0, margin


def sigma_all_batch(lams):
    """sigma_all applied along the last axis of an (..., m) array.

    Returns an (..., m+1) array; used by the grid solvers where sigma_j is
    needed at every node at once.
    """
    lams = np.asarray(lams, dtype=float)
    m = lams.shape[-1]
    e = np.zeros(lams.shape[:-1] + (m + 1,))
    e[..., 0] = 1.0
    for i in range(m):
        x = lams[..., i : i + 1]
        e[..., 1:] = e[..., 1:] + x * e[..., :-1]
    return e


def maclaurin_ratios(lam, k):
    """MacLaurin ratios r_j = (sigma_j / C(m,j))^(1/j), j = 1..k.

    Nonincreasing in j on Gamma_k+, with equality of r_1 and r_k only at
    constant vectors.
    """
    lam = _as_vector(lam)
    m = lam.size
    contained, _ = cone_contains(lam, k)
    if not contained:
        raise ValueError("lam is not in Gamma_k+; MacLaurin ratios undefined")
    e = sigma_all(lam)
    return np.array([(e[j] / comb(m, j)) ** (1.0 / j) for j in range(1, k + 1)])
