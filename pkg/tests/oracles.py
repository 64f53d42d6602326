"""Brute-force numerical oracles used by the test suite.

These deliberately avoid the closed-form quadrature identities in the
package: integrals are computed on dense tensor grids from the kernel and
mixture definitions, with explicit matrix inverses. Kept independent so
they can certify the analytic path.
"""

import numpy as np

from vbmc.gp import se_kernel_matrix


def _grid_1d(vp, post, points):
    """Uniform grid covering the mixture mass and all training points."""
    s = vp.sigma.max() * vp.lam.max()
    lo = min(vp.mu.min() - 8.5 * s, -1.0)
    hi = max(vp.mu.max() + 8.5 * s, 1.0)
    if post.n > 0:
        ell = post.hyp.ell.max()
        lo = min(lo, post.train.X.min() - 5 * ell)
        hi = max(hi, post.train.X.max() + 5 * ell)
    return np.linspace(lo, hi, points)


def oracle_g_mean_1d(vp, post, points=4001):
    g = _grid_1d(vp, post, points)
    q = vp.pdf(g[:, None])
    fbar, _ = post.predict(g[:, None])
    return np.trapezoid(q * fbar, g)


def oracle_g_var_1d(vp, post, points=3001):
    g = _grid_1d(vp, post, points)
    h = g[1] - g[0]
    wq = vp.pdf(g[:, None]) * h
    wq[0] *= 0.5
    wq[-1] *= 0.5
    hyp = post.hyp
    Kg = se_kernel_matrix(g[:, None], g[:, None], hyp)
    term1 = wq @ Kg @ wq
    if post.n == 0:
        return term1
    X = post.train.X
    Kxx = se_kernel_matrix(X, X, hyp) + (hyp.sobs**2 + post.jitter) * np.eye(post.n)
    b = se_kernel_matrix(g[:, None], X, hyp).T @ wq
    return term1 - b @ np.linalg.inv(Kxx) @ b


def _grid_2d(vp, post, points):
    axes = []
    for d in range(2):
        s = vp.sigma.max() * vp.lam[d]
        lo = vp.mu[:, d].min() - 8.5 * s
        hi = vp.mu[:, d].max() + 8.5 * s
        if post.n > 0:
            ell = post.hyp.ell[d]
            lo = min(lo, post.train.X[:, d].min() - 5 * ell)
            hi = max(hi, post.train.X[:, d].max() + 5 * ell)
        axes.append(np.linspace(lo, hi, points))
    return axes


def oracle_g_mean_2d(vp, post, points=451):
    ax1, ax2 = _grid_2d(vp, post, points)
    xx, yy = np.meshgrid(ax1, ax2, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    q = vp.pdf(pts)
    fbar, _ = post.predict(pts)
    vals = (q * fbar).reshape(points, points)
    return np.trapezoid(np.trapezoid(vals, ax2, axis=1), ax1)


def oracle_g_var_2d(vp, post, points=351):
    ax1, ax2 = _grid_2d(vp, post, points)
    hyp = post.hyp

    def trap_w(ax):
        w = np.full(ax.size, ax[1] - ax[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    xx, yy = np.meshgrid(ax1, ax2, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    WQ = (vp.pdf(pts).reshape(points, points)) * np.outer(trap_w(ax1), trap_w(ax2))

    # separable kernel: the double integral over the tensor grid reduces to
    # two per-axis kernel contractions
    K1 = np.exp(-0.5 * (ax1[:, None] - ax1[None, :]) ** 2 / hyp.ell[0] ** 2)
    K2 = np.exp(-0.5 * (ax2[:, None] - ax2[None, :]) ** 2 / hyp.ell[1] ** 2)
    term1 = hyp.sf2 * float(np.sum(WQ * (K1 @ WQ @ K2.T)))
    if post.n == 0:
        return term1
    X = post.train.X
    Kxx = se_kernel_matrix(X, X, hyp) + (hyp.sobs**2 + post.jitter) * np.eye(post.n)
    b = se_kernel_matrix(pts, X, hyp).T @ WQ.ravel()
    return term1 - b @ np.linalg.inv(Kxx) @ b


def oracle_g_mean(vp, post):
    return oracle_g_mean_1d(vp, post) if vp.D == 1 else oracle_g_mean_2d(vp, post)


def oracle_g_var(vp, post):
    return oracle_g_var_1d(vp, post) if vp.D == 1 else oracle_g_var_2d(vp, post)
