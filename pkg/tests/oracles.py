"""Independent reference computations used by the tests.

Nothing here calls the library's solvers: the EL primal is brute-forced
on a simplex grid, the noncentral chi2 tail is integrated from its Bessel
density, and Markov variances are summed lag by lag.
"""

import numpy as np
from scipy import integrate, special


def primal_grid_ratio(Y, step=1e-3, refine=1e-7):
    """``-max sum_j log(l q_j)`` over ``{q in simplex : sum q_j Y_j = 0}`` for
    scalar ``Y`` with ``l <= 3``; ``inf`` when the constraint set has no
    strictly positive point.

    For ``l = 3`` the free coordinate ``q_1`` runs over a grid of the given
    step, the other two solve the constraints, and the best cell is then
    rescanned with a fine grid.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    l = Y.size
    if l == 1:
        return 0.0 if Y[0] == 0 else np.inf
    if l == 2:
        if Y[0] == Y[1]:
            return 0.0 if Y[0] == 0 else np.inf
        q1 = Y[1] / (Y[1] - Y[0])
        if not 0 < q1 < 1:
            return np.inf
        return -float(np.log(2 * q1) + np.log(2 * (1 - q1)))
    if l != 3:
        raise ValueError("oracle handles l <= 3")
    if Y[1] == Y[2]:
        # one free coordinate is pinned: q1 Y1 + (1 - q1) Y2 = 0, q2 = q3
        if Y[0] == Y[1]:
            return 0.0 if Y[0] == 0 else np.inf
        q1 = Y[1] / (Y[1] - Y[0])
        if not 0 < q1 < 1:
            return np.inf
        return -float(np.log(3 * q1) + 2 * np.log(1.5 * (1 - q1)))

    def objective(q1):
        q1 = np.atleast_1d(q1)
        rest = 1.0 - q1
        with np.errstate(divide="ignore", invalid="ignore"):
            # q2 Y2 + q3 Y3 = -q1 Y1, q2 + q3 = rest
            q3 = (-q1 * Y[0] - rest * Y[1]) / (Y[2] - Y[1])
            q2 = rest - q3
            good = (q1 > 0) & (q2 > 0) & (q3 > 0)
            val = np.where(good, np.log(3 * q1) + np.log(3 * np.where(good, q2, 1))
                           + np.log(3 * np.where(good, q3, 1)), -np.inf)
        return val

    grid = np.arange(step, 1.0, step)
    vals = objective(grid)
    k = int(np.argmax(vals))
    if not np.isfinite(vals[k]):
        fine = np.arange(refine, 1.0, max(refine, 1e-5))
        vals = objective(fine)
        k = int(np.argmax(vals))
        if not np.isfinite(vals[k]):
            return np.inf
        grid = fine
    lo = max(grid[k] - step, refine)
    hi = min(grid[k] + step, 1.0 - refine)
    fine = np.arange(lo, hi, refine)
    return -float(np.max(objective(fine)))


def ncx2_sf_quad(x, df, ncp):
    """Upper tail of the noncentral chi2 by quadrature of its density
    ``0.5 exp(-(t + ncp)/2) (t/ncp)^(df/4 - 1/2) I_{df/2-1}(sqrt(ncp t))``.
    """
    if ncp == 0:
        def dens(t):
            return np.exp(-t / 2 + (df / 2 - 1) * np.log(t) - (df / 2) * np.log(2)
                          - special.gammaln(df / 2))
    else:
        def dens(t):
            s = np.sqrt(ncp * t)
            # ive(v, s) = iv(v, s) exp(-s): keeps the exponent bounded
            return (0.5 * np.exp(-(t + ncp) / 2 + s) * (t / ncp) ** (df / 4 - 0.5)
                    * special.ive(df / 2 - 1, s))
    val, _ = integrate.quad(dens, x, np.inf, epsabs=1e-13, epsrel=1e-11, limit=500)
    return val


def markov_autocov_sum(P, f, lags=2000):
    """``Var_pi f + 2 sum_{k>=1} Cov_pi(f(X_0), f(X_k))`` by explicit powers of P."""
    P = np.asarray(P, dtype=float)
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    pi = pi / pi.sum()
    f = np.asarray(f, dtype=float)
    fc = f - pi @ f
    total = pi @ (fc * fc)
    g = fc.copy()
    for _ in range(lags):
        g = P @ g
        total += 2 * pi @ (fc * g)
    return float(total)


def ar1_block_bootstrap_variance(n, L, rho, innovation_var):
    """Expected non-overlapping block bootstrap variance of the mean of a
    stationary AR(1): ``Var(S_L) / (L n)`` with ``S_L`` a block sum.
    """
    g0 = innovation_var / (1 - rho ** 2)
    k = np.arange(1, L)
    var_sum = g0 * (L + 2 * np.sum((L - k) * rho ** k))
    return var_sum / L / n


def ar1_uniform_transition_density(x, y, rho, half_width):
    return (np.abs(y - rho * x) <= half_width) / (2 * half_width)
