"""Independent oracles used as ground truth by the test suite.

Everything here deliberately avoids the library's own code paths: moments are
computed by adaptive quadrature of the normal density, optimal transport by a
generic exact LP solver, the 1-d Gaussian W2 by quantile coupling, and the
scalar quantizer by a from-scratch fixed point driven by quadrature.
"""

import math

import numpy as np
from scipy import integrate, optimize


def npdf(x, mu=0.0, var=1.0):
    return math.exp(-0.5 * (x - mu) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def quad_truncated_moments(mu, var, lo, hi):
    """(mass, conditional mean, conditional variance) by adaptive quadrature."""
    f = lambda z: npdf(z, mu, var)
    mass, _ = integrate.quad(f, lo, hi, limit=200)
    m1, _ = integrate.quad(lambda z: z * f(z), lo, hi, limit=200)
    m2, _ = integrate.quad(lambda z: z * z * f(z), lo, hi, limit=200)
    mean = m1 / mass
    return mass, mean, m2 / mass - mean * mean


def quad_rectified_moments(mu, var, lo, hi):
    """Moments of min(max(Z, lo), hi) by quadrature plus boundary atoms."""
    f = lambda z: npdf(z, mu, var)
    s = math.sqrt(var)
    p_lo, _ = integrate.quad(f, mu - 14 * s, lo, limit=200) if lo > mu - 14 * s else (0.0, 0.0)
    p_hi, _ = integrate.quad(f, hi, mu + 14 * s, limit=200) if hi < mu + 14 * s else (0.0, 0.0)
    m1_in, _ = integrate.quad(lambda z: z * f(z), max(lo, mu - 14 * s), min(hi, mu + 14 * s), limit=200)
    m2_in, _ = integrate.quad(lambda z: z * z * f(z), max(lo, mu - 14 * s), min(hi, mu + 14 * s), limit=200)
    m1 = lo * p_lo + hi * p_hi + m1_in
    m2 = lo * lo * p_lo + hi * hi * p_hi + m2_in
    return m1, m2


def quantile_coupling_w2_1d(mu1, var1, mu2, var2):
    """1-d Gaussian W2 via the quantile coupling integral of (F^-1 - G^-1)^2."""
    from scipy.special import ndtri

    def f(u):
        q = ndtri(u)
        return ((mu1 + math.sqrt(var1) * q) - (mu2 + math.sqrt(var2) * q)) ** 2

    val, _ = integrate.quad(f, 0.0, 1.0, limit=400)
    return math.sqrt(max(val, 0.0))


def lp_transport_oracle(cost, a, b):
    """Exact transportation LP via scipy's HiGHS solver.

    Returns the optimal objective value.  Used as the generic exact-LP
    reference for the in-package network simplex.
    """
    cost = np.asarray(cost, dtype=float)
    m, n = cost.shape
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # equality constraints: row sums = a, col sums = b (drop one redundant row)
    var_idx = np.arange(m * n)
    rows = np.concatenate([var_idx // n, m + (var_idx % n)])
    cols = np.concatenate([var_idx, var_idx])
    data = np.ones(2 * m * n)
    from scipy.sparse import csr_matrix
    a_eq = csr_matrix((data, (rows, cols)), shape=(m + n, m * n))
    b_eq = np.concatenate([a, b])
    res = optimize.linprog(cost.ravel(), A_eq=a_eq[:-1], b_eq=b_eq[:-1],
                           bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"oracle LP failed: {res.message}")
    return float(res.fun)


def semidiscrete_w2_lp(samples, locations, weights):
    """Exact W2 between a uniform empirical measure and weighted atoms via HiGHS."""
    samples = np.asarray(samples, dtype=float)
    locations = np.asarray(locations, dtype=float)
    n = samples.shape[0]
    cost = (np.sum(samples * samples, axis=1)[:, None]
            + np.sum(locations * locations, axis=1)[None, :]
            - 2.0 * samples @ locations.T)
    np.maximum(cost, 0.0, out=cost)
    a = np.full(n, 1.0 / n)
    val = lp_transport_oracle(cost, a, np.asarray(weights, dtype=float))
    return math.sqrt(max(val, 0.0))


def quad_lloyd_quantizer(n, tol=1e-12, max_iters=200000):
    """Scalar Lloyd-Max quantizer of N(0,1) driven entirely by quadrature.

    Independent fixed point: centroids from integrals of the density, cell
    edges from midpoints.  Returns (locations, w2sq).
    """
    from scipy.special import ndtri
    c = ndtri((np.arange(n) + 0.5) / n)
    if n == 1:
        return np.zeros(1), 1.0
    for _ in range(max_iters):
        edges = np.concatenate([[-np.inf], 0.5 * (c[1:] + c[:-1]), [np.inf]])
        new = np.empty_like(c)
        for i in range(n):
            lo = edges[i] if np.isfinite(edges[i]) else c[i] - 40.0
            hi = edges[i + 1] if np.isfinite(edges[i + 1]) else c[i] + 40.0
            mass, _ = integrate.quad(npdf, lo, hi, limit=200)
            m1, _ = integrate.quad(lambda z: z * npdf(z), lo, hi, limit=200)
            new[i] = m1 / mass
        if np.max(np.abs(new - c)) < tol:
            c = new
            break
        c = new
    edges = np.concatenate([[-np.inf], 0.5 * (c[1:] + c[:-1]), [np.inf]])
    w2sq = 0.0
    for i in range(n):
        lo = edges[i] if np.isfinite(edges[i]) else c[i] - 40.0
        hi = edges[i + 1] if np.isfinite(edges[i + 1]) else c[i] + 40.0
        val, _ = integrate.quad(lambda z: (z - c[i]) ** 2 * npdf(z), lo, hi, limit=200)
        w2sq += val
    return c, w2sq


def mc_mean_se(values):
    """Mean and Monte Carlo standard error of i.i.d. scalar estimates."""
    values = np.asarray(values, dtype=float)
    se = values.std(ddof=1) / math.sqrt(len(values)) if len(values) > 1 else 0.0
    return float(values.mean()), float(se)


def stratified_w2_batches(p, q, n, k, rng):
    """Mean and SE of empirical W2 over k fresh stratified sample pairs.

    Each batch draws its own n-point stratified samples from both mixtures,
    so every batch respects the exact component proportions (chunking one
    stratified array would put single components into each chunk).
    """
    from wassnet.transport import empirical_w2

    vals = [empirical_w2(p.sample_stratified(n, rng),
                         q.sample_stratified(n, rng)) for _ in range(k)]
    return mc_mean_se(vals)
