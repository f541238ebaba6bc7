"""Shared generators and independent oracles used across the test suite.

Everything here is deliberately written without the package's fast paths:
Kronecker expansions are built column by column, the variational linear
regression runs on plain numpy inverses, and the synthetic systems are
assembled through the public generator API with fixed seeds. Tests compare
the package against these references.
"""

import numpy as np

from bayesvolterra import (
    FitConfig,
    build_lagged_matrix,
    calibrate_components,
    identify,
    random_cpd_system,
    synthesize,
)


def kron_chain(columns):
    """Kronecker product of a list of vectors with the first one fastest."""
    acc = np.asarray(columns[0], dtype=float)
    for col in columns[1:]:
        acc = np.kron(np.asarray(col, dtype=float), acc)
    return acc


def cpd_expand(factors):
    """Reference expansion: sum of per-column Kronecker chains."""
    factors = [np.asarray(f, dtype=float) for f in factors]
    rank = factors[0].shape[1]
    total = kron_chain([f[:, 0] for f in factors])
    for r in range(1, rank):
        total = total + kron_chain([f[:, r] for f in factors])
    return total


def monomial_vector(u, order):
    """The degree-`order` monomials of u, laid out like cpd_expand."""
    return kron_chain([u] * order)


def cpd_kernels_order2(factors):
    """Expand D=2 window-space CPD factors into explicit order-0/1/2 kernels.

    The window carries (1, lags), so the rank-one products mix polynomial
    orders; collecting terms by how many lag entries they touch gives the
    constant, the linear kernel, and the quadratic kernel.
    """
    window = np.shape(factors[0])[0]
    grid = cpd_expand(factors).reshape(window, window)
    constant = float(grid[0, 0])
    linear = grid[0, 1:] + grid[1:, 0]
    quadratic = grid[1:, 1:].copy()
    return [constant, linear, quadratic]


def vb_linear_oracle(U, y, sweeps, priors=(1e-6,) * 6):
    """Variational Bayesian linear regression with a lam * diag(delta) prior.

    Independent reference for the single-factor model: plain numpy
    inverses, coordinate order weights -> delta -> lam -> tau per sweep,
    matching the package's sweep order. Returns the final posteriors.
    """
    a0, b0, c0, d0, g0, h0 = priors
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    window, n = U.shape
    gram = U @ U.T
    uy = U @ y
    lam = c0 / d0
    dlt = np.full(window, g0 / h0)
    tau = a0 / b0
    mean = np.zeros(window)
    cov = np.eye(window)
    a_n, b_n = a0, b0
    for _ in range(sweeps):
        cov = np.linalg.inv(tau * gram + lam * np.diag(dlt))
        mean = tau * (cov @ uy)
        sq = mean**2 + np.diag(cov)
        g_n = g0 + 0.5
        h_n = h0 + 0.5 * lam * sq
        dlt = g_n / h_n
        c_n = c0 + 0.5 * window
        d_n = d0 + 0.5 * float(dlt @ sq)
        lam = c_n / d_n
        resid = float(((y - mean @ U) ** 2).sum())
        resid += float(np.einsum("in,ij,jn->", U, cov, U))
        a_n = a0 + 0.5 * n
        b_n = b0 + 0.5 * resid
        tau = a_n / b_n
    return {
        "mean": mean,
        "cov": cov,
        "delta": dlt,
        "lam": lam,
        "tau": tau,
        "noise_shape": a_n,
        "noise_rate": b_n,
    }


def student_t_oracle(window, oracle):
    """Closed-form Student-t predictive of the linear-regression oracle."""
    window = np.asarray(window, dtype=float)
    location = float(oracle["mean"] @ window)
    scale_sq = oracle["noise_rate"] / oracle["noise_shape"]
    scale_sq += float(window @ oracle["cov"] @ window)
    return location, float(np.sqrt(scale_sq)), 2.0 * oracle["noise_shape"]


def fading_row_scale(memory=10, active_lags=4):
    """Window-row mask keeping the constant term and the first few lags."""
    scale = np.zeros(memory + 1)
    scale[0] = 1.0
    scale[1 : 1 + active_lags] = 1.0
    return scale


def make_rank2_data(seed, n=2000, memory=10, snr_db=20.0, row_scale=None):
    """Rank-2 quadratic system excited by uniform noise, at a fixed SNR.

    Both rank-one components are calibrated to unit clean-output std so
    neither drowns out the other; the noise std is set from the clean
    output. Returns (u, y, sigma).
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 1.0, n)
    system = random_cpd_system(2, memory, 2, rng, row_scale=row_scale)
    system = calibrate_components(system, u, component_std=1.0)
    clean = synthesize(system, u).y
    sigma = float(clean.std()) * 10.0 ** (-snr_db / 20.0)
    y = clean + sigma * rng.standard_normal(n)
    return u, y, sigma


def make_fading_data(seed, n_est=500, n_val=500, memory=10, snr_db=20.0):
    """Rank-2 system with kernel support only on the first four lags."""
    u, y, sigma = make_rank2_data(
        seed,
        n=n_est + n_val,
        memory=memory,
        snr_db=snr_db,
        row_scale=fading_row_scale(memory),
    )
    return u, y, sigma, n_est


def fit_rank2(seed, max_iter=800, rank=10, elbo_rel_tol=1e-9):
    """Fit the rank-recovery instance for one seed; returns (state, trace, sigma)."""
    u, y, sigma = make_rank2_data(seed)
    config = FitConfig(
        order=2,
        rank=rank,
        max_iter=max_iter,
        elbo_rel_tol=elbo_rel_tol,
        seed=seed,
    )
    state, trace = identify(build_lagged_matrix(u, 10), y, config)
    return state, trace, sigma
