"""Coordinate-ascent variational updates and the identification loop.

All updates are exact conjugate steps, so the evidence lower bound is
non-decreasing across sweeps at fixed rank; the tests lean on that
property heavily. Rank truncation runs once per sweep after the bound is
recorded, so every trace entry describes a state of fixed rank.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import digamma, gammaln

from .errors import NumericFailure
from .features import expected_gram, expected_residual, khatri_rao, second_moments
from .model import FactorPosterior, GammaPosterior, init_state, prior_precision

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class FitConfig:
    """Loop controls for identify.

    noise_update selects when the noise precision is refreshed: "sweep"
    (default, keeps every coordinate ascending so the bound is monotone)
    or "final" (only after the loop). ordered_sums switches the large
    per-sample reductions to a fixed left-to-right accumulation.
    """

    order: int
    rank: int = 20
    max_iter: int = 200
    elbo_rel_tol: float = 1e-6
    truncation_threshold: float = 1e-3
    lag_sparsity: bool = True
    noise_update: str = "sweep"
    ordered_sums: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be at least 1")
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.elbo_rel_tol > 0:
            raise ValueError("elbo_rel_tol must be positive")
        if not self.truncation_threshold > 0:
            raise ValueError("truncation_threshold must be positive")
        if self.noise_update not in ("sweep", "final"):
            raise ValueError("noise_update must be 'sweep' or 'final'")


@dataclass
class FitTrace:
    """Per-sweep history: bound, rank, E[noise precision], elapsed wall time."""

    iterations: list = field(default_factory=list)
    elbo: list = field(default_factory=list)
    rank: list = field(default_factory=list)
    noise_mean: list = field(default_factory=list)
    wall_s: list = field(default_factory=list)

    def append(self, iteration, elbo, rank, noise_mean, wall_s):
        self.iterations.append(int(iteration))
        self.elbo.append(float(elbo))
        self.rank.append(int(rank))
        self.noise_mean.append(float(noise_mean))
        self.wall_s.append(float(wall_s))

    def __len__(self):
        return len(self.iterations)

    @property
    def final_elbo(self):
        return self.elbo[-1]


def _solve_spd(matrix, label):
    """Invert a symmetric PD matrix via Cholesky; returns (inverse, logdet).

    One jitter retry (1e-10 times the mean diagonal magnitude) before
    giving up with a NumericFailure.
    """
    size = matrix.shape[0]
    eye = np.eye(size)
    try:
        factor = cho_factor(matrix, lower=True)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * float(np.trace(matrix)) / size
        try:
            factor = cho_factor(matrix + jitter * eye, lower=True)
        except np.linalg.LinAlgError as err:
            raise NumericFailure(
                f"{label}: Cholesky failed twice (jitter {jitter:.3e})"
            ) from err
    inverse = cho_solve(factor, eye)
    logdet = 2.0 * float(np.log(np.diag(factor[0])).sum())
    return inverse, logdet


def _logdet_psd(matrix, label):
    sign, logdet = np.linalg.slogdet(matrix)
    if sign <= 0 or not np.isfinite(logdet):
        raise NumericFailure(f"{label}: covariance is not positive definite")
    return float(logdet)


def _all_second_moments(state, U, uu=None):
    return [second_moments(U, f.mean, f.cov, uu) for f in state.factors]


def _cross_weights(moments, skip, rank, n_samples):
    out = np.ones((rank, rank, n_samples))
    for k, stack in enumerate(moments):
        if k == skip:
            continue
        out = out * stack
    return out


def update_factor(state, U, y, mode, moments=None, uu=None, ordered=False):
    """Exact Gaussian update of one factor given all other posteriors.

    `moments` carries the second-moment stacks of every mode (the entry
    for `mode` itself is unused); they are recomputed when omitted. The
    new posterior is assigned into the state and returned.
    """
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    window, n_samples = U.shape
    rank = state.rank
    if moments is None:
        moments = _all_second_moments(state, U, uu)
    weights = _cross_weights(moments, mode, rank, n_samples)
    gram = expected_gram(U, weights, uu=uu, ordered=ordered)
    gram = 0.5 * (gram + gram.T)
    tau = float(state.noise.mean)
    precision = tau * gram + prior_precision(state)
    cov, prec_logdet = _solve_spd(precision, f"factor {mode}")
    cov = 0.5 * (cov + cov.T)
    # right-hand side E[G] y, with the design matrix at the current means
    h = np.ones((rank, n_samples))
    for k, fac in enumerate(state.factors):
        if k == mode:
            continue
        h *= fac.mean.T @ U
    if ordered:
        rhs = np.zeros(rank * window)
        for n in range(n_samples):
            rhs += y[n] * np.kron(h[:, n], U[:, n])
    else:
        rhs = ((h * y) @ U.T).ravel()
    vec_mean = tau * (cov @ rhs)
    if not np.isfinite(vec_mean).all():
        raise NumericFailure(f"factor {mode}: posterior mean is not finite")
    posterior = FactorPosterior(
        mean=vec_mean.reshape(rank, window).T,
        cov=cov,
        cov_logdet=-prec_logdet,
    )
    state.factors[mode] = posterior
    return posterior


def update_row_precisions(state):
    """Gamma update of the shared per-lag precisions.

    shape: prior + D*R/2; rate: prior + half the column-precision-weighted
    second moments of each row, summed over factors. Only the covariance
    diagonal enters because the column precision matrix is diagonal.
    """
    if state.row_prec_fixed:
        raise ValueError("row precisions are fixed for this state")
    col = np.asarray(state.col_prec.mean, dtype=float)
    acc = np.zeros(state.window)
    for f in state.factors:
        acc += f.entry_second_moments() @ col
    posterior = GammaPosterior(
        np.full(state.window, state.priors.row_shape + 0.5 * state.order * state.rank),
        state.priors.row_rate + 0.5 * acc,
    )
    state.row_prec = posterior
    return posterior


def update_col_precisions(state):
    """Gamma update of the per-column (rank) precisions.

    shape: prior + D*I/2; rate: prior + half the row-precision-weighted
    second moments of each column, summed over factors.
    """
    row = state.row_prec_means()
    acc = np.zeros(state.rank)
    for f in state.factors:
        acc += f.entry_second_moments().T @ row
    posterior = GammaPosterior(
        np.full(state.rank, state.priors.col_shape + 0.5 * state.order * state.window),
        state.priors.col_rate + 0.5 * acc,
    )
    state.col_prec = posterior
    return posterior


def update_noise_precision(state, U, y, moments=None, uu=None, ordered=False):
    """Gamma update of the noise precision from the expected residual."""
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    if moments is None:
        moments = _all_second_moments(state, U, uu)
    resid = expected_residual(U, y, state.factor_means, moments, ordered=ordered)
    posterior = GammaPosterior(
        float(state.priors.noise_shape + 0.5 * y.size),
        float(state.priors.noise_rate + 0.5 * max(resid, 0.0)),
    )
    state.noise = posterior
    return posterior


def _gamma_prior_and_entropy(posterior, prior_shape, prior_rate):
    """E_q[ln p(x)] + H(q) summed over independent Gamma coordinates."""
    a = np.asarray(posterior.shape, dtype=float)
    b = np.asarray(posterior.rate, dtype=float)
    mean = a / b
    mean_log = digamma(a) - np.log(b)
    expected_prior = (
        prior_shape * np.log(prior_rate)
        - gammaln(prior_shape)
        + (prior_shape - 1.0) * mean_log
        - prior_rate * mean
    )
    entropy = a - np.log(b) + gammaln(a) + (1.0 - a) * digamma(a)
    return float(np.sum(expected_prior + entropy))


def compute_elbo(state, U, y, moments=None, uu=None, ordered=False):
    """Evidence lower bound of the current posterior, in closed form.

    Assembles the expected log-likelihood (via the expected residual and
    E[ln tau]), the expected factor and Gamma log-priors, and the Gaussian
    and Gamma entropies. With row_prec_fixed the lag precisions are a
    constant 1 and contribute no Gamma terms.
    """
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    window, n_samples = U.shape
    rank = state.rank
    if moments is None:
        moments = _all_second_moments(state, U, uu)
    col = np.asarray(state.col_prec.mean, dtype=float)
    col_log = np.asarray(state.col_prec.expected_log, dtype=float)
    if state.row_prec_fixed:
        row = np.ones(window)
        row_log = np.zeros(window)
    else:
        row = np.asarray(state.row_prec.mean, dtype=float)
        row_log = np.asarray(state.row_prec.expected_log, dtype=float)
    tau = float(state.noise.mean)
    tau_log = float(digamma(state.noise.shape) - np.log(state.noise.rate))
    priors = state.priors

    resid = expected_residual(U, y, state.factor_means, moments, ordered=ordered)
    bound = 0.5 * n_samples * (tau_log - LOG_2PI) - 0.5 * tau * resid

    sum_col_log = float(col_log.sum())
    sum_row_log = float(row_log.sum())
    for d, f in enumerate(state.factors):
        sq = f.entry_second_moments()
        bound += 0.5 * (window * sum_col_log + rank * sum_row_log
                        - window * rank * LOG_2PI)
        bound -= 0.5 * float(row @ sq @ col)
        logdet = f.cov_logdet
        if logdet is None:
            logdet = _logdet_psd(f.cov, f"factor {d}")
        bound += 0.5 * logdet + 0.5 * window * rank * (1.0 + LOG_2PI)

    bound += _gamma_prior_and_entropy(state.col_prec, priors.col_shape, priors.col_rate)
    if not state.row_prec_fixed:
        bound += _gamma_prior_and_entropy(state.row_prec, priors.row_shape,
                                          priors.row_rate)
    bound += _gamma_prior_and_entropy(state.noise, priors.noise_shape,
                                      priors.noise_rate)
    if not np.isfinite(bound):
        raise NumericFailure("evidence bound is not finite")
    return float(bound)


def truncate_rank(state, threshold):
    """Drop CPD columns that are negligibly small in every factor mean.

    A column survives if its RMS, relative to the largest column RMS of
    the same factor, reaches the threshold in at least one factor. At
    least one column is always retained; matching column-precision entries
    and covariance blocks are removed with the columns. Returns True when
    the rank changed.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    rank = state.rank
    if rank == 1:
        return False
    score = np.zeros(rank)
    for f in state.factors:
        rms = np.sqrt((f.mean**2).mean(axis=0))
        top = float(rms.max())
        rel = rms / top if top > 0 else np.ones(rank)
        score = np.maximum(score, rel)
    keep = np.flatnonzero(score >= threshold)
    if keep.size == 0:
        keep = np.array([int(score.argmax())])
    if keep.size == rank:
        return False
    window = state.window
    idx = (keep[:, None] * window + np.arange(window)[None, :]).ravel()
    state.factors = [
        FactorPosterior(mean=f.mean[:, keep], cov=f.cov[np.ix_(idx, idx)])
        for f in state.factors
    ]
    state.col_prec = GammaPosterior(
        np.asarray(state.col_prec.shape, dtype=float)[keep].copy(),
        np.asarray(state.col_prec.rate, dtype=float)[keep].copy(),
    )
    return True


def identify(U, y, config, priors=None, normalization=None):
    """Run the full coordinate-ascent identification loop.

    U is the I x N lagged window matrix and y the length-N output in model
    units. Each sweep updates every factor, then the lag precisions
    (unless disabled), the column precisions, and the noise precision
    (unless deferred), records the bound, and finally truncates the rank.
    The loop stops when the relative bound change at fixed rank drops
    below elbo_rel_tol or max_iter is reached; one last noise update keeps
    the noise posterior consistent with the final factors.

    Returns (ModelState, FitTrace). Numeric failures carry the sweep index.
    """
    U = np.asarray(U, dtype=float)
    y = np.asarray(y, dtype=float)
    if U.ndim != 2:
        raise ValueError("U must be a matrix")
    if y.ndim != 1 or y.size != U.shape[1]:
        raise ValueError(f"y has shape {y.shape}, expected ({U.shape[1]},)")
    if not np.isfinite(U).all() or not np.isfinite(y).all():
        raise ValueError("inputs must be finite")
    state = init_state(
        config.order,
        U.shape[0] - 1,
        config.rank,
        priors=priors,
        seed=config.seed,
        normalization=normalization,
        row_prec_fixed=not config.lag_sparsity,
    )
    uu = None if config.ordered_sums else khatri_rao(U, U)
    moments = _all_second_moments(state, U, uu)
    trace = FitTrace()
    previous = None
    started = time.perf_counter()
    for sweep in range(1, config.max_iter + 1):
        try:
            for d in range(state.order):
                posterior = update_factor(state, U, y, d, moments=moments, uu=uu,
                                          ordered=config.ordered_sums)
                moments[d] = second_moments(U, posterior.mean, posterior.cov, uu)
            if config.lag_sparsity:
                update_row_precisions(state)
            update_col_precisions(state)
            if config.noise_update == "sweep":
                update_noise_precision(state, U, y, moments=moments, uu=uu,
                                       ordered=config.ordered_sums)
            bound = compute_elbo(state, U, y, moments=moments, uu=uu,
                                 ordered=config.ordered_sums)
        except NumericFailure as err:
            err.iteration = sweep
            raise
        trace.append(sweep, bound, state.rank, float(state.noise.mean),
                     time.perf_counter() - started)
        if truncate_rank(state, config.truncation_threshold):
            # rank changed: refresh caches and restart the convergence window
            moments = _all_second_moments(state, U, uu)
            previous = None
            continue
        if previous is not None and abs(bound - previous) < (
            config.elbo_rel_tol * (1.0 + abs(previous))
        ):
            break
        previous = bound
    update_noise_precision(state, U, y, moments=moments, uu=uu,
                           ordered=config.ordered_sums)
    return state, trace
