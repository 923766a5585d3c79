"""Posterior probabilities of non-skill (d-values) under the fitted model.

Conditional on the common-factor vector W, the statistics decouple:
Z_i | W ~ N(mu_i + b_i W, lambda_p) with mu_i from the mixture prior. The
posterior P(mu_i <= 0 | Z) is therefore an expectation over W of a ratio of
one-dimensional Gaussian masses, estimated by self-normalized importance
sampling with W drawn from its prior. The companion quantity ("los") is
P(mu_i >= 0 | Z); with a strictly negative spike the two sum to one exactly.

All density work happens in the log domain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .dependence import DependenceModel
from .errors import DataError, NumericalError
from .mixture import MixtureParams
from .streams import substream

ESS_WARN_THRESHOLD = 50.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(eq=False)
class DValueReport:
    """Monte Carlo posterior summaries for each fund."""

    d: np.ndarray
    los: np.ndarray
    ess: float
    n_samples: int
    seed: int


def _log_norm_pdf(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - (x - mean) ** 2 / (2.0 * var)


def _log_mass_nonpositive(mu0, tau_sq, lambda_p, shift, z):
    """log of integral over mu <= 0 of N(z; mu + shift, lambda_p) N(mu; mu0, tau_sq)."""
    total_var = tau_sq + lambda_p
    sig_sq = lambda_p * tau_sq / total_var
    beta = sig_sq * ((z - shift) / lambda_p + mu0 / tau_sq)
    return _log_norm_pdf(z, mu0 + shift, total_var) + log_ndtr(-beta / np.sqrt(sig_sq))


def _log_mass_nonnegative(mu0, tau_sq, lambda_p, shift, z):
    """log of the complementary mass over mu >= 0."""
    total_var = tau_sq + lambda_p
    sig_sq = lambda_p * tau_sq / total_var
    beta = sig_sq * ((z - shift) / lambda_p + mu0 / tau_sq)
    return _log_norm_pdf(z, mu0 + shift, total_var) + log_ndtr(beta / np.sqrt(sig_sq))


def _check_variances(tau_sq, lambda_p):
    if tau_sq <= 0.0 or lambda_p <= 0.0:
        raise DataError("variances must be positive")


def component_mass_nonpositive(mu0, tau_sq, lambda_p, shift, z) -> float:
    """Joint density mass of {statistic = z, component mean <= 0} for one
    Gaussian prior component N(mu0, tau_sq), given factor contribution `shift`."""
    _check_variances(tau_sq, lambda_p)
    return float(np.exp(_log_mass_nonpositive(mu0, tau_sq, lambda_p, shift, z)))


def component_mass_nonnegative(mu0, tau_sq, lambda_p, shift, z) -> float:
    """Complementary mass over nonnegative component means."""
    _check_variances(tau_sq, lambda_p)
    return float(np.exp(_log_mass_nonnegative(mu0, tau_sq, lambda_p, shift, z)))


def _logsumexp3(a, b, c):
    """Elementwise logsumexp of three arrays, -inf safe."""
    m = np.maximum(np.maximum(a, b), c)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe_m + np.log(
            np.exp(a - safe_m) + np.exp(b - safe_m) + np.exp(c - safe_m)
        )
    return np.where(np.isfinite(m), out, m)


def _log_weight(pi):
    return np.log(pi) if pi > 0.0 else -np.inf


def compute_dvalues(
    z: np.ndarray,
    dep: DependenceModel,
    params: MixtureParams,
    n_samples: int = 2000,
    seed: int = 0,
    *,
    block_size: int = 256,
) -> DValueReport:
    """Self-normalized Monte Carlo estimate of d = P(mu <= 0 | Z) per fund.

    Factor draws arrive in blocks; block b uses the substream (seed,
    "dvalues", b), so results are independent of how work is scheduled and the
    first draws of a longer run coincide with a shorter run's. A warning is
    issued when the effective sample size drops below 50.
    """
    z = np.asarray(z, dtype=float)
    p = z.size
    if p == 0:
        raise DataError("empty statistic vector")
    if dep.p != p:
        raise DataError("dependence model and statistic vector disagree on p")
    if n_samples < 2:
        raise DataError("n_samples must be >= 2")
    if block_size < 1:
        raise DataError("block_size must be >= 1")

    lam = dep.lambda_p
    B = dep.B
    rank = dep.rank
    lp0w, lp1w, lp2w = (
        _log_weight(params.pi0),
        _log_weight(params.pi1),
        _log_weight(params.pi2),
    )
    v1 = params.tau1_sq + lam
    v2 = params.tau2_sq + lam
    sig1_sq = lam * params.tau1_sq / v1
    sig2_sq = lam * params.tau2_sq / v2
    sig1 = math.sqrt(sig1_sq)
    sig2 = math.sqrt(sig2_sq)
    spike_in_los = params.nu0 == 0.0

    # streaming self-normalized accumulation with a running max
    run_max = -np.inf
    s0 = 0.0
    s2 = 0.0
    sd = np.zeros(p)
    sl = np.zeros(p)

    n_blocks = (n_samples + block_size - 1) // block_size
    drawn = 0
    for b in range(n_blocks):
        nb = min(block_size, n_samples - drawn)
        drawn += nb
        rng = substream(seed, "dvalues", b)
        W = rng.standard_normal((rank, nb))
        dev = z[:, None] - (B @ W)  # p x nb : z minus factor contribution

        # deviations beyond ~1e154 square to inf; the resulting -inf log
        # density is exactly right, so silence the benign overflow signal
        with np.errstate(over="ignore"):
            lp0 = -0.5 * (_LOG_2PI + math.log(lam)) - (dev - params.nu0) ** 2 / (2.0 * lam)
            lp1 = -0.5 * (_LOG_2PI + math.log(v1)) - (dev - params.nu1) ** 2 / (2.0 * v1)
            lp2 = -0.5 * (_LOG_2PI + math.log(v2)) - (dev - params.nu2) ** 2 / (2.0 * v2)
        c0 = lp0w + lp0
        c1 = lp1w + lp1
        c2 = lp2w + lp2
        logf = _logsumexp3(c0, c1, c2)

        beta1 = sig1_sq * (dev / lam + params.nu1 / params.tau1_sq)
        beta2 = sig2_sq * (dev / lam + params.nu2 / params.tau2_sq)
        lg1 = c1 + log_ndtr(-beta1 / sig1)
        lg2 = c2 + log_ndtr(-beta2 / sig2)
        lq1 = c1 + log_ndtr(beta1 / sig1)
        lq2 = c2 + log_ndtr(beta2 / sig2)

        log_num_d = _logsumexp3(c0, lg1, lg2)
        c0_los = c0 if spike_in_los else np.full_like(c0, -np.inf)
        log_num_los = _logsumexp3(c0_los, lq1, lq2)

        with np.errstate(invalid="ignore"):
            ratio_d = np.exp(log_num_d - logf)
            ratio_los = np.exp(log_num_los - logf)
        dead = ~np.isfinite(logf)
        if np.any(dead):
            ratio_d = np.where(dead, 0.0, ratio_d)
            ratio_los = np.where(dead, 0.0, ratio_los)
        assert np.all(ratio_d <= 1.0 + 1e-9) and np.all(ratio_d >= 0.0)
        ratio_d = np.minimum(ratio_d, 1.0)
        ratio_los = np.minimum(ratio_los, 1.0)

        logw = logf.sum(axis=0)  # nb
        block_max = float(np.max(logw))
        if block_max > run_max:
            if np.isfinite(run_max):
                scale = math.exp(run_max - block_max)
                s0 *= scale
                sd *= scale
                sl *= scale
                s2 *= scale * scale
            run_max = block_max
        if not np.isfinite(run_max):
            continue  # every weight so far is zero
        wex = np.exp(logw - run_max)
        # One summation algorithm for every accumulator: when a posterior
        # ratio is identically 1 (e.g. a pure non-positive spike) the
        # numerator terms equal the denominator terms bit-for-bit, so the
        # final ratio is exactly 1.0 rather than 1 +/- a few ulp.
        s0 += float(wex.sum())
        s2 += float((wex * wex).sum())
        sd += (ratio_d * wex).sum(axis=1)
        sl += (ratio_los * wex).sum(axis=1)

    if not np.isfinite(run_max) or s0 <= 0.0:
        raise NumericalError(
            "all Monte Carlo weights vanished; the data are impossible under "
            f"the supplied model (max log-weight {run_max})"
        )

    d = sd / s0
    los = sl / s0
    ess = s0 * s0 / s2
    if ess < ESS_WARN_THRESHOLD:
        warnings.warn(
            f"effective sample size {ess:.1f} < {ESS_WARN_THRESHOLD:g}; "
            "increase n_samples",
            RuntimeWarning,
            stacklevel=2,
        )
    return DValueReport(d=d, los=los, ess=float(ess), n_samples=n_samples, seed=seed)


def local_fdr(z, params: MixtureParams) -> np.ndarray:
    """Posterior probability of a nonpositive mean under independence
    (unit noise variance, no factor conditioning). Vectorized over z."""
    zv = np.asarray(z, dtype=float)
    lp0w, lp1w, lp2w = (
        _log_weight(params.pi0),
        _log_weight(params.pi1),
        _log_weight(params.pi2),
    )
    c0 = lp0w + _log_norm_pdf(zv, params.nu0, 1.0)
    c1 = lp1w + _log_norm_pdf(zv, params.nu1, params.tau1_sq + 1.0)
    c2 = lp2w + _log_norm_pdf(zv, params.nu2, params.tau2_sq + 1.0)
    lg1 = lp1w + _log_mass_nonpositive(params.nu1, params.tau1_sq, 1.0, 0.0, zv)
    lg2 = lp2w + _log_mass_nonpositive(params.nu2, params.tau2_sq, 1.0, 0.0, zv)
    out = np.exp(_logsumexp3(c0, lg1, lg2) - _logsumexp3(c0, c1, c2))
    out = np.minimum(out, 1.0)
    return out if out.shape else float(out)
