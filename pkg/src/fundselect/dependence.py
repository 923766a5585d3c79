"""Cross-fund dependence model for the standardized alpha estimates.

The covariance of the alpha estimates is ``sigma_star[i, j] = c_ij * ||h||^2``
where c_ij is the sample covariance of the two funds' excess-return columns
(i.i.d.-in-time convention) and h is the shared intercept extractor. Its
correlation matrix Sigma is eigendecomposed once; the leading eigenvectors
scaled by sqrt(eigenvalue) give the common-factor loadings C used in the
mixture fit, and the strict-factor split Sigma = B B' + lambda_p I (lambda_p
the smallest eigenvalue) drives both simulation and the posterior Monte Carlo.
"""

from __future__ import annotations

import hashlib
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .panel import AlphaEstimates, ReturnPanel

EIGENVALUE_FLOOR = 1e-6
_TIE_TOL = 1e-10
_CACHE_MAGIC = b"FSEIG001"


@dataclass(eq=False)
class DependenceModel:
    """Eigenstructure of the alpha-estimate correlation matrix.

    C holds loadings for eigenvalues > 1 only (the factors that matter for the
    mixture moments); B spans every eigenvalue strictly above lambda_p, so
    ``sigma == B @ B.T + lambda_p * I`` up to float error. eta_sq[i] is the
    idiosyncratic share 1 - ||C[i]||^2.
    """

    sigma_star: np.ndarray  # p x p
    sigma: np.ndarray  # p x p correlation
    eigenvalues: np.ndarray  # p, non-increasing
    eigenvectors: np.ndarray  # p x p, column j pairs with eigenvalues[j]
    l: int
    C: np.ndarray  # p x l
    B: np.ndarray  # p x rank
    lambda_p: float
    eta_sq: np.ndarray  # p

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    @property
    def rank(self) -> int:
        return self.B.shape[1]


def _fix_eigenvector_signs(vectors: np.ndarray) -> np.ndarray:
    """Make each column's largest-magnitude entry positive (ties: lowest index)."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0.0] = 1.0
    return vectors * signs


def dependence_from_correlation(
    sigma: np.ndarray, *, sigma_star: np.ndarray | None = None
) -> DependenceModel:
    """Build the model from an already-formed correlation matrix."""
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if sigma.shape != (p, p):
        raise DataError("correlation matrix must be square")
    if not np.allclose(sigma, sigma.T, atol=1e-8):
        raise DataError("correlation matrix must be symmetric")
    sigma = 0.5 * (sigma + sigma.T)
    np.fill_diagonal(sigma, 1.0)

    eigvals, eigvecs = np.linalg.eigh(sigma)
    eigvals = eigvals[::-1].copy()
    eigvecs = eigvecs[:, ::-1].copy()
    if eigvals[-1] <= 0.0:
        warnings.warn(
            f"smallest eigenvalue {eigvals[-1]:.3e} <= 0; clamping to {EIGENVALUE_FLOOR:g}",
            RuntimeWarning,
            stacklevel=2,
        )
        eigvals = np.maximum(eigvals, EIGENVALUE_FLOOR)
    eigvecs = _fix_eigenvector_signs(eigvecs)

    lambda_p = float(eigvals[-1])
    l = int(np.sum(eigvals > 1.0))  # strictly above 1; exact ties excluded
    C = eigvecs[:, :l] * np.sqrt(eigvals[:l])

    keep = eigvals - lambda_p > _TIE_TOL
    B = eigvecs[:, keep] * np.sqrt(eigvals[keep] - lambda_p)

    eta_sq = 1.0 - np.sum(C * C, axis=1)
    eta_sq = np.clip(eta_sq, 0.0, 1.0)

    return DependenceModel(
        sigma_star=sigma if sigma_star is None else np.asarray(sigma_star, dtype=float),
        sigma=sigma,
        eigenvalues=eigvals,
        eigenvectors=eigvecs,
        l=l,
        C=C,
        B=B,
        lambda_p=lambda_p,
        eta_sq=eta_sq,
    )


def build_dependence(
    estimates: AlphaEstimates,
    panel: ReturnPanel,
    *,
    cache_dir: str | None = None,
) -> DependenceModel:
    """Assemble sigma_star from the panel's excess returns and decompose it.

    With `cache_dir` set, the eigensystem is stored keyed by a content hash of
    Sigma and reused on later runs against identical data.
    """
    if estimates.fund_ids != panel.fund_ids:
        raise DataError("estimates and panel disagree on fund ids")
    y = estimates.excess_returns
    if y.shape[0] < 2:
        raise DataError("need at least two months to form a covariance")
    cov = np.cov(y, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    h_sq = float(estimates.h @ estimates.h)
    sigma_star = h_sq * cov

    d = np.sqrt(np.diag(sigma_star))
    sigma = sigma_star / np.outer(d, d)

    if cache_dir is not None:
        cached = load_eigensystem_cache(cache_dir, sigma)
        if cached is not None:
            eigvals, eigvecs = cached
            model = _assemble_from_eigensystem(sigma, sigma_star, eigvals, eigvecs)
            return model
    model = dependence_from_correlation(sigma, sigma_star=sigma_star)
    if cache_dir is not None:
        save_eigensystem_cache(cache_dir, model.sigma, model.eigenvalues, model.eigenvectors)
    return model


def _assemble_from_eigensystem(sigma, sigma_star, eigvals, eigvecs) -> DependenceModel:
    lambda_p = float(eigvals[-1])
    l = int(np.sum(eigvals > 1.0))
    C = eigvecs[:, :l] * np.sqrt(eigvals[:l])
    keep = eigvals - lambda_p > _TIE_TOL
    B = eigvecs[:, keep] * np.sqrt(eigvals[keep] - lambda_p)
    eta_sq = np.clip(1.0 - np.sum(C * C, axis=1), 0.0, 1.0)
    sigma = 0.5 * (sigma + sigma.T)
    np.fill_diagonal(sigma, 1.0)
    return DependenceModel(
        sigma_star=sigma_star,
        sigma=sigma,
        eigenvalues=eigvals,
        eigenvectors=eigvecs,
        l=l,
        C=C,
        B=B,
        lambda_p=lambda_p,
        eta_sq=eta_sq,
    )


# --- eigensystem cache -------------------------------------------------------
#
# Binary layout (all little-endian):
#   8 bytes  magic "FSEIG001"
#   8 bytes  uint64 p
#   p*8      float64 eigenvalues, descending
#   p*p*8    float64 eigenvectors, row-major (C order), column j <-> eigenvalue j
#
# The file name is fseig-<sha256 of Sigma's float64 bytes, first 16 hex>.bin.


def _sigma_key(sigma: np.ndarray) -> str:
    payload = np.ascontiguousarray(sigma, dtype=float).tobytes()
    return hashlib.sha256(payload).hexdigest()[:16]


def cache_path(cache_dir: str, sigma: np.ndarray) -> str:
    return os.path.join(cache_dir, f"fseig-{_sigma_key(sigma)}.bin")


def save_eigensystem_cache(
    cache_dir: str, sigma: np.ndarray, eigenvalues: np.ndarray, eigenvectors: np.ndarray
) -> str:
    os.makedirs(cache_dir, exist_ok=True)
    path = cache_path(cache_dir, sigma)
    p = eigenvalues.shape[0]
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<Q", p))
        fh.write(np.ascontiguousarray(eigenvalues, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(eigenvectors, dtype="<f8").tobytes())
    return path


def load_eigensystem_cache(
    cache_dir: str, sigma: np.ndarray
) -> tuple[np.ndarray, np.ndarray] | None:
    path = cache_path(cache_dir, sigma)
    if not os.path.exists(path):
        return None
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CACHE_MAGIC:
            raise DataError(f"{path}: not an eigensystem cache file")
        (p,) = struct.unpack("<Q", fh.read(8))
        eigvals = np.frombuffer(fh.read(8 * p), dtype="<f8").astype(float)
        eigvecs = (
            np.frombuffer(fh.read(8 * p * p), dtype="<f8").astype(float).reshape(p, p)
        )
    if sigma.shape[0] != p:
        raise DataError(f"{path}: cached eigensystem has p={p}, expected {sigma.shape[0]}")
    return eigvals, eigvecs
