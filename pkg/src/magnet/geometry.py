"""Change-of-volume scalars ``sqrt(det(A^T A))`` kept in the log domain."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InputError

RANK_RTOL = 1e-12


class VolumeMethod(str, Enum):
    EXACT_GRAM = "exact_gram"
    EXACT_SVD = "exact_svd"
    PROJECTED_TOPK = "projected_topk"


@dataclass(frozen=True)
class LogVolume:
    log_sigma: float
    rank_deficient: bool
    method: VolumeMethod = VolumeMethod.EXACT_SVD
    k: Optional[int] = None
    proj_seed: Optional[int] = None

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    Q: np.ndarray
    seed: int

    @property
    def d_proj(self) -> int:
        return self.Q.shape[0]


def _check_tall(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2:
        raise InputError(f"expected a matrix, got shape {A.shape}")
    if A.shape[-2] < A.shape[-1]:
        raise InputError(f"volume scalar needs D >= S, got {A.shape[-2]}x{A.shape[-1]}")
    if not np.all(np.isfinite(A)):
        raise InputError("matrix entries must be finite")
    return A


def _log_sv_sum(sv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum of log singular values over the last axis; -inf where rank drops."""
    smax = sv[..., :1]
    deficient = np.any(sv <= RANK_RTOL * smax, axis=-1) | (smax[..., 0] <= 0)
    with np.errstate(divide="ignore"):
        logs = np.sum(np.log(sv), axis=-1)
    logs = np.where(deficient, -np.inf, logs)
    return logs, deficient


def volume_scalar(A) -> LogVolume:
    """``log sqrt(det(A^T A))`` as the sum of log singular values of ``A``."""
    A = _check_tall(A)
    sv = np.linalg.svd(A, compute_uv=False)
    log_sigma, deficient = _log_sv_sum(sv)
    return LogVolume(float(log_sigma), bool(deficient), VolumeMethod.EXACT_SVD)


def volume_scalar_gram(A) -> LogVolume:
    """Same quantity via ``slogdet(A^T A) / 2``.  Loses half the precision; kept as a cross-check."""
    A = _check_tall(A)
    G = A.T @ A
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= (RANK_RTOL ** 2) * ev[-1] or ev[-1] <= 0:
        return LogVolume(-np.inf, True, VolumeMethod.EXACT_GRAM)
    sign, logdet = np.linalg.slogdet(G)
    return LogVolume(0.5 * float(logdet), False, VolumeMethod.EXACT_GRAM)


def log_volumes(A_stack) -> np.ndarray:
    """Batched :func:`volume_scalar` over ``(n, D, S)``; rank-deficient entries are ``-inf``."""
    A = _check_tall(A_stack)
    if A.shape[-1] == 1:
        # single column: the only singular value is the column norm
        norms = np.linalg.norm(A[..., 0], axis=-1)
        with np.errstate(divide="ignore"):
            return np.where(norms > 0, np.log(norms), -np.inf)
    sv = np.linalg.svd(A, compute_uv=False)
    return _log_sv_sum(sv)[0]


def log_nonzero_sv_product(M) -> float:
    """Sum of log singular values above the rank tolerance, for any shape."""
    M = np.asarray(M, dtype=np.float64)
    sv = np.linalg.svd(M, compute_uv=False)
    keep = sv > RANK_RTOL * sv[0]
    return float(np.sum(np.log(sv[keep])))


def make_projection(D: int, d_proj: int, seed: int) -> ProjectionMatrix:
    """Random matrix with ``d_proj`` orthonormal rows, deterministic in ``seed``."""
    if d_proj < 1 or D < 1:
        raise InputError("dimensions must be positive")
    if d_proj > D:
        raise InputError(f"d_proj={d_proj} exceeds D={D}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((D, d_proj))
    Qt, R = np.linalg.qr(G)
    # sign fix makes the factorization unique
    Qt = Qt * np.sign(np.diag(R))
    Q = np.ascontiguousarray(Qt.T)
    Q.setflags(write=False)
    return ProjectionMatrix(Q, int(seed))


def projected_volume_scalar(A, Q: ProjectionMatrix, k: int) -> LogVolume:
    """Sum of the top-``k`` log singular values of ``Q A``."""
    A = _check_tall(A)
    if A.shape[0] != Q.Q.shape[1]:
        raise InputError(f"projection expects D={Q.Q.shape[1]}, got {A.shape[0]}")
    if not 1 <= k <= min(Q.d_proj, A.shape[1]):
        raise InputError(f"k={k} must lie in [1, min(d_proj, S)={min(Q.d_proj, A.shape[1])}]")
    sv = np.linalg.svd(Q.Q @ A, compute_uv=False)[:k]
    log_sigma, deficient = _log_sv_sum(sv)
    return LogVolume(float(log_sigma), bool(deficient), VolumeMethod.PROJECTED_TOPK, k, Q.seed)


def projected_log_volumes(A_stack, Q: ProjectionMatrix, k: int) -> np.ndarray:
    A = _check_tall(A_stack)
    if not 1 <= k <= min(Q.d_proj, A.shape[-1]):
        raise InputError(f"k={k} must lie in [1, min(d_proj, S)]")
    sv = np.linalg.svd(np.matmul(Q.Q, A), compute_uv=False)[..., :k]
    return _log_sv_sum(sv)[0]
