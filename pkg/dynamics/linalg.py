"""
線形代数モジュール
対称行列の固有値（巡回 Jacobi 法）と負定値判定
"""
from typing import Tuple

import numpy as np
from loguru import logger


# 非対称性の許容幅（最大絶対要素に対する相対値）
SYMMETRY_TOL = 1e-9


class AsymmetricMatrixError(ValueError):
    """対称であるべき行列が対称でない"""


class EigenConvergenceError(ArithmeticError):
    """Jacobi 法が最大スイープ数以内に収束しなかった"""


def check_symmetric(matrix, rel_tol: float = SYMMETRY_TOL) -> np.ndarray:
    """
    正方・有限・対称であることを確かめ、対称化した行列を返す

    Raises:
        ValueError: 正方でない、または有限でない要素を含む
        AsymmetricMatrixError: ‖M - Mᵀ‖max > rel_tol·‖M‖max
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > rel_tol * scale:
        raise AsymmetricMatrixError(f"matrix is not symmetric (max |M - Mᵀ| = {asym:.3e})")
    return 0.5 * (m + m.T)


def _off_diagonal_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def symmetric_eigen(matrix, tol: float = 1e-12, max_sweeps: int = 100) -> Tuple[np.ndarray, np.ndarray]:
    """
    巡回 Jacobi 法による固有分解

    Args:
        matrix: 対称行列
        tol: 非対角成分のフロベニウスノルムが tol·‖M‖F 以下で停止
        max_sweeps: 最大スイープ数

    Returns:
        (昇順の固有値, 対応する固有ベクトルを列に持つ直交行列)

    Raises:
        AsymmetricMatrixError: 対称でない
        EigenConvergenceError: 収束しない
    """
    a = check_symmetric(matrix).copy()
    n = a.shape[0]
    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        return np.zeros(n), v

    for sweep in range(max_sweeps + 1):
        off = _off_diagonal_norm(a)
        if off <= tol * norm:
            break
        if sweep == max_sweeps:
            raise EigenConvergenceError(
                f"Jacobi iteration did not converge in {max_sweeps} sweeps (off-diagonal {off:.3e})"
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q

                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q

    logger.debug(f"Jacobi converged after {sweep} sweeps (n={n})")
    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    return values[order], v[:, order]


def symmetric_eigenvalues(matrix) -> np.ndarray:
    """昇順の固有値"""
    return symmetric_eigen(matrix)[0]


def is_negative_definite(matrix, tol: float = 0.0) -> Tuple[bool, float]:
    """
    負定値判定

    Returns:
        (最大固有値 < -tol か, 最大固有値)
    """
    values = symmetric_eigenvalues(matrix)
    top = float(values[-1]) if values.size else 0.0
    return top < -tol, top
