"""
数值工具: 凹函数求根、前向差分、非负矩阵的 Perron-Frobenius 根
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from ..core.errors import NumericError

logger = logging.getLogger(__name__)

MAX_DOUBLINGS = 64
BISECTION_XTOL = 1e-13


def decreasing_root(
    f: Callable[[float], float],
    fprime: Optional[Callable[[float], float]] = None,
    atol: float = 1e-12,
) -> float:
    """求凹函数 f 从非负变为负的唯一根, 要求 f(0) >= 0 且 f 最终趋于负无穷

    先把区间 [0, 2^k] 扩大到变号, 再二分到 1e-13, 最后用解析导数做一次 Newton 修正。
    """
    f0 = f(0.0)
    if f0 <= 0.0:
        return 0.0

    hi = 1.0
    f_hi = f(hi)
    doublings = 0
    while f_hi >= 0.0:
        doublings += 1
        if doublings > MAX_DOUBLINGS:
            raise NumericError(f"求根区间扩展失败: {MAX_DOUBLINGS} 次加倍后仍未变号")
        hi *= 2.0
        f_hi = f(hi)
    if doublings:
        logger.debug(f"求根区间扩展 {doublings} 次, hi={hi}")

    root = optimize.bisect(f, 0.0, hi, xtol=BISECTION_XTOL)
    f_root = f(root)
    if fprime is not None and f_root != 0.0:
        slope = fprime(root)
        if slope < 0.0:
            polished = root - f_root / slope
            if 0.0 <= polished <= hi:
                f_polished = f(polished)
                if abs(f_polished) <= abs(f_root):
                    root, f_root = polished, f_polished
    if abs(f_root) > atol * (1.0 + abs(root)):
        logger.debug(f"根的残差偏大: f({root:.12g})={f_root:.3e}")
    return float(root)


def forward_derivative(f: Callable[[float], float], h: float) -> float:
    """二阶前向差分 (-3f(0)+4f(h)-f(2h))/(2h)

    即两个一阶前向差分的 Richardson 外推, 只在 [0, 2h] 上取值。
    """
    return (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h)


def forward_jacobian(
    f: Callable[[np.ndarray], np.ndarray], point: np.ndarray, h: float
) -> np.ndarray:
    """向量函数在 point 处的雅可比矩阵, J[:, j] = df/du_j"""
    point = np.asarray(point, dtype=float)
    base = np.atleast_1d(np.asarray(f(point), dtype=float))
    jac = np.empty((base.size, point.size))
    for j in range(point.size):
        step = np.zeros_like(point)
        step[j] = h
        f1 = np.atleast_1d(np.asarray(f(point + step), dtype=float))
        f2 = np.atleast_1d(np.asarray(f(point + 2.0 * step), dtype=float))
        jac[:, j] = (-3.0 * base + 4.0 * f1 - f2) / (2.0 * h)
    return jac


def forward_gradient(f: Callable[[np.ndarray], float], point: np.ndarray, h: float) -> np.ndarray:
    return forward_jacobian(f, point, h)[0]


@dataclass(frozen=True)
class PerronRoot:
    radius: float
    vector: np.ndarray
    iterations: int
    converged: bool


def perron_root(matrix: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> PerronRoot:
    """非负矩阵的谱半径与非负特征向量 (||w||_1 = 1)

    对 I + M 做幂迭代, 相当于把相邻两次迭代取平均, 可以消除周期矩阵的振荡。
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericError(f"需要方阵, 实际形状 {m.shape}")
    if np.any(m < 0.0):
        raise NumericError("幂迭代要求矩阵非负")
    n = m.shape[0]
    shifted = m + np.eye(n)
    w = np.full(n, 1.0 / n)
    radius = 0.0
    for iteration in range(1, max_iter + 1):
        y = shifted @ w
        norm = y.sum()
        w_next = y / norm
        radius_next = norm - 1.0
        if abs(radius_next - radius) <= tol * max(1.0, abs(radius_next)) and np.abs(
            w_next - w
        ).sum() <= tol:
            logger.debug(f"幂迭代收敛: {iteration} 次, rho={radius_next:.12g}")
            return PerronRoot(float(radius_next), w_next, iteration, True)
        w, radius = w_next, radius_next
    logger.warning(f"幂迭代 {max_iter} 次未收敛, rho≈{radius:.12g}")
    return PerronRoot(float(radius), w, max_iter, False)


def metzler_abscissa(matrix: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> PerronRoot:
    """非对角元非负矩阵的 Perron-Frobenius 特征值 (可为负)"""
    a = np.asarray(matrix, dtype=float)
    shift = 1.0 + float(np.max(np.abs(np.diag(a)))) if a.size else 1.0
    root = perron_root(a + shift * np.eye(a.shape[0]), tol=tol, max_iter=max_iter)
    return PerronRoot(root.radius - shift, root.vector, root.iterations, root.converged)
