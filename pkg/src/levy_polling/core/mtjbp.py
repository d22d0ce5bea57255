"""
轮询时刻工作量构成的多类型 Jiřina 分支过程 (带移民)

κ 是每个周期的分支机制, G 是切换期间流入的移民; 在此基础上计算均值矩阵、
速率矩阵、稳定性判定、嵌入时刻的 LST 以及任意时刻的 LST。
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.csgraph import connected_components

from .disciplines import eta_gradient_at_zero, mean_visit_time_per_unit
from .errors import DomainError, NumericError, PreconditionError, TruncationError, UnstableModelError
from .levy_model import as_point
from .model import PollingModel, rotation_order
from ..utils.numerics import (
    PerronRoot,
    forward_gradient,
    forward_jacobian,
    metzler_abscissa,
    perron_root,
)

logger = logging.getLogger(__name__)

SUBINVARIANCE_TOL = 1e-10
SINGULAR_TOL = 1e-8
PERTURBATION_STEP = 1e-6


class Verdict(str, Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    CRITICAL = "Critical"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class StabilityReport:
    rate_matrix: np.ndarray
    rho_A: float
    mean_matrix: np.ndarray
    rho_M: float
    verdict: Verdict
    irreducible: bool
    subinvariance: str


@dataclass(frozen=True)
class TransformValue:
    value: float
    terms_used: int
    truncation_bound: float


@dataclass(frozen=True)
class StationaryMeans:
    polling: np.ndarray
    immigration: np.ndarray
    own_at_polling: Tuple[float, ...]


def _branching_step(model: PollingModel, u: np.ndarray) -> Tuple[np.ndarray, float]:
    """同时返回 κ(u) 和 log G(u), 二者共用参数 (u_1..u_i, κ_{i+1}..κ_N)"""
    n = model.size
    if model.globally_gated:
        phi = model.input.exponent(u)
        log_g = sum(q.switch.log_lst(phi) for q in model.queues)
        return np.full(n, phi), float(log_g)

    atol = model.tolerances.root_atol
    kappa = np.empty(n)
    arg = np.array(u, dtype=float)
    log_g = 0.0
    for i in reversed(range(n)):
        queue = model.queues[i]
        log_g += queue.switch.log_lst(queue.switch.input.exponent(arg))
        kappa[i] = queue.discipline.eta(queue.served, arg, atol)
        arg[i] = kappa[i]
    return kappa, log_g


def kappa_eval(model: PollingModel, u) -> np.ndarray:
    """分支机制 κ(u), 从 i=N 向 i=1 递推"""
    return _branching_step(model, as_point(u, model.size))[0]


def kappa_iterate(model: PollingModel, u, k: int) -> np.ndarray:
    """κ^(k)(u), κ^(0)(u) = u"""
    if k < 0:
        raise DomainError(f"k 必须非负: {k}")
    v = as_point(u, model.size)
    for _ in range(k):
        v = _branching_step(model, v)[0]
    return v


def immigration_lst(model: PollingModel, u) -> float:
    return math.exp(_branching_step(model, as_point(u, model.size))[1])


def mean_matrix(model: PollingModel) -> np.ndarray:
    """m_ij = ∂κ_i/∂u_j(0)"""
    h = model.tolerances.derivative_step
    jac = forward_jacobian(lambda v: _branching_step(model, v)[0], np.zeros(model.size), h)
    if np.any(jac < -1e-8):
        raise NumericError(f"均值矩阵出现负元素: min={jac.min():.3e}")
    return np.clip(jac, 0.0, None)


def rate_matrix(model: PollingModel) -> np.ndarray:
    """a_ij = 服务 Q_i 期间 Q_j 工作量的平均变化率"""
    return np.vstack([q.served.mean_rate() for q in model.queues])


def spectral_radius_nonneg(matrix: np.ndarray) -> PerronRoot:
    """非负矩阵的谱半径 ρ 与右特征向量 w >= 0 (||w||_1 = 1); 未收敛时 converged=False"""
    return perron_root(matrix, tol=1e-12, max_iter=100_000)


def subinvariance_check(matrix: np.ndarray, w: Sequence[float]) -> str:
    """逐分量比较 Mw 与 w, 返回 '<', '=', '>' 或 'mixed'"""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0):
        raise DomainError("w 必须为正向量")
    diff = np.asarray(matrix, dtype=float) @ w - w
    tol = SUBINVARIANCE_TOL * max(1.0, float(np.max(w)))
    if np.all(np.abs(diff) <= tol):
        return "="
    if np.all(diff < -tol):
        return "<"
    if np.all(diff > tol):
        return ">"
    return "mixed"


def _irreducible(matrix: np.ndarray) -> bool:
    graph = (np.abs(matrix) > 0.0).astype(float)
    np.fill_diagonal(graph, 0.0)
    if graph.shape[0] == 1:
        return True
    count, _ = connected_components(graph, directed=True, connection="strong")
    return count == 1


@lru_cache(maxsize=128)
def stability(model: PollingModel) -> StabilityReport:
    """由速率矩阵的 Perron-Frobenius 特征值判定稳定性, 并与均值矩阵谱半径交叉验证"""
    a = rate_matrix(model)
    abscissa = metzler_abscissa(a)
    m = mean_matrix(model)
    radius = spectral_radius_nonneg(m)
    irreducible = _irreducible(a)
    tol = model.tolerances.stability_tol

    if not abscissa.converged:
        verdict = Verdict.INDETERMINATE
    elif abscissa.radius < -tol:
        verdict = Verdict.STABLE
    elif abscissa.radius > tol:
        verdict = Verdict.UNSTABLE
    else:
        verdict = Verdict.CRITICAL

    subinvariance = "n/a"
    if irreducible and np.all(abscissa.vector > 0.0):
        subinvariance = subinvariance_check(m, abscissa.vector)

    if irreducible and radius.converged:
        disagree = (verdict is Verdict.STABLE and radius.radius > 1.0 + 1e-6) or (
            verdict is Verdict.UNSTABLE and radius.radius < 1.0 - 1e-6
        )
        if disagree:
            logger.warning(
                f"rho_A={abscissa.radius:.6g} 与 rho_M={radius.radius:.6g} 的判定不一致"
            )
            verdict = Verdict.INDETERMINATE
    elif not irreducible:
        logger.warning("速率矩阵可约, 稳定性判定仅依据 rho_A")

    logger.info(
        f"稳定性: rho_A={abscissa.radius:.6g}, rho_M={radius.radius:.6g}, 判定={verdict.value}"
    )
    return StabilityReport(a, abscissa.radius, m, radius.radius, verdict, irreducible, subinvariance)


def require_stable(model: PollingModel) -> StabilityReport:
    report = stability(model)
    if report.verdict is not Verdict.STABLE:
        raise UnstableModelError(
            f"模型不是稳定的 ({report.verdict.value}): rho_A={report.rho_A:.6g},"
            f" rho_M={report.rho_M:.6g}",
            report,
        )
    return report


def _b1(model: PollingModel, u: np.ndarray) -> TransformValue:
    tol = model.tolerances
    log_value = 0.0
    v = u
    for term in range(1, tol.max_terms + 1):
        kappa, log_g = _branching_step(model, v)
        log_value += log_g
        gap = -math.expm1(log_g)
        if float(np.max(v)) < tol.truncation and gap < tol.truncation:
            logger.debug(f"乘积在第 {term} 项截断, gap={gap:.3e}")
            return TransformValue(math.exp(log_value), term, gap)
        v = kappa
    raise TruncationError(
        f"无穷乘积 {tol.max_terms} 项内未收敛 (rho_M={stability(model).rho_M:.6g} 接近 1?)"
    )


def b1_transform(model: PollingModel, u) -> TransformValue:
    """Q_1 轮询时刻平稳工作量的 LST: Π_k G(κ^(k)(u)), 在对数空间累加"""
    point = as_point(u, model.size)
    require_stable(model)
    return _b1(model, point)


def _require_branching(model: PollingModel) -> None:
    if model.globally_gated:
        raise PreconditionError("globally gated 模型只支持 Q_1 轮询时刻的变换")


def embedded_transforms(model: PollingModel, i: int, u) -> Tuple[TransformValue, TransformValue]:
    """Q_i 轮询时刻与切换时刻的 LST (B_i(u), E_i(u)), i 从 0 开始"""
    _require_branching(model)
    point = as_point(u, model.size)
    rotated = model.rotated(i)
    require_stable(rotated)
    order = rotation_order(model.size, i)
    queue = model.queues[i]
    served = np.array(point)
    served[i] = queue.discipline.eta(queue.served, point, model.tolerances.root_atol)
    return _b1(rotated, point[order]), _b1(rotated, served[order])


def chain_transform(model: PollingModel, i: int, u) -> float:
    """E_i(u) * S_i(φ̂_i(u)), 即沿链推出的 B_{i+1}(u)"""
    point = as_point(u, model.size)
    _, switching = embedded_transforms(model, i, point)
    switch = model.queues[i].switch
    return switching.value * switch.lst(switch.input.exponent(point))


@lru_cache(maxsize=128)
def _polling_mean(model: PollingModel) -> Tuple[np.ndarray, np.ndarray]:
    report = require_stable(model)
    h = model.tolerances.derivative_step
    immigration = -forward_gradient(
        lambda v: _branching_step(model, v)[1], np.zeros(model.size), h
    )
    system = np.eye(model.size) - report.mean_matrix.T
    try:
        polling = np.linalg.solve(system, immigration)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"I - M^T 奇异 (rho_M={report.rho_M:.6g}): {e}")
    return polling, immigration


def stationary_mean_at_polling(model: PollingModel) -> StationaryMeans:
    """E B^∞ = (I - M^T)^{-1} E G, 并对每个轮换求 E B_{i,i}"""
    polling, immigration = _polling_mean(model)
    own: Tuple[float, ...] = ()
    if not model.globally_gated:
        own = tuple(float(_polling_mean(model.rotated(i))[0][0]) for i in range(model.size))
    return StationaryMeans(polling.copy(), immigration.copy(), own)


def polling_mean_vector(model: PollingModel, i: int) -> np.ndarray:
    """Q_i 轮询时刻的平稳平均工作量向量 (原编号)"""
    rotated_mean = _polling_mean(model.rotated(i))[0]
    result = np.empty(model.size)
    result[list(rotation_order(model.size, i))] = rotated_mean
    return result


def _visit_term(
    model: PollingModel, i: int, u: np.ndarray, polling: float, switching: float
) -> float:
    """(B_i(u) - E_i(u)) / φ_i^A(u), 可去奇点处对 u_i 做两侧扰动"""
    served = model.queues[i].served
    phi_a = served.exponent(u)
    if abs(phi_a) > SINGULAR_TOL:
        return (polling - switching) / phi_a

    def term(point: np.ndarray) -> Optional[float]:
        phi = served.exponent(point)
        if abs(phi) <= SINGULAR_TOL:
            return None
        b, e = embedded_transforms(model, i, point)
        return (b.value - e.value) / phi

    logger.debug(f"队列 {i} 在 u={u.tolist()} 处 φ^A≈0, 使用扰动")

    step = PERTURBATION_STEP

    def shifted(delta: float) -> float:
        point = np.array(u)
        point[i] += delta
        result = term(point)
        if result is None:
            raise NumericError(
                f"队列 {i} 在 u={u.tolist()} 处的 0/0 无法通过扰动分离 (delta={delta})"
            )
        return result

    if u[i] >= step:
        return 0.5 * (shifted(-step) + shifted(step))
    return 2.0 * shifted(step) - shifted(2.0 * step)


def visit_times(model: PollingModel) -> Tuple[float, ...]:
    _require_branching(model)
    h = model.tolerances.derivative_step
    atol = model.tolerances.root_atol
    return tuple(
        mean_visit_time_per_unit(q.discipline, q.served, h, atol) for q in model.queues
    )


def mean_cycle_length(model: PollingModel) -> float:
    """E C = Σ E S_i + Σ E τ_i(1) E B_{i,i}"""
    means = stationary_mean_at_polling(model)
    if model.globally_gated:
        return model.total_switch_mean + float(means.polling.sum())
    return model.total_switch_mean + float(
        sum(t * b for t, b in zip(visit_times(model), means.own_at_polling))
    )


def arbitrary_epoch_transform(model: PollingModel, u) -> TransformValue:
    """任意时刻平稳工作量的 LST, 用周期内面积除以平均周期长度"""
    _require_branching(model)
    point = as_point(u, model.size)
    if not np.any(point):
        return TransformValue(1.0, 0, 0.0)
    require_stable(model)

    numerator = 0.0
    terms = 0
    bound = 0.0
    for i, queue in enumerate(model.queues):
        polling, switching = embedded_transforms(model, i, point)
        terms += polling.terms_used + switching.terms_used
        bound = max(bound, polling.truncation_bound, switching.truncation_bound)
        numerator += _visit_term(model, i, point, polling.value, switching.value)
        switch_rate = queue.switch.input.exponent(point)
        numerator += switching.value * queue.switch.mean_ratio(switch_rate)

    value = numerator / mean_cycle_length(model)
    return TransformValue(value, terms, bound)


def takagi_vacation_product(
    arrival_rate: float,
    service_lst: Callable[[float], float],
    vacation_lst: Callable[[float], float],
    z: float,
    tol: float = 1e-14,
    max_terms: int = 10_000,
) -> float:
    """M/G/1 gated 休假队列在休假结束时刻的队长母函数 Q(z)

    Q(z) = Π_k V*(λ(1 - δ^(k)(z))), δ^(0) = z, δ^(k) = B*(λ(1 - δ^(k-1)))。
    """
    value = 1.0
    delta = z
    for _ in range(max_terms):
        s = arrival_rate * (1.0 - delta)
        factor = vacation_lst(s)
        value *= factor
        if s < tol and 1.0 - factor < tol:
            return value
        delta = service_lst(s)
    raise TruncationError(f"Q(z) 的乘积 {max_terms} 项内未收敛")


@dataclass(frozen=True)
class Moments:
    polling_mean: np.ndarray
    immigration_mean: np.ndarray
    own_polling_mean: Tuple[float, ...]
    visit_times: Tuple[float, ...]
    switching_means: Tuple[np.ndarray, ...]
    cycle_length: float
    cycle_length_balance: Optional[float]


class PollingAnalyzer:
    """对一个模型的解析计算做缓存和汇总"""

    def __init__(self, model: PollingModel):
        self.model = model
        self._report: Optional[StabilityReport] = None
        self._moments: Optional[Moments] = None

    def stability(self) -> StabilityReport:
        if self._report is None:
            self._report = stability(self.model)
        return self._report

    def is_stable(self) -> bool:
        return self.stability().verdict is Verdict.STABLE

    def require_stable(self) -> StabilityReport:
        return require_stable(self.model)

    def cycle_length_balance(self) -> Optional[float]:
        """单位速率且输入不变时的功守恒形式 Σ E S_i / (1 - ρ)"""
        model = self.model
        if model.has_varying_input or any(q.served.service_rate != 1.0 for q in model.queues):
            return None
        load = float(model.input.mean_rate().sum())
        if load >= 1.0:
            return None
        return model.total_switch_mean / (1.0 - load)

    def switching_means(self) -> Tuple[np.ndarray, ...]:
        """E E_i = E B_i - E B_{i,i} e_i + E B_{i,i} ∇η_i(0)"""
        model = self.model
        h = model.tolerances.derivative_step
        atol = model.tolerances.root_atol
        result = []
        for i, queue in enumerate(model.queues):
            polling = polling_mean_vector(model, i)
            own = polling[i]
            switching = polling.copy()
            switching[i] = 0.0
            switching += own * eta_gradient_at_zero(queue.discipline, queue.served, h, atol)
            result.append(switching)
        return tuple(result)

    def moments(self) -> Moments:
        if self._moments is None:
            self.require_stable()
            means = stationary_mean_at_polling(self.model)
            gated = self.model.globally_gated
            self._moments = Moments(
                polling_mean=means.polling,
                immigration_mean=means.immigration,
                own_polling_mean=means.own_at_polling,
                visit_times=() if gated else visit_times(self.model),
                switching_means=() if gated else self.switching_means(),
                cycle_length=mean_cycle_length(self.model),
                cycle_length_balance=self.cycle_length_balance(),
            )
            logger.info(f"平均周期长度 E C = {self._moments.cycle_length:.6g}")
        return self._moments

    def b1(self, u: Sequence[float]) -> float:
        return b1_transform(self.model, u).value

    def chain(self, i: int, u: Sequence[float]) -> float:
        return chain_transform(self.model, i, u)

    def arbitrary_epoch(self, u: Sequence[float]) -> float:
        return arbitrary_epoch_transform(self.model, u).value

    def transform_rows(self, points: Sequence[Sequence[float]]) -> List[Dict[str, Any]]:
        """对每个 u 计算 B_i, E_i, 链式恒等式的右端和 F (各一行)"""
        self.require_stable()
        rows: List[Dict[str, Any]] = []
        n = self.model.size
        for u in points:
            point = as_point(u, n)
            if self.model.globally_gated:
                rows.append(_row(point, "B1", b1_transform(self.model, point)))
                continue
            for i, queue in enumerate(self.model.queues):
                polling, switching = embedded_transforms(self.model, i, point)
                rows.append(_row(point, f"B{i + 1}", polling))
                rows.append(_row(point, f"E{i + 1}", switching))
                chain = switching.value * queue.switch.lst(queue.switch.input.exponent(point))
                rows.append(_row(point, f"chain{i + 1}", TransformValue(chain, 0, 0.0)))
            rows.append(_row(point, "F", arbitrary_epoch_transform(self.model, point)))
        logger.info(f"完成 {len(points)} 个 u 点的变换计算")
        return rows


def _row(point: np.ndarray, quantity: str, value: TransformValue) -> Dict[str, Any]:
    return {
        "u": tuple(float(x) for x in point),
        "quantity": quantity,
        "value": value.value,
        "terms_used": value.terms_used,
    }
