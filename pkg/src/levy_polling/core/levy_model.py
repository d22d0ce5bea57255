"""
Lévy 输入模型: 子过程 (漂移 + 复合泊松)、被服务队列的净过程、切换时间

所有指数都有闭式表达, 不做数值积分; 采样对漂移 + 复合泊松是精确的。
"""
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, ModelValidationError

logger = logging.getLogger(__name__)

Vector = Tuple[float, ...]

JUMP_KINDS = ("deterministic", "exponential", "discrete")
DURATION_KINDS = ("deterministic", "exponential", "erlang")


def as_point(u: Sequence[float], dim: int) -> np.ndarray:
    """检查并转换非负向量参数"""
    arr = np.asarray(u, dtype=float)
    if arr.shape != (dim,):
        raise DomainError(f"向量维度不匹配: 期望 ({dim},), 实际 {arr.shape}")
    if np.any(np.isnan(arr)) or np.any(arr < 0.0):
        raise DomainError(f"参数必须非负: u={arr.tolist()}")
    return arr


def _one_minus_exp(x: float) -> float:
    return -math.expm1(-x)


def _permute(values: Vector, order: Sequence[int]) -> Vector:
    return tuple(values[k] for k in order)


@dataclass(frozen=True)
class JumpSpec:
    """跳跃向量 J = scale * X, X 服从标量分布

    kind:
        deterministic  X = value
        exponential    X ~ Exp, 均值 value
        discrete       X 取 points[k] 的概率为 weights[k]
    """

    kind: str
    scale: Vector
    value: float = 0.0
    points: Vector = ()
    weights: Vector = ()

    def __post_init__(self):
        if self.kind not in JUMP_KINDS:
            raise ModelValidationError(f"未知的跳跃分布: {self.kind}")
        if not self.scale or any(c < 0.0 for c in self.scale):
            raise ModelValidationError(f"scale 必须非负: {self.scale}")
        if not any(c > 0.0 for c in self.scale):
            raise ModelValidationError("scale 至少有一个分量为正")
        if self.kind == "discrete":
            if not self.points or len(self.points) != len(self.weights):
                raise ModelValidationError("discrete 分布需要等长的 points 和 weights")
            if any(p <= 0.0 for p in self.points) or any(w < 0.0 for w in self.weights):
                raise ModelValidationError("discrete 分布的取值必须为正, 概率非负")
            if abs(sum(self.weights) - 1.0) > 1e-12:
                raise ModelValidationError(f"discrete 概率之和必须为 1: {sum(self.weights)}")
        elif self.value <= 0.0:
            raise ModelValidationError(f"{self.kind} 分布参数必须为正: {self.value}")

    @property
    def dim(self) -> int:
        return len(self.scale)

    @property
    def mean(self) -> float:
        if self.kind == "discrete":
            return float(sum(p * w for p, w in zip(self.points, self.weights)))
        return self.value

    def lst(self, s: float) -> float:
        return 1.0 - self.one_minus_lst(s)

    def one_minus_lst(self, s: float) -> float:
        """1 - B(s), 小 s 时保持相对精度"""
        if self.kind == "deterministic":
            return _one_minus_exp(self.value * s)
        if self.kind == "exponential":
            ms = self.value * s
            return ms / (1.0 + ms)
        return float(sum(w * _one_minus_exp(p * s) for p, w in zip(self.points, self.weights)))

    def tilted_mean(self, s: float) -> float:
        """E[X e^{-sX}] = -B'(s)"""
        if self.kind == "deterministic":
            return self.value * math.exp(-self.value * s)
        if self.kind == "exponential":
            return self.value / (1.0 + self.value * s) ** 2
        return float(sum(w * p * math.exp(-p * s) for p, w in zip(self.points, self.weights)))

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "deterministic":
            return self.value
        if self.kind == "exponential":
            return float(rng.exponential(self.value))
        index = int(rng.choice(len(self.points), p=self.weights))
        return self.points[index]

    def permuted(self, order: Sequence[int]) -> "JumpSpec":
        return JumpSpec(self.kind, _permute(self.scale, order), self.value, self.points, self.weights)


@dataclass(frozen=True)
class CompoundComponent:
    rate: float
    jump: JumpSpec

    def __post_init__(self):
        if self.rate <= 0.0:
            raise ModelValidationError(f"复合泊松强度必须为正: {self.rate}")


class JumpEvent(NamedTuple):
    time: float
    vector: np.ndarray


@dataclass(frozen=True)
class SubordinatorSpec:
    """N 维非减 Lévy 输入: 漂移 + 若干复合泊松分量 (分量内跨队列相关)"""

    drift: Vector
    components: Tuple[CompoundComponent, ...] = ()

    def __post_init__(self):
        if not self.drift:
            raise ModelValidationError("drift 不能为空")
        if any(d < 0.0 for d in self.drift):
            raise ModelValidationError(f"drift 必须非负: {self.drift}")
        for component in self.components:
            if component.jump.dim != self.dim:
                raise ModelValidationError(
                    f"跳跃维度 {component.jump.dim} 与 drift 维度 {self.dim} 不一致"
                )

    @classmethod
    def zero(cls, dim: int) -> "SubordinatorSpec":
        return cls(drift=(0.0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.drift)

    @property
    def total_rate(self) -> float:
        return float(sum(c.rate for c in self.components))

    @property
    def is_zero(self) -> bool:
        return not self.components and not any(self.drift)

    def exponent(self, u: np.ndarray) -> float:
        """φ(u) = d·u + Σ λ_k (1 - B_k(u·c_k)), 不检查定义域"""
        value = float(np.dot(self.drift, u))
        for component in self.components:
            value += component.rate * component.jump.one_minus_lst(float(np.dot(component.jump.scale, u)))
        return value

    def gradient(self, u: np.ndarray) -> np.ndarray:
        grad = np.array(self.drift, dtype=float)
        for component in self.components:
            s = float(np.dot(component.jump.scale, u))
            grad += component.rate * component.jump.tilted_mean(s) * np.asarray(component.jump.scale)
        return grad

    def mean_rate(self) -> np.ndarray:
        return self.gradient(np.zeros(self.dim))

    def draw_jump(self, rng: np.random.Generator) -> np.ndarray:
        """按强度比例选一个分量并采样其跳跃向量"""
        if len(self.components) == 1:
            component = self.components[0]
        else:
            rates = np.array([c.rate for c in self.components])
            component = self.components[int(rng.choice(len(rates), p=rates / rates.sum()))]
        return component.jump.sample(rng) * np.asarray(component.jump.scale, dtype=float)

    def permuted(self, order: Sequence[int]) -> "SubordinatorSpec":
        return SubordinatorSpec(
            drift=_permute(self.drift, order),
            components=tuple(
                CompoundComponent(c.rate, c.jump.permuted(order)) for c in self.components
            ),
        )


@dataclass(frozen=True)
class ServedProcessSpec:
    """服务 queue_index 期间的净输入 A_i: 输入子过程减去服务漂移, 可选布朗扰动"""

    input: SubordinatorSpec
    queue_index: int
    service_rate: float = 1.0
    brownian_sd: float = 0.0

    def __post_init__(self):
        if not 0 <= self.queue_index < self.input.dim:
            raise ModelValidationError(f"queue_index 越界: {self.queue_index}")
        if self.service_rate <= 0.0:
            raise ModelValidationError(f"服务速率必须为正: {self.service_rate}")
        if self.brownian_sd < 0.0:
            raise ModelValidationError(f"brownian_sd 必须非负: {self.brownian_sd}")
        own_rate = float(self.input.mean_rate()[self.queue_index])
        if own_rate - self.service_rate >= 0.0:
            raise ModelValidationError(
                f"队列 {self.queue_index} 的净漂移非负 (E A_i(1) = {own_rate - self.service_rate:.6g}),"
                " 服务过程必须有负漂移"
            )

    @property
    def dim(self) -> int:
        return self.input.dim

    @property
    def is_unit_fluid(self) -> bool:
        """服务速率为 1 且无布朗项 (gated 的前提)"""
        return self.service_rate == 1.0 and self.brownian_sd == 0.0

    def exponent(self, u: np.ndarray) -> float:
        ui = float(u[self.queue_index])
        return (
            self.input.exponent(u)
            - self.service_rate * ui
            - 0.5 * self.brownian_sd**2 * ui * ui
        )

    def own_partial(self, u: np.ndarray) -> float:
        """∂φ^A/∂u_i"""
        ui = float(u[self.queue_index])
        return (
            float(self.input.gradient(u)[self.queue_index])
            - self.service_rate
            - self.brownian_sd**2 * ui
        )

    def mean_rate(self) -> np.ndarray:
        rate = self.input.mean_rate()
        rate[self.queue_index] -= self.service_rate
        return rate

    def velocity(self) -> np.ndarray:
        """两次跳跃之间的确定性斜率"""
        v = np.array(self.input.drift, dtype=float)
        v[self.queue_index] -= self.service_rate
        return v

    def permuted(self, order: Sequence[int]) -> "ServedProcessSpec":
        return ServedProcessSpec(
            input=self.input.permuted(order),
            queue_index=list(order).index(self.queue_index),
            service_rate=self.service_rate,
            brownian_sd=self.brownian_sd,
        )


@dataclass(frozen=True)
class SwitchSpec:
    """切换时间分布及切换期间的输入 (缺省为全局输入)"""

    kind: str
    mean: float
    input: SubordinatorSpec
    stages: int = 1

    def __post_init__(self):
        if self.kind not in DURATION_KINDS:
            raise ModelValidationError(f"未知的切换时间分布: {self.kind}")
        if not (self.mean > 0.0 and math.isfinite(self.mean)):
            raise ModelValidationError(f"切换时间均值必须为有限正数: {self.mean}")
        if self.kind == "erlang" and self.stages < 1:
            raise ModelValidationError(f"erlang 阶数必须 >= 1: {self.stages}")

    def log_lst(self, s: float) -> float:
        if self.kind == "deterministic":
            return -self.mean * s
        if self.kind == "exponential":
            return -math.log1p(self.mean * s)
        return -self.stages * math.log1p(self.mean * s / self.stages)

    def lst(self, s: float) -> float:
        return math.exp(self.log_lst(s))

    def mean_ratio(self, s: float) -> float:
        """(1 - S(s)) / s, s -> 0 时取极限 E S"""
        if s <= 0.0:
            return self.mean
        if self.kind == "exponential":
            return self.mean / (1.0 + self.mean * s)
        return -math.expm1(self.log_lst(s)) / s

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "deterministic":
            return self.mean
        if self.kind == "exponential":
            return float(rng.exponential(self.mean))
        return float(rng.gamma(self.stages, self.mean / self.stages))

    def permuted(self, order: Sequence[int]) -> "SwitchSpec":
        return SwitchSpec(self.kind, self.mean, self.input.permuted(order), self.stages)


def phi_eval(spec: SubordinatorSpec, u: Sequence[float]) -> float:
    """子过程的 Laplace 指数 φ(u)"""
    return spec.exponent(as_point(u, spec.dim))


def phi_A_eval(spec: ServedProcessSpec, u: Sequence[float]) -> float:
    """被服务过程的 Laplace 指数 φ_i^A(u), 可为负"""
    return spec.exponent(as_point(u, spec.dim))


def mean_rate(spec: Union[SubordinatorSpec, ServedProcessSpec]) -> np.ndarray:
    """指数在 0 处的解析梯度"""
    return spec.mean_rate()


def switch_lst(spec: SwitchSpec, s: float) -> float:
    if s < 0.0 or math.isnan(s):
        raise DomainError(f"LST 参数必须非负: s={s}")
    return spec.lst(s)


def sample_increment(
    spec: SubordinatorSpec, horizon: float, rng: np.random.Generator
) -> Tuple[np.ndarray, List[JumpEvent]]:
    """[0, horizon] 上的精确增量及按时间排序的跳跃事件"""
    if horizon < 0.0:
        raise DomainError(f"horizon 必须非负: {horizon}")
    increment = np.asarray(spec.drift, dtype=float) * horizon
    events: List[JumpEvent] = []
    if horizon == 0.0 or not spec.components:
        return increment, events
    count = int(rng.poisson(spec.total_rate * horizon))
    for time in np.sort(rng.uniform(0.0, horizon, size=count)):
        vector = spec.draw_jump(rng)
        increment += vector
        events.append(JumpEvent(float(time), vector))
    return increment, events
