"""
分支型服务规则及其 Laplace 指数 η_i

规则满足: 到达时队列内工作量 x 在访问期间被替换为 H_i(x), H_i 是 x 的子过程。
"""
import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ModelValidationError
from .levy_model import ServedProcessSpec, as_point
from ..utils.numerics import decreasing_root, forward_gradient

logger = logging.getLogger(__name__)

GATED_REQUIREMENT = "gated requires unit-rate drift service"


class Discipline:
    """服务规则树的节点"""

    kind = ""

    def children(self) -> Iterator["Discipline"]:
        return iter(())

    def walk(self) -> Iterator["Discipline"]:
        yield self
        for child in self.children():
            yield from child.walk()

    def eta(self, served: ServedProcessSpec, u: np.ndarray, atol: float) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Gated(Discipline):
    kind = "gated"

    def eta(self, served: ServedProcessSpec, u: np.ndarray, atol: float) -> float:
        return served.input.exponent(u)


@dataclass(frozen=True)
class Exhaustive(Discipline):
    kind = "exhaustive"

    def eta(self, served: ServedProcessSpec, u: np.ndarray, atol: float) -> float:
        return _psi(served, u, atol)


@dataclass(frozen=True)
class PExhaustive(Discipline):
    """把队列水平从 x 降到 p*x"""

    p: float
    kind = "p_exhaustive"

    def __post_init__(self):
        _check_fraction(self.p)

    def eta(self, served: ServedProcessSpec, u: np.ndarray, atol: float) -> float:
        own = float(u[served.queue_index])
        if self.p == 1.0:
            return own
        return self.p * own + (1.0 - self.p) * _psi(served, u, atol)


@dataclass(frozen=True)
class Mixture(Discipline):
    """比例 p 的工作量按 left 处理, 其余按 right 处理"""

    p: float
    left: Discipline
    right: Discipline
    kind = "mixture"

    def __post_init__(self):
        _check_fraction(self.p)

    def children(self) -> Iterator[Discipline]:
        return iter((self.left, self.right))

    def eta(self, served: ServedProcessSpec, u: np.ndarray, atol: float) -> float:
        return self.p * self.left.eta(served, u, atol) + (1.0 - self.p) * self.right.eta(
            served, u, atol
        )


@dataclass(frozen=True)
class Composition(Discipline):
    """先按 first 服务, 再对剩下的队列水平按 second 服务

    first 留在队列 i 的工作量交给 second, 所以
    η(u) = η_first(u_1, .., η_second(u), .., u_N)。
    """

    first: Discipline
    second: Discipline
    kind = "composition"

    def children(self) -> Iterator[Discipline]:
        return iter((self.first, self.second))

    def eta(self, served: ServedProcessSpec, u: np.ndarray, atol: float) -> float:
        inner = np.array(u, dtype=float)
        inner[served.queue_index] = self.second.eta(served, u, atol)
        return self.first.eta(served, inner, atol)


def _check_fraction(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ModelValidationError(f"p 必须在 [0, 1] 内: {p}")


def validate_discipline(discipline: Discipline, served: ServedProcessSpec) -> None:
    """gated 节点要求该队列服务速率为 1 且无布朗项"""
    if not served.is_unit_fluid and any(isinstance(node, Gated) for node in discipline.walk()):
        raise ModelValidationError(
            f"队列 {served.queue_index}: {GATED_REQUIREMENT}"
            f" (service_rate={served.service_rate}, brownian_sd={served.brownian_sd})"
        )


def _psi(served: ServedProcessSpec, u: np.ndarray, atol: float) -> float:
    i = served.queue_index
    point = np.array(u, dtype=float)
    point[i] = 0.0
    if not np.any(point):
        return 0.0

    def f(theta: float) -> float:
        point[i] = theta
        return served.exponent(point)

    def fprime(theta: float) -> float:
        point[i] = theta
        return served.own_partial(point)

    return decreasing_root(f, fprime, atol=atol)


def psi_solve(served: ServedProcessSpec, u, atol: float = 1e-12) -> float:
    """穷尽服务的替换指数 ψ_i(u): θ -> φ_i^A(u, u_i=θ) 的非负根, 与 u_i 无关"""
    return _psi(served, as_point(u, served.dim), atol)


def eta_eval(discipline: Discipline, served: ServedProcessSpec, u, atol: float = 1e-12) -> float:
    return discipline.eta(served, as_point(u, served.dim), atol)


def eta_gradient_at_zero(
    discipline: Discipline, served: ServedProcessSpec, h: float = 1e-6, atol: float = 1e-12
) -> np.ndarray:
    """∇η_i(0), 即每单位父代产生的各类型后代期望"""
    return forward_gradient(lambda v: discipline.eta(served, v, atol), np.zeros(served.dim), h)


def mean_visit_time_per_unit(
    discipline: Discipline, served: ServedProcessSpec, h: float = 1e-6, atol: float = 1e-12
) -> float:
    """E τ_i(1) = (1 - ∂η_i/∂u_i(0)) / (-E A_i(1))"""
    i = served.queue_index
    own_offspring = float(eta_gradient_at_zero(discipline, served, h, atol)[i])
    drift = float(served.mean_rate()[i])
    visit = (1.0 - own_offspring) / (-drift)
    if visit <= 1e-12:
        raise ModelValidationError(
            f"队列 {i} 的服务规则从不服务 (E τ_i(1) = {visit:.3g})"
        )
    return visit
