"""
轮询模型的数据类型
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

from .disciplines import Discipline, validate_discipline
from .errors import ModelValidationError
from .levy_model import ServedProcessSpec, SubordinatorSpec, SwitchSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tolerances:
    truncation: float = 1e-12
    derivative_step: float = 1e-6
    root_atol: float = 1e-12
    stability_tol: float = 1e-9
    max_terms: int = 10_000

    def __post_init__(self):
        for name in ("truncation", "derivative_step", "root_atol", "stability_tol"):
            if not getattr(self, name) > 0.0:
                raise ModelValidationError(f"tolerances.{name} 必须为正")
        if self.max_terms < 1:
            raise ModelValidationError("tolerances.max_terms 必须 >= 1")


@dataclass(frozen=True)
class QueueSpec:
    served: ServedProcessSpec
    switch: SwitchSpec
    discipline: Optional[Discipline] = None


@dataclass(frozen=True)
class PollingModel:
    """N 个队列的循环轮询系统

    queues[i].served.input 是访问 Q_i 期间的输入, queues[i].switch.input 是
    Q_i 之后切换期间的输入; 二者都等于 input 时就是固定输入模型。
    """

    input: SubordinatorSpec
    queues: Tuple[QueueSpec, ...]
    globally_gated: bool = False
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if not self.queues:
            raise ModelValidationError("至少需要一个队列")
        n = self.size
        if self.input.dim != n:
            raise ModelValidationError(f"输入维度 {self.input.dim} 与队列数 {n} 不一致")
        for i, queue in enumerate(self.queues):
            if queue.served.queue_index != i:
                raise ModelValidationError(f"队列 {i} 的 queue_index 为 {queue.served.queue_index}")
            if queue.served.dim != n or queue.switch.input.dim != n:
                raise ModelValidationError(f"队列 {i} 的输入维度与队列数 {n} 不一致")
            if self.globally_gated:
                if not queue.served.is_unit_fluid:
                    raise ModelValidationError(
                        f"队列 {i}: globally gated requires unit-rate drift service"
                    )
            elif queue.discipline is None:
                raise ModelValidationError(f"队列 {i} 缺少服务规则")
            else:
                validate_discipline(queue.discipline, queue.served)
        if self.globally_gated and self.has_varying_input:
            raise ModelValidationError("globally gated 模型不支持变化输入")
        if all(queue.switch.input.is_zero for queue in self.queues):
            logger.warning("切换期间的总输入恒为 0, 所有平稳变换都等于 1")

    @property
    def size(self) -> int:
        return len(self.queues)

    @property
    def has_varying_input(self) -> bool:
        return any(
            q.served.input != self.input or q.switch.input != self.input for q in self.queues
        )

    @property
    def total_switch_mean(self) -> float:
        return float(sum(q.switch.mean for q in self.queues))

    def rotated(self, start: int) -> "PollingModel":
        """重新编号, 使 Q_start 成为第一个队列"""
        n = self.size
        if not 0 <= start < n:
            raise ModelValidationError(f"队列编号越界: {start}")
        if start == 0:
            return self
        order = rotation_order(n, start)
        return PollingModel(
            input=self.input.permuted(order),
            queues=tuple(
                QueueSpec(
                    served=self.queues[k].served.permuted(order),
                    switch=self.queues[k].switch.permuted(order),
                    discipline=self.queues[k].discipline,
                )
                for k in order
            ),
            globally_gated=self.globally_gated,
            tolerances=self.tolerances,
        )


def rotation_order(size: int, start: int) -> Sequence[int]:
    return [(start + k) % size for k in range(size)]
