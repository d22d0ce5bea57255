"""
共享的参考模型

两队列例子: Q1 输入强度 0.5 的复合泊松 (指数跳跃, 均值 0.4), Q2 强度 1.0 (均值 0.3),
ρ = (0.2, 0.3), 服务速率 1, 切换时间确定为 1。
"""
from typing import Callable, Optional, Sequence

import pytest

from levy_polling.core.disciplines import Discipline, Exhaustive, Gated
from levy_polling.core.levy_model import (
    CompoundComponent,
    JumpSpec,
    ServedProcessSpec,
    SubordinatorSpec,
    SwitchSpec,
)
from levy_polling.core.model import PollingModel, QueueSpec
from levy_polling.services.simulator import SimConfig

ModelFactory = Callable[..., PollingModel]


def cpp_input(rates: Sequence[float], means: Sequence[float]) -> SubordinatorSpec:
    """每个队列一个独立的指数跳跃复合泊松分量"""
    n = len(rates)
    components = tuple(
        CompoundComponent(
            rate=rate,
            jump=JumpSpec("exponential", tuple(1.0 if j == k else 0.0 for j in range(n)), value=mean),
        )
        for k, (rate, mean) in enumerate(zip(rates, means))
    )
    return SubordinatorSpec(drift=(0.0,) * n, components=components)


def build_model(
    spec: SubordinatorSpec,
    disciplines: Sequence[Optional[Discipline]],
    switch_mean: float = 1.0,
    switch_kind: str = "deterministic",
    globally_gated: bool = False,
    brownian_sd: float = 0.0,
    service_rate: float = 1.0,
) -> PollingModel:
    queues = tuple(
        QueueSpec(
            served=ServedProcessSpec(spec, i, service_rate=service_rate, brownian_sd=brownian_sd),
            switch=SwitchSpec(switch_kind, switch_mean, spec),
            discipline=d,
        )
        for i, d in enumerate(disciplines)
    )
    return PollingModel(input=spec, queues=queues, globally_gated=globally_gated)


@pytest.fixture(scope="session")
def example_input() -> SubordinatorSpec:
    return cpp_input([0.5, 1.0], [0.4, 0.3])


@pytest.fixture(scope="session")
def single_input() -> SubordinatorSpec:
    return cpp_input([0.5], [0.4])


@pytest.fixture(scope="session")
def two_queue_exhaustive(example_input) -> PollingModel:
    return build_model(example_input, [Exhaustive(), Exhaustive()])


@pytest.fixture(scope="session")
def two_queue_gated(example_input) -> PollingModel:
    return build_model(example_input, [Gated(), Gated()])


@pytest.fixture(scope="session")
def two_queue_mixed(example_input) -> PollingModel:
    return build_model(example_input, [Exhaustive(), Gated()])


@pytest.fixture(scope="session")
def single_exhaustive(single_input) -> PollingModel:
    return build_model(single_input, [Exhaustive()])


@pytest.fixture(scope="session")
def single_gated(single_input) -> PollingModel:
    return build_model(single_input, [Gated()])


@pytest.fixture(scope="session")
def supercritical_gated() -> PollingModel:
    """跳跃均值乘 3, ρ = 1.5"""
    return build_model(cpp_input([0.5, 1.0], [1.2, 0.9]), [Gated(), Gated()])


@pytest.fixture(scope="session")
def make_model() -> ModelFactory:
    return build_model


@pytest.fixture(scope="session")
def quick_sim() -> SimConfig:
    """测试规模: 16 次重复足以让 delta 方法的标准误可靠"""
    return SimConfig(warmup_cycles=100, measured_cycles=1000, replications=16, base_seed=7)
