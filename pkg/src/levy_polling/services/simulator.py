"""
轮询系统的事件驱动 Monte Carlo 模拟

漂移 + 复合泊松输入是精确模拟; 有布朗项时首达时间用 Euler 步长加线性插值, 存在 O(√dt) 偏差。
各次重复 (replication) 在线程中并发运行, 由信号量限制并发数, 结果按编号归并。
"""
import csv
import logging
import math
import threading
from dataclasses import dataclass, field
from itertools import islice
from typing import IO, Any, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..core.disciplines import Composition, Discipline, Exhaustive, Gated, Mixture, PExhaustive
from ..core.errors import ModelValidationError, PreconditionError
from ..core.levy_model import ServedProcessSpec, SubordinatorSpec, as_point, sample_increment
from ..core.model import PollingModel
from ..core.mtjbp import kappa_eval, mean_matrix

logger = logging.getLogger(__name__)

MAX_EVENTS = 10**9
SERIES_THRESHOLD = 1e-3


@dataclass(frozen=True)
class SimConfig:
    warmup_cycles: int = 1000
    measured_cycles: int = 10_000
    replications: int = 32
    base_seed: int = 0
    brownian_step: float = 1e-2
    max_workers: int = 4
    trace_path: Optional[str] = None

    def __post_init__(self):
        if self.warmup_cycles < 0:
            raise ModelValidationError(f"simulation.warmup_cycles 必须非负: {self.warmup_cycles}")
        if self.measured_cycles < 1:
            raise ModelValidationError(f"simulation.measured_cycles 必须 >= 1: {self.measured_cycles}")
        if self.replications < 1:
            raise ModelValidationError(f"simulation.replications 必须 >= 1: {self.replications}")
        if self.base_seed < 0:
            raise ModelValidationError(f"simulation.base_seed 必须非负: {self.base_seed}")
        if not self.brownian_step > 0.0:
            raise ModelValidationError(f"simulation.brownian_step 必须为正: {self.brownian_step}")
        if self.max_workers < 1:
            raise ModelValidationError(f"simulation.max_workers 必须 >= 1: {self.max_workers}")

    def replication_rngs(self) -> List[np.random.Generator]:
        """每次重复独立的随机流: SeedSequence(base_seed).spawn(R)[r]"""
        children = np.random.SeedSequence(self.base_seed).spawn(self.replications)
        return [np.random.default_rng(child) for child in children]


class Segment(NamedTuple):
    """工作量在 [t_start, t_end] 上线性变化: F(t) = level + velocity * (t - t_start)"""

    phase: str
    t_start: float
    t_end: float
    level: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class CycleTrace:
    index: int
    polling: Tuple[np.ndarray, ...]
    switching: Tuple[np.ndarray, ...]
    length: float
    visits: Tuple[float, ...]
    switches: Tuple[float, ...]
    segments: Tuple[Segment, ...] = ()

    @property
    def start(self) -> np.ndarray:
        return self.polling[0]


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    stderr: float
    n: int

    def z_score(self, target: float) -> float:
        if self.stderr > 0.0:
            return (self.mean - target) / self.stderr
        return 0.0 if abs(self.mean - target) <= 1e-12 else math.inf


class _CycleRunner:
    """单次重复的模拟状态: 当前工作量向量、时间、本周期的分段"""

    def __init__(self, size: int, rng: np.random.Generator, brownian_step: float = 1e-2):
        self.rng = rng
        self.dt = brownian_step
        self.level = np.zeros(size)
        self.time = 0.0
        self.segments: List[Segment] = []
        self.events = 0

    def _move(self, phase: str, duration: float, velocity: np.ndarray) -> None:
        if duration <= 0.0:
            return
        self.segments.append(
            Segment(phase, self.time, self.time + duration, self.level.copy(), velocity)
        )
        self.level = np.maximum(self.level + velocity * duration, 0.0)
        self.time += duration

    def _jump(self, vector: np.ndarray) -> None:
        self.level = self.level + vector
        self.events += 1
        if self.events > MAX_EVENTS:
            raise PreconditionError(f"事件数超过 {MAX_EVENTS}, 请检查服务过程的漂移配置")

    def advance(self, spec: SubordinatorSpec, velocity: np.ndarray, duration: float, phase: str) -> None:
        """固定时长推进, 跳跃来自 spec"""
        _, events = sample_increment(spec, duration, self.rng)
        elapsed = 0.0
        for event in events:
            self._move(phase, event.time - elapsed, velocity)
            self._jump(event.vector)
            elapsed = event.time
        self._move(phase, duration - elapsed, velocity)

    def first_passage(self, served: ServedProcessSpec, target: float, phase: str) -> None:
        """推进被服务过程直到 F_i 降到 target"""
        i = served.queue_index
        if self.level[i] <= target:
            self.level[i] = target
            return
        if served.brownian_sd > 0.0:
            self._brownian_passage(served, target, phase)
            return

        velocity = served.velocity()
        slope = -velocity[i]
        rate = served.input.total_rate
        while True:
            hit = (self.level[i] - target) / slope
            wait = self.rng.exponential(1.0 / rate) if rate > 0.0 else math.inf
            if wait >= hit:
                self._move(phase, hit, velocity)
                self.level[i] = target
                return
            self._move(phase, wait, velocity)
            self._jump(served.input.draw_jump(self.rng))

    def _brownian_passage(self, served: ServedProcessSpec, target: float, phase: str) -> None:
        i = served.queue_index
        drift = served.velocity()
        sd = served.brownian_sd
        rate = served.input.total_rate
        next_jump = self.rng.exponential(1.0 / rate) if rate > 0.0 else math.inf
        while True:
            h = min(self.dt, next_jump)
            step = drift * h
            step[i] += sd * math.sqrt(h) * self.rng.standard_normal()
            reached = self.level[i] + step[i]
            if reached <= target:
                fraction = (self.level[i] - target) / (self.level[i] - reached)
                self._move(phase, fraction * h, step / h)
                self.level[i] = target
                return
            self._move(phase, h, step / h)
            next_jump -= h
            if next_jump <= 0.0:
                self._jump(served.input.draw_jump(self.rng))
                next_jump = self.rng.exponential(1.0 / rate)

    def serve(
        self,
        discipline: Discipline,
        served: ServedProcessSpec,
        amount: float,
        offset: float,
        phase: str,
    ) -> float:
        """按规则处理队列中 offset 之上的 amount 工作量, 返回留在 offset 之上的工作量"""
        i = served.queue_index
        if isinstance(discipline, Gated):
            self.advance(served.input, served.velocity(), amount, phase)
            return max(float(self.level[i]) - offset, 0.0)
        if isinstance(discipline, Exhaustive):
            self.first_passage(served, offset, phase)
            return 0.0
        if isinstance(discipline, PExhaustive):
            keep = discipline.p * amount
            self.first_passage(served, offset + keep, phase)
            return keep
        if isinstance(discipline, Mixture):
            left = discipline.p * amount
            right = amount - left
            a = self.serve(discipline.left, served, left, offset + right, phase)
            b = self.serve(discipline.right, served, right, offset + a, phase)
            return a + b
        if isinstance(discipline, Composition):
            rest = self.serve(discipline.first, served, amount, offset, phase)
            return self.serve(discipline.second, served, rest, offset, phase)
        raise ModelValidationError(f"未知的服务规则: {discipline.kind}")

    def cycle(self, model: PollingModel, index: int) -> CycleTrace:
        self.segments = []
        start_time = self.time
        marked = self.level.copy()
        polling, switching, visits, switches = [], [], [], []
        for i, queue in enumerate(model.queues):
            polling.append(self.level.copy())
            visit_start = self.time
            phase = f"visit{i + 1}"
            if model.globally_gated:
                self.advance(queue.served.input, queue.served.velocity(), float(marked[i]), phase)
            else:
                self.serve(queue.discipline, queue.served, float(self.level[i]), 0.0, phase)
            visits.append(self.time - visit_start)
            switching.append(self.level.copy())

            duration = queue.switch.sample(self.rng)
            drift = np.asarray(queue.switch.input.drift, dtype=float)
            self.advance(queue.switch.input, drift, duration, f"switch{i + 1}")
            switches.append(duration)
        return CycleTrace(
            index=index,
            polling=tuple(polling),
            switching=tuple(switching),
            length=self.time - start_time,
            visits=tuple(visits),
            switches=tuple(switches),
            segments=tuple(self.segments),
        )


def busy_period_sample(
    served: ServedProcessSpec,
    x: float,
    rng: np.random.Generator,
    brownian_step: float = 1e-2,
) -> Tuple[float, np.ndarray]:
    """T_i(x) 与 [0, T] 内其他队列累积的输入 (第 i 个分量为 0)"""
    if x < 0.0:
        raise ModelValidationError(f"x 必须非负: {x}")
    runner = _CycleRunner(served.dim, rng, brownian_step)
    runner.level[served.queue_index] = x
    runner.first_passage(served, 0.0, "busy")
    runner.level[served.queue_index] = 0.0
    return runner.time, runner.level


def run_cycles(
    model: PollingModel, cfg: SimConfig, rng: np.random.Generator
) -> Iterator[CycleTrace]:
    """从空系统开始无限产生周期记录, 不要求模型稳定"""
    runner = _CycleRunner(model.size, rng, cfg.brownian_step)
    index = 0
    while True:
        yield runner.cycle(model, index)
        index += 1


def segment_integrals(segments: Sequence[Segment], points: np.ndarray) -> np.ndarray:
    """对每个 u 计算 Σ ∫ e^{-u·F(t)} dt, 分段线性时有闭式解"""
    if not segments or points.shape[0] == 0:
        return np.zeros(points.shape[0])
    levels = np.array([s.level for s in segments])
    velocities = np.array([s.velocity for s in segments])
    durations = np.array([s.t_end - s.t_start for s in segments])[:, None]
    a = levels @ points.T
    w = velocities @ points.T
    wd = w * durations
    small = np.abs(wd) < SERIES_THRESHOLD
    safe_w = np.where(small, 1.0, w)
    exact = (np.exp(-a) - np.exp(-(a + wd))) / safe_w
    series = np.exp(-a) * durations * (1.0 - wd / 2.0 + wd * wd / 6.0)
    return np.where(small, series, exact).sum(axis=0)


@dataclass
class ReplicationTally:
    """一次重复中测量期各统计量的累加和"""

    cycles: int
    points: int
    size: int
    cycle_length: float = 0.0
    polling: np.ndarray = field(init=False)
    switching: np.ndarray = field(init=False)
    area: np.ndarray = field(init=False)
    branching: np.ndarray = field(init=False)
    pairs: int = 0
    own_polling: np.ndarray = field(init=False)
    immigration: np.ndarray = field(init=False)

    def __post_init__(self):
        self.polling = np.zeros((self.points, self.size))
        self.switching = np.zeros((self.points, self.size))
        self.area = np.zeros(self.points)
        self.branching = np.zeros(self.points)
        self.own_polling = np.zeros(self.size)
        self.immigration = np.zeros(self.size)


@dataclass
class SimulationResult:
    points: np.ndarray
    tallies: List[ReplicationTally]

    @property
    def replications(self) -> int:
        return len(self.tallies)

    def _batch(self, values: Sequence[float]) -> SimEstimate:
        arr = np.asarray(values, dtype=float)
        if arr.size == 0:
            return SimEstimate(math.nan, math.nan, 0)
        if arr.size < 2:
            return SimEstimate(float(arr.mean()), math.nan, int(arr.size))
        return SimEstimate(float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size)), int(arr.size))

    def polling_transform(self, i: int, k: int) -> SimEstimate:
        return self._batch([t.polling[k, i] / t.cycles for t in self.tallies])

    def switching_transform(self, i: int, k: int) -> SimEstimate:
        return self._batch([t.switching[k, i] / t.cycles for t in self.tallies])

    def branching_identity(self, k: int) -> SimEstimate:
        return self._batch([t.branching[k] / t.pairs for t in self.tallies if t.pairs])

    def cycle_length(self) -> SimEstimate:
        return self._batch([t.cycle_length / t.cycles for t in self.tallies])

    def polling_mean(self, i: int) -> SimEstimate:
        return self._batch([t.own_polling[i] / t.cycles for t in self.tallies])

    def immigration_mean(self, j: int) -> SimEstimate:
        """每周期移民量 B^{n+1} - M^T B^n 的均值, 应等于 E G"""
        return self._batch([t.immigration[j] / t.pairs for t in self.tallies if t.pairs])

    def arbitrary_epoch(self, k: int) -> SimEstimate:
        """比率估计 Σ面积 / Σ周期长度, 标准误用 delta 方法"""
        r = self.replications
        if not np.any(self.points[k]):
            return SimEstimate(1.0, 0.0, r)
        areas = np.array([t.area[k] for t in self.tallies])
        lengths = np.array([t.cycle_length for t in self.tallies])
        ratio = float(areas.sum() / lengths.sum())
        if r < 2:
            return SimEstimate(ratio, math.nan, r)
        residual = areas - ratio * lengths
        stderr = math.sqrt(float(np.sum(residual**2)) / (r - 1)) / (math.sqrt(r) * lengths.mean())
        return SimEstimate(ratio, stderr, r)


class SimulationService:
    """并发运行多次重复并汇总统计量"""

    def __init__(self, model: PollingModel, config: Optional[SimConfig] = None):
        self.model = model
        self.config = config or SimConfig()
        self._semaphore = threading.Semaphore(self.config.max_workers)
        if any(q.served.brownian_sd > 0.0 for q in model.queues):
            logger.warning(
                f"存在布朗服务项, 首达时间用 Euler 步长 {self.config.brownian_step} 近似, 结果有偏"
            )

    def run(self, points: Sequence[Sequence[float]] = ()) -> SimulationResult:
        grid = np.array([as_point(u, self.model.size) for u in points]).reshape(-1, self.model.size)
        kappas = np.array([kappa_eval(self.model, u) for u in grid]).reshape(-1, self.model.size)
        offspring = mean_matrix(self.model)
        rngs = self.config.replication_rngs()
        tallies: List[Optional[ReplicationTally]] = [None] * len(rngs)
        errors: List[BaseException] = []

        logger.info(
            f"开始模拟: {len(rngs)} 次重复, 每次 {self.config.warmup_cycles} 预热 +"
            f" {self.config.measured_cycles} 测量周期"
        )
        threads = []
        for index, rng in enumerate(rngs):
            thread = threading.Thread(
                target=self._replication_thread,
                args=(index, rng, grid, kappas, offspring, tallies, errors),
                daemon=True,
            )
            threads.append(thread)
            thread.start()

        for thread in threads:
            thread.join()

        if errors:
            raise errors[0]
        logger.info("模拟完成")
        return SimulationResult(grid, [t for t in tallies if t is not None])

    def _replication_thread(
        self,
        index: int,
        rng: np.random.Generator,
        grid: np.ndarray,
        kappas: np.ndarray,
        offspring: np.ndarray,
        tallies: List[Optional[ReplicationTally]],
        errors: List[BaseException],
    ) -> None:
        """在线程中运行一次重复"""
        with self._semaphore:
            try:
                trace_file = None
                if index == 0 and self.config.trace_path:
                    trace_file = open(self.config.trace_path, "w", newline="", encoding="utf-8")
                try:
                    tallies[index] = self._replicate(rng, grid, kappas, offspring, trace_file)
                finally:
                    if trace_file is not None:
                        trace_file.close()
                logger.debug(f"重复 {index} 完成")
            except Exception as e:
                logger.error(f"重复 {index} 异常: {e}")
                errors.append(e)

    def _replicate(
        self,
        rng: np.random.Generator,
        grid: np.ndarray,
        kappas: np.ndarray,
        offspring: np.ndarray,
        trace_file: Optional[IO[str]],
    ) -> ReplicationTally:
        cfg = self.config
        size = self.model.size
        tally = ReplicationTally(cfg.measured_cycles, grid.shape[0], size)
        writer = _trace_writer(trace_file, size) if trace_file is not None else None
        previous: Optional[np.ndarray] = None
        total = cfg.warmup_cycles + cfg.measured_cycles
        for trace in islice(run_cycles(self.model, cfg, rng), total):
            if writer is not None:
                _write_trace(writer, trace)
            start = trace.start
            if trace.index >= cfg.warmup_cycles:
                polling = np.array(trace.polling)
                switching = np.array(trace.switching)
                tally.cycle_length += trace.length
                tally.own_polling += np.diag(polling)
                tally.polling += np.exp(-grid @ polling.T)
                tally.switching += np.exp(-grid @ switching.T)
                tally.area += segment_integrals(trace.segments, grid)
                if previous is not None:
                    tally.branching += np.exp(-grid @ start + kappas @ previous)
                    tally.immigration += start - offspring.T @ previous
                    tally.pairs += 1
            previous = start
        return tally


def _trace_writer(handle: IO[str], size: int) -> Any:
    writer = csv.writer(handle)
    writer.writerow(
        ["cycle", "phase", "t_start", "t_end"]
        + [f"F_{j + 1}" for j in range(size)]
        + [f"v_{j + 1}" for j in range(size)]
    )
    return writer


def _write_trace(writer: Any, trace: CycleTrace) -> None:
    for segment in trace.segments:
        writer.writerow(
            [trace.index, segment.phase, f"{segment.t_start:.12g}", f"{segment.t_end:.12g}"]
            + [f"{x:.12g}" for x in segment.level]
            + [f"{x:.12g}" for x in segment.velocity]
        )


def estimate_embedded_transform(
    model: PollingModel, i: int, u: Sequence[float], cfg: SimConfig, epoch: str = "polling"
) -> SimEstimate:
    """E e^{-u·B_i} (epoch='polling') 或 E e^{-u·E_i} (epoch='switching')"""
    if epoch not in ("polling", "switching"):
        raise ValueError(f"未知的嵌入时刻: {epoch}")
    result = SimulationService(model, cfg).run([u])
    if epoch == "polling":
        return result.polling_transform(i, 0)
    return result.switching_transform(i, 0)


def estimate_arbitrary_epoch(model: PollingModel, u: Sequence[float], cfg: SimConfig) -> SimEstimate:
    if not np.any(as_point(u, model.size)):
        return SimEstimate(1.0, 0.0, cfg.replications)
    return SimulationService(model, cfg).run([u]).arbitrary_epoch(0)


def estimate_branching_identity(
    model: PollingModel, u: Sequence[float], cfg: SimConfig
) -> SimEstimate:
    """E[e^{-u·B^{n+1} + B^n·κ(u)}], 应等于 G(u)"""
    return SimulationService(model, cfg).run([u]).branching_identity(0)


def estimate_cycle_length(model: PollingModel, cfg: SimConfig) -> SimEstimate:
    return SimulationService(model, cfg).run().cycle_length()


def estimate_polling_mean(model: PollingModel, i: int, cfg: SimConfig) -> SimEstimate:
    """E B_{i,i}: Q_i 轮询时刻自身的平均工作量"""
    return SimulationService(model, cfg).run().polling_mean(i)


def estimate_immigration_mean(model: PollingModel, cfg: SimConfig) -> Tuple[SimEstimate, ...]:
    """逐周期移民量的均值向量, 与 stationary_mean_at_polling(model).immigration 对照"""
    result = SimulationService(model, cfg).run()
    return tuple(result.immigration_mean(j) for j in range(model.size))


def estimate_busy_period_transform(
    served: ServedProcessSpec, x: float, u: Sequence[float], cfg: SimConfig
) -> SimEstimate:
    """E e^{-u_{-i}·W_{-i}(T_i(x))}, 应等于 e^{-ψ_i(u) x}

    每次重复取 measured_cycles 个忙期样本。
    """
    point = as_point(u, served.dim)
    point[served.queue_index] = 0.0
    means = []
    for rng in cfg.replication_rngs():
        total = 0.0
        for _ in range(cfg.measured_cycles):
            _, work = busy_period_sample(served, x, rng, cfg.brownian_step)
            total += math.exp(-float(point @ work))
        means.append(total / cfg.measured_cycles)
    arr = np.asarray(means)
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else math.nan
    return SimEstimate(float(arr.mean()), stderr, int(arr.size))
