"""
配置文档 (JSON, version 1) 的解析、序列化与环境变量覆盖
"""
import itertools
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from typing import Any, Dict, Iterable, List, Optional, Tuple

from .core.disciplines import Composition, Discipline, Exhaustive, Gated, Mixture, PExhaustive
from .core.errors import ConfigError, ModelValidationError
from .core.levy_model import (
    CompoundComponent,
    JumpSpec,
    ServedProcessSpec,
    SubordinatorSpec,
    SwitchSpec,
)
from .core.model import PollingModel, QueueSpec, Tolerances
from .services.simulator import SimConfig

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1
ENV_SEED = "LEVY_POLLING_SEED"
ENV_REPLICATIONS = "LEVY_POLLING_REPLICATIONS"

Vector = Tuple[float, ...]


@dataclass(frozen=True)
class EvaluationPlan:
    """u 点: 显式列表 points, 或各坐标取值的笛卡尔积 grid"""

    points: Tuple[Vector, ...] = ()
    grid: Tuple[Vector, ...] = ()

    def vectors(self) -> List[Vector]:
        if self.grid:
            return [tuple(p) for p in itertools.product(*self.grid)]
        return list(self.points)


@dataclass(frozen=True)
class ConfigDocument:
    model: PollingModel
    simulation: SimConfig = field(default_factory=SimConfig)
    evaluation: EvaluationPlan = field(default_factory=EvaluationPlan)
    version: int = CONFIG_VERSION

    @property
    def tolerances(self) -> Tolerances:
        return self.model.tolerances


def _join(path: str, key: Any) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


def _object(value: Any, path: str, allowed: Iterable[str], required: Iterable[str] = ()) -> Dict[str, Any]:
    if not isinstance(value, dict):
        raise ConfigError("必须是 JSON 对象", path or "<root>")
    unknown = sorted(set(value) - set(allowed))
    if unknown:
        raise ConfigError("未知字段", _join(path, unknown[0]))
    for key in required:
        if key not in value:
            raise ConfigError("缺少必需字段", _join(path, key))
    return value


def _list(value: Any, path: str) -> List[Any]:
    if not isinstance(value, list):
        raise ConfigError("必须是 JSON 数组", path)
    return value


def _number(value: Any, path: str) -> float:
    """接受 JSON 数字或十进制字符串 ("0.4")"""
    if isinstance(value, bool):
        raise ConfigError(f"需要数字, 实际为 {value!r}", path)
    if isinstance(value, (int, float)):
        result = float(value)
    elif isinstance(value, str):
        try:
            result = float(Decimal(value.strip()))
        except InvalidOperation:
            raise ConfigError(f"无法解析为数字: {value!r}", path)
    else:
        raise ConfigError(f"需要数字, 实际为 {type(value).__name__}", path)
    if not math.isfinite(result):
        raise ConfigError(f"必须是有限数: {value!r}", path)
    return result


def _integer(value: Any, path: str) -> int:
    number = _number(value, path)
    if number != int(number):
        raise ConfigError(f"需要整数: {value!r}", path)
    return int(number)


def _boolean(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"需要布尔值: {value!r}", path)
    return value


def _vector(value: Any, path: str, size: Optional[int] = None) -> Vector:
    items = _list(value, path)
    if size is not None and len(items) != size:
        raise ConfigError(f"长度应为 {size}, 实际为 {len(items)}", path)
    return tuple(_number(x, _join(path, k)) for k, x in enumerate(items))


def _jump(value: Any, path: str, size: int) -> JumpSpec:
    obj = _object(value, path, ("kind", "scale", "value", "points", "weights"), ("kind", "scale"))
    kind = obj["kind"]
    scale = _vector(obj["scale"], _join(path, "scale"), size)
    if kind == "discrete":
        return JumpSpec(
            kind,
            scale,
            points=_vector(obj.get("points", []), _join(path, "points")),
            weights=_vector(obj.get("weights", []), _join(path, "weights")),
        )
    if "value" not in obj:
        raise ConfigError("缺少必需字段", _join(path, "value"))
    return JumpSpec(kind, scale, value=_number(obj["value"], _join(path, "value")))


def _subordinator(value: Any, path: str, size: int) -> SubordinatorSpec:
    obj = _object(value, path, ("drift", "components"))
    drift = _vector(obj.get("drift", [0.0] * size), _join(path, "drift"), size)
    components = []
    for k, item in enumerate(_list(obj.get("components", []), _join(path, "components"))):
        item_path = _join(_join(path, "components"), k)
        comp = _object(item, item_path, ("rate", "jump"), ("rate", "jump"))
        try:
            components.append(
                CompoundComponent(
                    rate=_number(comp["rate"], _join(item_path, "rate")),
                    jump=_jump(comp["jump"], _join(item_path, "jump"), size),
                )
            )
        except ModelValidationError as e:
            raise ConfigError(str(e), item_path) from e
    try:
        return SubordinatorSpec(drift=drift, components=tuple(components))
    except ModelValidationError as e:
        raise ConfigError(str(e), path) from e


def _discipline(value: Any, path: str) -> Discipline:
    if not isinstance(value, dict) or "kind" not in value:
        raise ConfigError("服务规则必须是带 kind 的对象", path)
    kind = value["kind"]
    if kind == "gated":
        _object(value, path, ("kind",))
        return Gated()
    if kind == "exhaustive":
        _object(value, path, ("kind",))
        return Exhaustive()
    if kind == "p_exhaustive":
        obj = _object(value, path, ("kind", "p"), ("p",))
        return PExhaustive(_number(obj["p"], _join(path, "p")))
    if kind == "mixture":
        obj = _object(value, path, ("kind", "p", "left", "right"), ("p", "left", "right"))
        return Mixture(
            _number(obj["p"], _join(path, "p")),
            _discipline(obj["left"], _join(path, "left")),
            _discipline(obj["right"], _join(path, "right")),
        )
    if kind == "composition":
        obj = _object(value, path, ("kind", "first", "second"), ("first", "second"))
        return Composition(
            _discipline(obj["first"], _join(path, "first")),
            _discipline(obj["second"], _join(path, "second")),
        )
    raise ConfigError(f"未知的服务规则: {kind!r}", _join(path, "kind"))


def _switch(value: Any, path: str, size: int, default_input: SubordinatorSpec) -> SwitchSpec:
    obj = _object(value, path, ("kind", "mean", "stages", "input"), ("kind", "mean"))
    switch_input = default_input
    if "input" in obj:
        switch_input = _subordinator(obj["input"], _join(path, "input"), size)
    return SwitchSpec(
        kind=obj["kind"],
        mean=_number(obj["mean"], _join(path, "mean")),
        input=switch_input,
        stages=_integer(obj.get("stages", 1), _join(path, "stages")),
    )


def _model(value: Any, path: str, tolerances: Tolerances) -> PollingModel:
    obj = _object(value, path, ("input", "globally_gated", "queues"), ("input", "queues"))
    queues_raw = _list(obj["queues"], _join(path, "queues"))
    size = len(queues_raw)
    if size == 0:
        raise ConfigError("至少需要一个队列", _join(path, "queues"))
    global_input = _subordinator(obj["input"], _join(path, "input"), size)

    queues = []
    for i, item in enumerate(queues_raw):
        queue_path = _join(_join(path, "queues"), i)
        q = _object(
            item,
            queue_path,
            ("service_rate", "brownian_sd", "discipline", "visit_input", "switch"),
            ("switch",),
        )
        try:
            visit_input = global_input
            if "visit_input" in q:
                visit_input = _subordinator(q["visit_input"], _join(queue_path, "visit_input"), size)
            served = ServedProcessSpec(
                input=visit_input,
                queue_index=i,
                service_rate=_number(q.get("service_rate", 1.0), _join(queue_path, "service_rate")),
                brownian_sd=_number(q.get("brownian_sd", 0.0), _join(queue_path, "brownian_sd")),
            )
            switch = _switch(q["switch"], _join(queue_path, "switch"), size, global_input)
            discipline = None
            if "discipline" in q:
                discipline = _discipline(q["discipline"], _join(queue_path, "discipline"))
        except ModelValidationError as e:
            raise ConfigError(str(e), queue_path) from e
        queues.append(QueueSpec(served=served, switch=switch, discipline=discipline))

    try:
        return PollingModel(
            input=global_input,
            queues=tuple(queues),
            globally_gated=_boolean(obj.get("globally_gated", False), _join(path, "globally_gated")),
            tolerances=tolerances,
        )
    except ModelValidationError as e:
        raise ConfigError(str(e), path) from e


def _tolerances(value: Any, path: str) -> Tolerances:
    obj = _object(
        value,
        path,
        ("truncation", "derivative_step", "root_atol", "stability_tol", "max_terms"),
    )
    defaults = Tolerances()
    try:
        return Tolerances(
            truncation=_number(obj.get("truncation", defaults.truncation), _join(path, "truncation")),
            derivative_step=_number(
                obj.get("derivative_step", defaults.derivative_step), _join(path, "derivative_step")
            ),
            root_atol=_number(obj.get("root_atol", defaults.root_atol), _join(path, "root_atol")),
            stability_tol=_number(
                obj.get("stability_tol", defaults.stability_tol), _join(path, "stability_tol")
            ),
            max_terms=_integer(obj.get("max_terms", defaults.max_terms), _join(path, "max_terms")),
        )
    except ModelValidationError as e:
        raise ConfigError(str(e), path) from e


def _simulation(value: Any, path: str) -> SimConfig:
    keys = (
        "warmup_cycles",
        "measured_cycles",
        "replications",
        "base_seed",
        "brownian_step",
        "max_workers",
        "trace_path",
    )
    obj = _object(value, path, keys)
    defaults = SimConfig()
    trace_path = obj.get("trace_path")
    if trace_path is not None and not isinstance(trace_path, str):
        raise ConfigError("需要字符串路径", _join(path, "trace_path"))
    try:
        return SimConfig(
            warmup_cycles=_integer(obj.get("warmup_cycles", defaults.warmup_cycles), _join(path, "warmup_cycles")),
            measured_cycles=_integer(
                obj.get("measured_cycles", defaults.measured_cycles), _join(path, "measured_cycles")
            ),
            replications=_integer(obj.get("replications", defaults.replications), _join(path, "replications")),
            base_seed=_integer(obj.get("base_seed", defaults.base_seed), _join(path, "base_seed")),
            brownian_step=_number(obj.get("brownian_step", defaults.brownian_step), _join(path, "brownian_step")),
            max_workers=_integer(obj.get("max_workers", defaults.max_workers), _join(path, "max_workers")),
            trace_path=trace_path,
        )
    except ModelValidationError as e:
        raise ConfigError(str(e), path) from e


def _evaluation(value: Any, path: str, size: int) -> EvaluationPlan:
    obj = _object(value, path, ("points", "grid"))
    if "points" in obj and "grid" in obj:
        raise ConfigError("points 与 grid 只能二选一", path)
    if "grid" in obj:
        grid_path = _join(path, "grid")
        axes = _list(obj["grid"], grid_path)
        if len(axes) != size:
            raise ConfigError(f"需要 {size} 个坐标轴, 实际为 {len(axes)}", grid_path)
        grid = tuple(_vector(axis, _join(grid_path, k)) for k, axis in enumerate(axes))
        for k, axis in enumerate(grid):
            if not axis or any(x < 0.0 for x in axis):
                raise ConfigError("坐标取值必须非空且非负", _join(grid_path, k))
        return EvaluationPlan(grid=grid)
    points_path = _join(path, "points")
    points = tuple(
        _vector(p, _join(points_path, k), size)
        for k, p in enumerate(_list(obj.get("points", [[1.0] * size]), points_path))
    )
    for k, point in enumerate(points):
        if any(x < 0.0 for x in point):
            raise ConfigError("u 必须非负", _join(points_path, k))
    return EvaluationPlan(points=points)


def parse_config(text: str) -> ConfigDocument:
    """解析并校验配置文档, 缺省值在此补齐"""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON 解析失败: {e}", "<root>") from e
    obj = _object(raw, "", ("version", "model", "tolerances", "simulation", "evaluation"), ("version", "model"))
    version = _integer(obj["version"], "version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"不支持的版本 {version}, 当前为 {CONFIG_VERSION}", "version")

    tolerances = _tolerances(obj.get("tolerances", {}), "tolerances")
    model = _model(obj["model"], "model", tolerances)
    return ConfigDocument(
        model=model,
        simulation=_simulation(obj.get("simulation", {}), "simulation"),
        evaluation=_evaluation(obj.get("evaluation", {}), "evaluation", model.size),
        version=version,
    )


def _apply_env_overrides(doc: ConfigDocument) -> ConfigDocument:
    """环境变量覆盖配置文件中的 seed 与 replications, 无效值记录警告后忽略"""
    overrides: Dict[str, int] = {}
    for name, key in ((ENV_SEED, "base_seed"), (ENV_REPLICATIONS, "replications")):
        raw = os.environ.get(name)
        if raw is None:
            continue
        try:
            overrides[key] = int(raw)
        except ValueError:
            logger.warning(f"忽略无效的环境变量 {name}={raw!r}")
    if not overrides:
        return doc
    try:
        simulation = replace(doc.simulation, **overrides)
    except ModelValidationError as e:
        logger.warning(f"忽略无效的环境变量覆盖: {e}")
        return doc
    logger.info(f"环境变量覆盖模拟配置: {overrides}")
    return replace(doc, simulation=simulation)


def load_config(config_path: str) -> ConfigDocument:
    """加载配置文件，支持环境变量覆盖"""
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"无法读取配置文件: {e}", config_path) from e
    return _apply_env_overrides(parse_config(text))


def _dump_subordinator(spec: SubordinatorSpec) -> Dict[str, Any]:
    components = []
    for c in spec.components:
        jump: Dict[str, Any] = {"kind": c.jump.kind, "scale": list(c.jump.scale)}
        if c.jump.kind == "discrete":
            jump["points"] = list(c.jump.points)
            jump["weights"] = list(c.jump.weights)
        else:
            jump["value"] = c.jump.value
        components.append({"rate": c.rate, "jump": jump})
    return {"drift": list(spec.drift), "components": components}


def _dump_discipline(discipline: Discipline) -> Dict[str, Any]:
    if isinstance(discipline, PExhaustive):
        return {"kind": discipline.kind, "p": discipline.p}
    if isinstance(discipline, Mixture):
        return {
            "kind": discipline.kind,
            "p": discipline.p,
            "left": _dump_discipline(discipline.left),
            "right": _dump_discipline(discipline.right),
        }
    if isinstance(discipline, Composition):
        return {
            "kind": discipline.kind,
            "first": _dump_discipline(discipline.first),
            "second": _dump_discipline(discipline.second),
        }
    return {"kind": discipline.kind}


def config_to_dict(doc: ConfigDocument) -> Dict[str, Any]:
    model = doc.model
    queues = []
    for q in model.queues:
        entry: Dict[str, Any] = {
            "service_rate": q.served.service_rate,
            "brownian_sd": q.served.brownian_sd,
        }
        if q.discipline is not None:
            entry["discipline"] = _dump_discipline(q.discipline)
        if q.served.input != model.input:
            entry["visit_input"] = _dump_subordinator(q.served.input)
        switch: Dict[str, Any] = {"kind": q.switch.kind, "mean": q.switch.mean, "stages": q.switch.stages}
        if q.switch.input != model.input:
            switch["input"] = _dump_subordinator(q.switch.input)
        entry["switch"] = switch
        queues.append(entry)

    tol = model.tolerances
    sim = doc.simulation
    simulation: Dict[str, Any] = {
        "warmup_cycles": sim.warmup_cycles,
        "measured_cycles": sim.measured_cycles,
        "replications": sim.replications,
        "base_seed": sim.base_seed,
        "brownian_step": sim.brownian_step,
        "max_workers": sim.max_workers,
    }
    if sim.trace_path is not None:
        simulation["trace_path"] = sim.trace_path
    evaluation: Dict[str, Any]
    if doc.evaluation.grid:
        evaluation = {"grid": [list(axis) for axis in doc.evaluation.grid]}
    else:
        evaluation = {"points": [list(p) for p in doc.evaluation.points]}
    return {
        "version": doc.version,
        "model": {
            "input": _dump_subordinator(model.input),
            "globally_gated": model.globally_gated,
            "queues": queues,
        },
        "tolerances": {
            "truncation": tol.truncation,
            "derivative_step": tol.derivative_step,
            "root_atol": tol.root_atol,
            "stability_tol": tol.stability_tol,
            "max_terms": tol.max_terms,
        },
        "simulation": simulation,
        "evaluation": evaluation,
    }


def serialize_config(doc: ConfigDocument) -> str:
    """补齐缺省值后的规范 JSON, parse_config(serialize_config(doc)) == doc"""
    return json.dumps(config_to_dict(doc), indent=2, ensure_ascii=False) + "\n"
