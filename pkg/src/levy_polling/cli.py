#!/usr/bin/env python3
"""
Levy Polling CLI
"""

import logging
import sys
import traceback
from contextlib import contextmanager
from dataclasses import replace
from enum import Enum
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import typer

from .config import ConfigDocument, load_config
from .core.errors import LevyPollingError, UnstableModelError
from .core.mtjbp import (
    Moments,
    PollingAnalyzer,
    StabilityReport,
    embedded_transforms,
    immigration_lst,
)
from .services.reporting import (
    analysis_csv,
    moments_dict,
    stability_dict,
    to_csv,
    to_json,
    u_cells,
    u_header,
    write_output,
)
from .services.simulator import SimEstimate, SimulationResult, SimulationService

logger = logging.getLogger(__name__)

Z_LIMIT = 4.0
CHAIN_TOL = 1e-9

# Typer应用
app = typer.Typer(help="Levy Polling - Lévy 输入循环轮询系统的稳定性、变换与模拟")


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


def setup_logging(verbose: bool = False):
    """设置日志"""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
        force=True,
    )


def prepare_config(config_path: str, seed: Optional[int] = None) -> ConfigDocument:
    """加载配置; 命令行 --seed 优先于环境变量和配置文件"""
    doc = load_config(config_path)
    if seed is not None:
        doc = replace(doc, simulation=replace(doc.simulation, base_seed=seed))
        logger.info(f"使用命令行种子 {seed}")
    return doc


def cmd_analyze(doc: ConfigDocument, output_format: OutputFormat = OutputFormat.CSV) -> str:
    """稳定性判定, 稳定时附带平稳矩"""
    analyzer = PollingAnalyzer(doc.model)
    report = analyzer.stability()
    moments = analyzer.moments() if analyzer.is_stable() else None
    if moments is None:
        logger.warning(f"模型判定为 {report.verdict.value}, 不输出平稳矩")
    return stability_report(report, moments, output_format)


def stability_report(
    report: StabilityReport,
    moments: Optional[Moments] = None,
    output_format: OutputFormat = OutputFormat.CSV,
) -> str:
    """analyze 的报告格式; transform/validate 拒绝不稳定模型时也输出它"""
    if output_format is OutputFormat.JSON:
        data: Dict[str, Any] = {"stability": stability_dict(report)}
        data["moments"] = moments_dict(moments) if moments is not None else None
        return to_json(data)
    return analysis_csv(report, moments)


def cmd_transform(doc: ConfigDocument, output_format: OutputFormat = OutputFormat.CSV) -> str:
    """每个 (u, 量) 一行: B_i, E_i, 链式右端 chain_i (应等于 B_{i+1}), F"""
    analyzer = PollingAnalyzer(doc.model)
    rows = analyzer.transform_rows(doc.evaluation.vectors())
    if output_format is OutputFormat.JSON:
        return to_json({"transforms": rows})
    size = doc.model.size
    return to_csv(
        u_header(size) + ["quantity", "value", "terms_used"],
        (u_cells(r["u"], size) + [r["quantity"], r["value"], r["terms_used"]] for r in rows),
    )


def _simulated_rows(
    doc: ConfigDocument, result: SimulationResult
) -> List[Tuple[Optional[Sequence[float]], str, SimEstimate]]:
    model = doc.model
    rows: List[Tuple[Optional[Sequence[float]], str, SimEstimate]] = []
    for k, u in enumerate(result.points.tolist()):
        for i in range(model.size):
            rows.append((u, f"B{i + 1}", result.polling_transform(i, k)))
            rows.append((u, f"E{i + 1}", result.switching_transform(i, k)))
        rows.append((u, "F", result.arbitrary_epoch(k)))
        rows.append((u, "G", result.branching_identity(k)))
    rows.append((None, "EC", result.cycle_length()))
    for i in range(model.size):
        rows.append((None, f"EB{i + 1}{i + 1}", result.polling_mean(i)))
    for j in range(model.size):
        rows.append((None, f"EG{j + 1}", result.immigration_mean(j)))
    return rows


def cmd_simulate(doc: ConfigDocument, output_format: OutputFormat = OutputFormat.CSV) -> str:
    """模拟估计每个配置的量, 附标准误"""
    result = SimulationService(doc.model, doc.simulation).run(doc.evaluation.vectors())
    rows = _simulated_rows(doc, result)
    if output_format is OutputFormat.JSON:
        return to_json(
            {
                "estimates": [
                    {"u": u, "quantity": q, "mean": e.mean, "stderr": e.stderr, "n": e.n}
                    for u, q, e in rows
                ]
            }
        )
    size = doc.model.size
    return to_csv(
        u_header(size) + ["quantity", "mean", "stderr", "n"],
        (u_cells(u, size) + [q, e.mean, e.stderr, e.n] for u, q, e in rows),
    )


def validation_rows(doc: ConfigDocument) -> List[Dict[str, Any]]:
    """解析值与模拟值逐项比较; 另加链式恒等式检查"""
    model = doc.model
    analyzer = PollingAnalyzer(model)
    analyzer.require_stable()
    moments = analyzer.moments()
    points = doc.evaluation.vectors()
    result = SimulationService(model, doc.simulation).run(points)

    analytic: Dict[Tuple[Any, str], float] = {}
    for u in result.points.tolist():
        key = tuple(u)
        analytic[(key, "G")] = immigration_lst(model, u)
        if model.globally_gated:
            analytic[(key, "B1")] = analyzer.b1(u)
            continue
        for i in range(model.size):
            polling, switching = embedded_transforms(model, i, u)
            analytic[(key, f"B{i + 1}")] = polling.value
            analytic[(key, f"E{i + 1}")] = switching.value
        analytic[(key, "F")] = analyzer.arbitrary_epoch(u)
    analytic[(None, "EC")] = moments.cycle_length
    for i, own in enumerate(moments.own_polling_mean):
        analytic[(None, f"EB{i + 1}{i + 1}")] = own
    for j, immigration in enumerate(moments.immigration_mean):
        analytic[(None, f"EG{j + 1}")] = float(immigration)

    rows: List[Dict[str, Any]] = []
    for u, quantity, estimate in _simulated_rows(doc, result):
        key = (tuple(u) if u is not None else None, quantity)
        if key not in analytic:
            continue
        z = estimate.z_score(analytic[key])
        rows.append(
            {
                "u": u,
                "quantity": quantity,
                "analytic": analytic[key],
                "mean": estimate.mean,
                "stderr": estimate.stderr,
                "z": z,
                "ok": bool(abs(z) <= Z_LIMIT),
            }
        )

    if not model.globally_gated:
        n = model.size
        for u in result.points.tolist():
            key = tuple(u)
            for i in range(n):
                chain = analyzer.chain(i, u)
                target = analytic[(key, f"B{(i + 1) % n + 1}")]
                rows.append(
                    {
                        "u": u,
                        "quantity": f"chain{i + 1}",
                        "analytic": target,
                        "mean": chain,
                        "stderr": None,
                        "z": None,
                        "ok": bool(abs(chain - target) <= CHAIN_TOL),
                    }
                )
    return rows


def cmd_validate(
    doc: ConfigDocument, output_format: OutputFormat = OutputFormat.CSV
) -> Tuple[str, int]:
    """返回 (报告, 退出码); 所有 |z| <= 4 且恒等式成立时退出码为 0"""
    rows = validation_rows(doc)
    failed = [r for r in rows if not r["ok"]]
    for r in failed:
        logger.warning(
            f"校验失败: u={r['u']} {r['quantity']}"
            f" analytic={r['analytic']:.12g} mean={r['mean']:.12g}"
        )
    passed = not failed
    logger.info(f"校验 {len(rows)} 项, 失败 {len(failed)} 项")

    if output_format is OutputFormat.JSON:
        report = PollingAnalyzer(doc.model).stability()
        text = to_json({"stability": stability_dict(report), "rows": rows, "passed": passed})
    else:
        size = doc.model.size
        text = to_csv(
            u_header(size) + ["quantity", "analytic", "mean", "stderr", "z", "ok"],
            (
                u_cells(r["u"], size)
                + [r["quantity"], r["analytic"], r["mean"], r["stderr"], r["z"], r["ok"]]
                for r in rows
            ),
        )
    return text, 0 if passed else 1


@contextmanager
def _refusal_report(output_format: OutputFormat, out: Optional[str]) -> Iterator[None]:
    """不稳定模型被拒绝时先输出稳定性报告, 再交给 _run 以退出码 2 结束"""
    try:
        yield
    except UnstableModelError as e:
        if e.report is not None:
            write_output(stability_report(e.report, output_format=output_format), out)
        raise


def _run(verbose: bool, action: Callable[[], int]) -> None:
    setup_logging(verbose)
    try:
        code = action()
    except LevyPollingError as e:
        typer.echo(f"错误: {e}", err=True)
        if verbose:
            traceback.print_exc()
        raise typer.Exit(code=2)
    if code:
        raise typer.Exit(code=code)


ConfigOption = typer.Option(..., "--config", "-c", help="配置文件路径")
OutOption = typer.Option(None, "--out", "-o", help="输出文件 (缺省为 stdout)")
SeedOption = typer.Option(None, "--seed", help="随机种子, 覆盖配置与环境变量")
FormatOption = typer.Option(OutputFormat.CSV, "--format", "-f", help="输出格式")
VerboseOption = typer.Option(False, "--verbose", "-v", help="详细输出")


@app.command()
def analyze(
    config: str = ConfigOption,
    out: Optional[str] = OutOption,
    seed: Optional[int] = SeedOption,
    output_format: OutputFormat = FormatOption,
    verbose: bool = VerboseOption,
):
    """稳定性判定与平稳矩"""

    def action() -> int:
        write_output(cmd_analyze(prepare_config(config, seed), output_format), out)
        return 0

    _run(verbose, action)


@app.command()
def transform(
    config: str = ConfigOption,
    out: Optional[str] = OutOption,
    seed: Optional[int] = SeedOption,
    output_format: OutputFormat = FormatOption,
    verbose: bool = VerboseOption,
):
    """计算嵌入时刻与任意时刻的 LST"""

    def action() -> int:
        doc = prepare_config(config, seed)
        with _refusal_report(output_format, out):
            text = cmd_transform(doc, output_format)
        write_output(text, out)
        return 0

    _run(verbose, action)


@app.command()
def simulate(
    config: str = ConfigOption,
    out: Optional[str] = OutOption,
    seed: Optional[int] = SeedOption,
    output_format: OutputFormat = FormatOption,
    verbose: bool = VerboseOption,
):
    """Monte Carlo 估计"""

    def action() -> int:
        write_output(cmd_simulate(prepare_config(config, seed), output_format), out)
        return 0

    _run(verbose, action)


@app.command()
def validate(
    config: str = ConfigOption,
    out: Optional[str] = OutOption,
    seed: Optional[int] = SeedOption,
    output_format: OutputFormat = FormatOption,
    verbose: bool = VerboseOption,
):
    """解析值与模拟值对照, 任一 |z| > 4 或恒等式不成立时退出码为 1"""

    def action() -> int:
        doc = prepare_config(config, seed)
        with _refusal_report(output_format, out):
            text, code = cmd_validate(doc, output_format)
        write_output(text, out)
        return code

    _run(verbose, action)


def main():
    """主函数"""
    app()


if __name__ == '__main__':
    main()
