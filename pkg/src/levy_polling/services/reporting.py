"""
报告输出: CSV 与 JSON, 数值统一保留 12 位有效数字
"""
import csv
import io
import json
import logging
import math
import sys
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..core.mtjbp import Moments, StabilityReport

logger = logging.getLogger(__name__)


def fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def _round(value: Any) -> Any:
    """把数值递归地转换为 12 位有效数字, 供 JSON 输出"""
    if isinstance(value, dict):
        return {k: _round(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round(v) for v in value]
    if isinstance(value, np.ndarray):
        return _round(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        if not math.isfinite(number):
            return str(number)
        return float(f"{number:.12g}")
    return value


def to_json(data: Dict[str, Any]) -> str:
    return json.dumps(_round(data), indent=2, ensure_ascii=False) + "\n"


def to_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    return buffer.getvalue()


def u_header(size: int) -> List[str]:
    return [f"u_{j + 1}" for j in range(size)]


def u_cells(u: Optional[Sequence[float]], size: int) -> List[Any]:
    if u is None:
        return [None] * size
    return list(u)


def stability_dict(report: StabilityReport) -> Dict[str, Any]:
    return {
        "rate_matrix": report.rate_matrix,
        "rho_A": report.rho_A,
        "mean_matrix": report.mean_matrix,
        "rho_M": report.rho_M,
        "verdict": report.verdict.value,
        "irreducible": report.irreducible,
        "subinvariance": report.subinvariance,
    }


def moments_dict(moments: Moments) -> Dict[str, Any]:
    return {
        "polling_mean": moments.polling_mean,
        "immigration_mean": moments.immigration_mean,
        "own_polling_mean": list(moments.own_polling_mean),
        "visit_times": list(moments.visit_times),
        "switching_means": [list(m) for m in moments.switching_means],
        "cycle_length": moments.cycle_length,
        "cycle_length_balance": moments.cycle_length_balance,
    }


def _matrix_rows(section: str, name: str, matrix: np.ndarray) -> List[List[Any]]:
    return [
        [section, f"{name}[{i + 1}][{j + 1}]", matrix[i, j]]
        for i in range(matrix.shape[0])
        for j in range(matrix.shape[1])
    ]


def _vector_rows(section: str, name: str, values: Sequence[float]) -> List[List[Any]]:
    return [[section, f"{name}[{i + 1}]", v] for i, v in enumerate(values)]


def analysis_csv(report: StabilityReport, moments: Optional[Moments]) -> str:
    """section,key,value 三列"""
    rows: List[List[Any]] = []
    rows += _matrix_rows("stability", "A", report.rate_matrix)
    rows.append(["stability", "rho_A", report.rho_A])
    rows += _matrix_rows("stability", "M", report.mean_matrix)
    rows.append(["stability", "rho_M", report.rho_M])
    rows.append(["stability", "verdict", report.verdict.value])
    rows.append(["stability", "irreducible", report.irreducible])
    rows.append(["stability", "subinvariance", report.subinvariance])
    if moments is not None:
        rows += _vector_rows("moments", "EB", moments.polling_mean)
        rows += _vector_rows("moments", "EG", moments.immigration_mean)
        rows += _vector_rows("moments", "EBii", moments.own_polling_mean)
        rows += _vector_rows("moments", "Etau", moments.visit_times)
        for i, mean in enumerate(moments.switching_means):
            rows += _vector_rows("moments", f"EE{i + 1}", mean)
        rows.append(["moments", "EC", moments.cycle_length])
        if moments.cycle_length_balance is not None:
            rows.append(["moments", "EC_balance", moments.cycle_length_balance])
    return to_csv(["section", "key", "value"], rows)


def write_output(text: str, out_path: Optional[str]) -> None:
    """写到文件, 未指定路径时写到 stdout"""
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logger.info(f"结果已写入 {out_path}")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()
