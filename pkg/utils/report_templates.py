"""
报告文本模板
评估表格、缩放报告、集合大小曲线与训练摘要的文本渲染
"""

from typing import Dict, List, Sequence

import numpy as np

from utils.helpers import format_subset, format_time_duration


def _format_mean_se(mean: float, se: float) -> str:
    if np.isnan(mean):
        return "-"
    return f"{mean:.4f} ± {se:.4f}"


class ReportTemplates:
    """报告模板管理类"""

    @staticmethod
    def evaluation_table(report) -> str:
        """方法 × 模态子集 × 观测比例 的对齐表格"""
        headers = ["method", "subset", "observed", "joint MSE", f"{report.target_modality} MAE", "update"]
        rows: List[List[str]] = []
        for cell in report.cells:
            latency = cell.latency_summary()
            rows.append([
                cell.method,
                format_subset(cell.subset),
                f"{cell.fraction:.0%}",
                _format_mean_se(cell.joint_mse_mean, cell.joint_mse_se),
                _format_mean_se(cell.target_mae_mean, cell.target_mae_se),
                format_time_duration(latency["median"]) if latency.get("count") else "-",
            ])

        widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
        lines = [
            f"📊 {report.folds}-fold 交叉验证，N = {report.demonstrations}，seed = {report.seed}",
            "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
            "  ".join("-" * w for w in widths),
        ]
        lines.extend("  ".join(value.ljust(w) for value, w in zip(row, widths)) for row in rows)
        lines.append("joint MSE: 终止时间步受控通道误差平方的均值；± 为折间标准误")
        return "\n".join(lines)

    @staticmethod
    def scaling_summary(report) -> str:
        """运行时间缩放报告"""
        lines = [f"⏱️ {report.method}  E = {report.ensemble_size}"]
        for dim, median, number in zip(report.dims, report.medians, report.repetitions):
            lines.append(f"  n = {dim:>6}  median {format_time_duration(median):>10}  ({number} calls/batch)")
        lines.append(f"  log-log slope: {report.slope:.2f}")
        return "\n".join(lines)

    @staticmethod
    def curve_table(points: Sequence) -> str:
        """精度/耗时 随集合大小"""
        lines = ["📈 E      joint MSE           target MAE   update"]
        for p in points:
            marker = " ⭐" if p.highlighted else ""
            latency = "-" if np.isnan(p.latency_median) else format_time_duration(p.latency_median)
            lines.append(
                f"   {p.ensemble_size:<6} {_format_mean_se(p.joint_mse, p.joint_mse_se):<19} "
                f"{p.target_mae:<12.4f} {latency}{marker}"
            )
        return "\n".join(lines)

    @staticmethod
    def training_summary(model, noise: np.ndarray, demonstrations: int) -> str:
        """每个自由度选中的基函数与 R"""
        noise = np.diag(noise) if np.ndim(noise) == 2 else np.asarray(noise)
        lines = [f"🧩 训练完成: {demonstrations} 次示教，权重维度 B = {model.weight_dimension}"]
        for name, family, r in zip(model.layout.dof_names(), model.families, noise):
            lines.append(f"  {name:<12} {family.describe():<32} R = {r:.3e}")
        return "\n".join(lines)

    @staticmethod
    def ensemble_timing_table(method: str, dim: int, timings: Dict[int, float]) -> str:
        """单次更新耗时随集合大小，附与上一行的比值"""
        lines = [f"⏱️ {method}  n = {dim}"]
        previous = None
        for size, median in timings.items():
            ratio = f"×{median / previous[1]:.2f} vs E = {previous[0]}" if previous else ""
            lines.append(f"  E = {size:>6}  median {format_time_duration(median):>10}  {ratio}".rstrip())
            previous = (size, median)
        return "\n".join(lines)

    @staticmethod
    def sequence_timing_table(lengths: Sequence[int], timings: Dict[str, List[float]]) -> str:
        """整段序列的滤波总耗时，每列一种方法"""
        methods = list(timings)
        lines = ["⏱️ length  " + "  ".join(f"{m:>10}" for m in methods)]
        for i, length in enumerate(lengths):
            lines.append(f"   {length:<6}  " + "  ".join(f"{format_time_duration(timings[m][i]):>10}" for m in methods))
        return "\n".join(lines)
