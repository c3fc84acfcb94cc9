"""
Debug 会话记录：滤波步骤、决策点、评估单元、基准结果与错误，结束时写成 JSON
"""

import os
import platform
import sys
from collections import Counter
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import orjson

CATEGORIES = ("filter_steps", "decisions", "evaluations", "benchmarks", "errors")
STATUS_ICONS = {"completed": "✅", "running": "🔄", "failed": "❌"}
JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def _json_default(obj: Any) -> Any:
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return str(obj)


class DebugLogger:
    """Debug日志记录器，未启用时所有 log_* 调用都直接返回"""

    def __init__(self, enabled: bool = False, output_dir: str = "debug_logs"):
        self.enabled = False
        self.output_dir = Path(output_dir)
        self.current_session: Optional[str] = None
        self.session_data: Dict[str, Any] = self._empty_session()
        if enabled:
            self.enable(output_dir)

    @staticmethod
    def _empty_session() -> Dict[str, Any]:
        data: Dict[str, Any] = {"session_info": {}}
        data.update({name: [] for name in CATEGORIES})
        return data

    def enable(self, output_dir: str = "debug_logs"):
        """启用debug模式，首次启用时创建会话"""
        self.enabled = True
        self.output_dir = Path(output_dir)
        if self.current_session:
            return

        self.output_dir.mkdir(parents=True, exist_ok=True)
        started = datetime.now()
        self.current_session = f"debug_session_{started:%Y%m%d_%H%M%S}_{os.getpid()}"
        self.session_data["session_info"] = {
            "session_id": self.current_session,
            "start_time": started.isoformat(),
            "python_version": sys.version.split()[0],
            "platform": platform.platform(),
        }
        print(f"🐛 Debug模式已启用 - 会话ID: {self.current_session}", file=sys.stderr)

    def _append(self, category: str, entry: Dict[str, Any], console: str):
        entry = {"timestamp": datetime.now().isoformat(), **entry}
        self.session_data[category].append(entry)
        print(f"🐛 {console}", file=sys.stderr)

    def log_filter_step(self,
                        name: str,
                        status: str,
                        tick: Optional[int] = None,
                        data: Optional[Dict[str, Any]] = None,
                        duration: Optional[float] = None):
        """记录交互的开始/结束以及每次带观测的更新"""
        if not self.enabled:
            return

        line = f"{STATUS_ICONS.get(status, '❓')} {name}"
        if tick is not None:
            line += f" @tick {tick}"
        if duration is not None:
            line += f" [{duration * 1e3:.3f}ms]"
        self._append("filter_steps", {
            "step_name": name,
            "step_status": status,
            "tick": tick,
            "duration": duration,
            "summary": summarize(data) if data else None,
        }, line)

    def log_decision(self, kind: str, condition: str, result: str, context: Optional[Dict[str, Any]] = None):
        """先验模式、GMM 分量数、GMM 回退、重采样"""
        if not self.enabled:
            return
        self._append("decisions", {
            "decision_type": kind,
            "condition": condition,
            "result": result,
            "context": context or {},
        }, f"🤔 {kind}: {condition} → {result}")

    def log_evaluation(self, method: str, subset: Sequence[str], fraction: float, result: Dict[str, Any]):
        if not self.enabled:
            return
        self._append("evaluations", {
            "method": method,
            "subset": list(subset),
            "fraction": fraction,
            "result": result,
        }, f"🎯 {method} {'+'.join(subset)} @{fraction:.2f}")

    def log_benchmark(self, name: str, result: Dict[str, Any]):
        if not self.enabled:
            return
        self._append("benchmarks", {"name": name, "result": result}, f"⏱️ {name}")

    def log_error(self,
                  error_type: str,
                  error_message: str,
                  context: Optional[Dict[str, Any]] = None,
                  stacktrace: Optional[str] = None):
        if not self.enabled:
            return
        self._append("errors", {
            "error_type": error_type,
            "error_message": error_message,
            "context": context or {},
            "stacktrace": stacktrace,
        }, f"❌ {error_type}: {error_message[:80]}")

    def get_session_summary(self) -> Dict[str, Any]:
        """按类型统计的会话摘要；未启用时为空字典"""
        if not self.enabled:
            return {}

        steps = self.session_data["filter_steps"]
        decisions = self.session_data["decisions"]
        errors = self.session_data["errors"]
        statuses = Counter(s["step_status"] for s in steps)
        return {
            "session_id": self.current_session,
            "session_duration": sum(s["duration"] or 0.0 for s in steps),
            "filter_steps": {
                "total": len(steps),
                "completed": statuses["completed"],
                "failed": statuses["failed"],
                "by_name": _count(steps, "step_name"),
            },
            "decisions": {
                "total": len(decisions),
                "by_type": _count(decisions, "decision_type"),
                "by_result": _count(decisions, "result"),
            },
            "evaluations": len(self.session_data["evaluations"]),
            "benchmarks": [b["name"] for b in self.session_data["benchmarks"]],
            "errors": {"total": len(errors), "by_type": _count(errors, "error_type")},
        }

    def save_now(self) -> Optional[Path]:
        """写出 <session>.json 与 <session>_summary.json，返回前者路径"""
        if not self.enabled or not self.current_session:
            return None

        self.session_data["session_info"]["end_time"] = datetime.now().isoformat()
        output_file = self.output_dir / f"{self.current_session}.json"
        summary_file = self.output_dir / f"{self.current_session}_summary.json"
        try:
            output_file.write_bytes(orjson.dumps(self.session_data, option=JSON_OPTIONS, default=_json_default))
            summary_file.write_bytes(orjson.dumps(self.get_session_summary(), option=JSON_OPTIONS, default=_json_default))
        except (OSError, TypeError) as e:
            print(f"🐛 保存debug数据失败: {e}", file=sys.stderr)
            return None

        print(f"🐛 Debug数据已保存到: {output_file}", file=sys.stderr)
        return output_file


def _count(items: List[Dict[str, Any]], field: str) -> Dict[str, int]:
    return dict(Counter(str(item.get(field, "unknown")) for item in items))


def summarize(data: Dict[str, Any]) -> Dict[str, Any]:
    """数组只留形状，长字符串截断，容器只留长度"""
    summary = {}
    for key, value in data.items():
        if hasattr(value, "shape"):
            summary[key] = f"array{tuple(value.shape)}"
        elif isinstance(value, str):
            summary[key] = value if len(value) <= 100 else value[:100] + "..."
        elif isinstance(value, (list, tuple, dict)):
            summary[key] = f"{type(value).__name__}[{len(value)}]"
        elif isinstance(value, (int, float, bool)) or value is None:
            summary[key] = value
        else:
            summary[key] = str(value)[:50]
    return summary


# 全局debug实例
debug_logger = DebugLogger()


def enable_debug(output_dir: str = "debug_logs"):
    """启用全局debug模式"""
    debug_logger.enable(output_dir)


def get_debug_logger() -> DebugLogger:
    return debug_logger
