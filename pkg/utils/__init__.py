"""
eBIP Utils Module
工具函数模块
"""

from .helpers import format_time_duration, parse_name_list
from .report_templates import ReportTemplates

__all__ = [
    "ReportTemplates",
    "format_time_duration",
    "parse_name_list",
]
