"""
辅助工具函数
耗时格式化与命令行列表解析
"""

from typing import List, Optional, Sequence


def format_time_duration(seconds: float) -> str:
    """格式化时间长度，基准里的单次调用常在微秒级"""
    if seconds < 1e-3:
        return f"{seconds*1e6:.1f}µs"
    elif seconds < 1:
        return f"{seconds*1000:.1f}ms"
    elif seconds < 60:
        return f"{seconds:.1f}s"
    else:
        minutes = seconds // 60
        remaining_seconds = seconds % 60
        return f"{minutes:.0f}m {remaining_seconds:.1f}s"


def parse_name_list(text: Optional[str]) -> Optional[List[str]]:
    """'pose,imu' → ['pose', 'imu']"""
    if text is None:
        return None
    names = [part.strip() for part in text.split(",") if part.strip()]
    return names or None


def parse_number_list(text: Optional[str], cast=float) -> Optional[List]:
    """'0.43,0.82' → [0.43, 0.82]；无法转换时抛出 ValueError"""
    if text is None:
        return None
    return [cast(part) for part in text.split(",") if part.strip()]


def int_list(text: str) -> List[int]:
    """argparse 的 type，'64,128' → [64, 128]"""
    return parse_number_list(text, int)


def format_subset(subset: Sequence[str]) -> str:
    return "+".join(subset)
