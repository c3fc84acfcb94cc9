#!/usr/bin/env python3
"""
eBIP 启动脚本
检查依赖后把命令行参数交给 app.main
"""

import importlib
import os
import sys

REQUIRED_MODULES = {
    "numpy": "numpy",
    "scipy": "scipy",
    "sklearn": "scikit-learn",
    "filterpy": "filterpy",
    "pandas": "pandas",
    "orjson": "orjson",
    "dotenv": "python-dotenv",
}


def check_dependencies():
    """检查依赖是否已安装"""
    missing = []
    for module, package in REQUIRED_MODULES.items():
        try:
            importlib.import_module(module)
        except ImportError:
            missing.append(package)
    if missing:
        print(f"❌ 缺少依赖: {', '.join(missing)}", file=sys.stderr)
        print("请运行: pip install -r requirements.txt", file=sys.stderr)
        return False
    return True


def main():
    """主函数"""
    if not os.path.exists(os.path.join(os.path.dirname(os.path.abspath(__file__)), "app.py")):
        print("❌ 未找到 app.py 文件", file=sys.stderr)
        return 1

    if not check_dependencies():
        return 1

    sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
    from app import main as app_main

    return app_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
