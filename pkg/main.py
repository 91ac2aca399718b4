"""
foodaccess - 主程序入口。

基于高斯混合模型的食物援助可及性分析命令行工具。
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
