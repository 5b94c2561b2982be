# tests/__init__.py
"""
测试包初始化文件
"""
import os
import sys

SRC_DIR = os.path.join(os.path.dirname(__file__), '..', 'src')
if SRC_DIR not in sys.path:
    sys.path.append(SRC_DIR)
