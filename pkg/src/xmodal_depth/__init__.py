"""Xmodal: 信心感知的 RGB → 熱像單目深度蒸餾工具"""

__version__ = "0.1.0"
