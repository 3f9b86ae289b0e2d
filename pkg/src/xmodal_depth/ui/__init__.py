"""UI 模組"""
