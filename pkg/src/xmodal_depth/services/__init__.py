"""服務層模組：檔案格式、報告與信心 providers"""
