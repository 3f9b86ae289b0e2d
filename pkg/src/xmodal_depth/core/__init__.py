"""核心功能模組：幾何、影像、loss、指標與執行流程"""
