"""Rich 終端介面工具"""

import logging
from typing import Any, Dict, Iterable, Mapping

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

console = Console()
err_console = Console(stderr=True)


def setup_logging(verbose: bool = False) -> None:
    """
    安裝 RichHandler（輸出到 stderr）

    Args:
        verbose: True 時層級為 DEBUG，否則為 INFO
    """
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger("xmodal_depth")
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    handler = RichHandler(console=err_console, show_path=verbose, rich_tracebacks=verbose)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.setLevel(level)


def print_success(message: str) -> None:
    """顯示成功訊息"""
    console.print(f"[green]✓[/green] {message}")


def print_error(message: str) -> None:
    """顯示錯誤訊息"""
    err_console.print(f"[red]✗[/red] {message}")


def print_warning(message: str) -> None:
    """顯示警告訊息"""
    console.print(f"[yellow]⚠[/yellow]  {message}")


def print_info(message: str) -> None:
    """顯示資訊訊息"""
    console.print(f"[blue]ℹ[/blue]  {message}")


def print_summary(summary: Mapping[str, Any], title: str = "摘要") -> None:
    """
    以兩欄表格顯示鍵值摘要

    Args:
        summary: 摘要字典（巢狀值直接轉成字串）
        title: 表格標題
    """
    table = Table(title=title)
    table.add_column("項目", style="cyan")
    table.add_column("值", style="white", justify="right")
    for key, value in summary.items():
        text = f"{value:.6g}" if isinstance(value, float) else str(value)
        table.add_row(str(key), text)
    console.print(table)


def print_metrics_table(rows: Iterable[Dict[str, Any]]) -> None:
    """以表格形式顯示指標列（split, method, variant, AbsRel … d3）"""
    table = Table(title="評估指標")
    for column in ("split", "method", "variant"):
        table.add_column(column, style="cyan")
    for column in ("AbsRel", "SqRel", "RMSE", "RMSElog", "d1", "d2", "d3"):
        table.add_column(column, justify="right", style="yellow")
    for row in rows:
        table.add_row(
            str(row["split"]),
            str(row["method"]),
            str(row["variant"]),
            *(f"{row[c]:.4f}" for c in ("AbsRel", "SqRel", "RMSE", "RMSElog", "d1", "d2", "d3")),
        )
    console.print(table)


def print_gradcheck_table(report: Dict[str, Any]) -> None:
    """依檢查名稱彙總梯度檢查結果"""
    grouped: Dict[str, Dict[str, Any]] = {}
    for check in report["checks"]:
        entry = grouped.setdefault(
            check["name"], {"max_rel_error": 0.0, "num_checked": 0, "passed": True}
        )
        entry["max_rel_error"] = max(entry["max_rel_error"], check["max_rel_error"])
        entry["num_checked"] += check["num_checked"]
        entry["passed"] = entry["passed"] and check["passed"]

    table = Table(title="梯度檢查")
    table.add_column("檢查", style="cyan")
    table.add_column("最大相對誤差", justify="right", style="yellow")
    table.add_column("檢查項數", justify="right")
    table.add_column("結果")
    for name, entry in grouped.items():
        status = "[green]✓ 通過[/green]" if entry["passed"] else "[red]✗ 失敗[/red]"
        table.add_row(name, f"{entry['max_rel_error']:.3e}", str(entry["num_checked"]), status)
    console.print(table)


def display_providers_table(providers: Dict[str, Dict[str, Any]]) -> None:
    """
    以表格形式顯示信心 provider 列表

    Args:
        providers: list_all_providers() 的結果
    """
    table = Table(title="信心 Providers")
    table.add_column("名稱", style="cyan")
    table.add_column("需要真值", justify="center")
    table.add_column("配置", justify="center")
    table.add_column("說明", style="white")
    for name, status in providers.items():
        gt = "是" if status.get("requires_ground_truth") else "否"
        valid = "[green]✓[/green]" if status.get("config_valid") else "[red]✗[/red]"
        table.add_row(name, gt, valid, status.get("description", ""))
    console.print(table)
