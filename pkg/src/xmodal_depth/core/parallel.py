"""執行緒上限偵測與保序的分塊平行處理"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Mapping, Optional, Tuple, TypeVar

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "XMODAL_THREADS"

T = TypeVar("T")


class ThreadPolicy:
    """執行緒政策：從環境變數決定平行度"""

    @staticmethod
    def auto() -> int:
        """自動模式的執行緒數（CPU 核心數）"""
        return max(1, os.cpu_count() or 1)

    @staticmethod
    def detect(environ: Optional[Mapping[str, str]] = None) -> int:
        """
        讀取 XMODAL_THREADS 決定執行緒數

        Args:
            environ: 環境變數對照表（預設為 os.environ）

        Returns:
            執行緒數（≥ 1）；未設定或 0 表示自動
        """
        env = os.environ if environ is None else environ
        raw = env.get(THREADS_ENV_VAR, "").strip()
        if not raw:
            return ThreadPolicy.auto()

        try:
            threads = int(raw)
        except ValueError:
            logger.warning("%s=%r 不是整數，改用自動模式", THREADS_ENV_VAR, raw)
            return ThreadPolicy.auto()

        if threads < 0:
            logger.warning("%s=%d 為負值，改用自動模式", THREADS_ENV_VAR, threads)
            return ThreadPolicy.auto()
        if threads == 0:
            return ThreadPolicy.auto()
        return threads

    @staticmethod
    def resolve(threads: Optional[int]) -> int:
        """明確指定的執行緒數優先，否則讀取環境變數"""
        if threads is None or threads <= 0:
            return ThreadPolicy.detect()
        return threads


def chunk_bounds(n_items: int, n_chunks: int) -> List[Tuple[int, int]]:
    """
    將 [0, n_items) 切成至多 n_chunks 個連續區段

    Returns:
        (start, stop) 列表，依序排列
    """
    if n_items <= 0:
        return []
    n_chunks = max(1, min(n_chunks, n_items))
    base, extra = divmod(n_items, n_chunks)
    bounds = []
    start = 0
    for k in range(n_chunks):
        stop = start + base + (1 if k < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def map_chunks(
    fn: Callable[[int, int], T], n_items: int, threads: Optional[int] = None
) -> List[T]:
    """
    對每個區段呼叫 fn(start, stop)，結果依區段順序回傳

    每個區段只計算互相獨立的逐項結果，因此輸出與執行緒數無關。

    Args:
        fn: 區段處理函式
        n_items: 項目總數
        threads: 執行緒數（None 表示依 XMODAL_THREADS）

    Returns:
        各區段結果列表
    """
    workers = ThreadPolicy.resolve(threads)
    bounds = chunk_bounds(n_items, workers)
    if workers == 1 or len(bounds) <= 1:
        return [fn(start, stop) for start, stop in bounds]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: fn(b[0], b[1]), bounds))
